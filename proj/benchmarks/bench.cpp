// Microbenchmarks for the hot paths: convolution forward/backward, a full
// variational training step, Monte-Carlo prediction, and the t-SNE kernels.

#include <benchmark/benchmark.h>

#include <cstddef>
#include <vector>

#include "bvar/network.hpp"
#include "bvar/rng.hpp"
#include "bvar/tensor.hpp"
#include "bvar/training.hpp"
#include "bvar/tsne.hpp"
#include "bvar/uncertainty.hpp"
#include "bvar/variational.hpp"

namespace {

using namespace bvar;

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor(std::move(shape), std::move(v));
}

void bm_conv2d_forward(benchmark::State& state) {
    const std::size_t c = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    const Tensor input = random_tensor({8, c, 16, 16}, rng);
    const Tensor kernels = random_tensor({c, c, 3, 3}, rng);
    for (auto _ : state) {
        Graph g;
        Tensor out = g.conv2d(g.leaf(input), g.leaf(kernels), 1, Padding::kSame);
        benchmark::DoNotOptimize(out[0]);
    }
}
BENCHMARK(bm_conv2d_forward)->Arg(16)->Arg(32)->Arg(64);

void bm_conv2d_backward(benchmark::State& state) {
    const std::size_t c = static_cast<std::size_t>(state.range(0));
    Rng rng(2);
    const Tensor input = random_tensor({8, c, 16, 16}, rng);
    const Tensor kernels = random_tensor({c, c, 3, 3}, rng);
    for (auto _ : state) {
        Graph g;
        Tensor k = g.leaf(kernels);
        Tensor out = g.mean(g.conv2d(g.leaf(input), k, 1, Padding::kSame));
        auto grads = g.backward(out);
        benchmark::DoNotOptimize(grads);
    }
}
BENCHMARK(bm_conv2d_backward)->Arg(16)->Arg(32);

void bm_vfe_step(benchmark::State& state) {
    Rng rng(3);
    Network net(NetworkSpec::preset("modified_bayesian_cnn", 3, 16, 16), rng);
    const Tensor batch = random_tensor({4, 3, 16, 16}, rng);
    const std::vector<std::size_t> labels{0, 1, 0, 1};
    const Prior prior;
    for (auto _ : state) {
        Rng noise(7);
        VfeResult r = vfe_loss(net, batch, labels, prior, 0.01, 1, noise);
        benchmark::DoNotOptimize(r.loss);
    }
}
BENCHMARK(bm_vfe_step)->Unit(benchmark::kMillisecond);

void bm_predictive_samples(benchmark::State& state) {
    Rng rng(4);
    Network net(NetworkSpec::preset("modified_bayesian_cnn", 3, 16, 16), rng);
    const Tensor image = random_tensor({3, 16, 16}, rng);
    const Rng base(9);
    for (auto _ : state) {
        PredictiveSampleSet set =
            predictive_samples(net, image, static_cast<std::size_t>(state.range(0)), base);
        benchmark::DoNotOptimize(set.mean);
    }
}
BENCHMARK(bm_predictive_samples)->Arg(5)->Arg(25)->Unit(benchmark::kMillisecond);

void bm_kl_monte_carlo(benchmark::State& state) {
    Rng rng(5);
    VariationalParameter vp(random_tensor({64}, rng), random_tensor({64}, rng));
    const Prior prior;
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            kl_monte_carlo(vp, prior, static_cast<std::size_t>(state.range(0)), 11));
    }
}
BENCHMARK(bm_kl_monte_carlo)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

void bm_conditional_affinities(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Rng rng(6);
    const Tensor x = random_tensor({n, 32}, rng);
    for (auto _ : state) {
        ConditionalAffinities ca = conditional_affinities(x, 15.0);
        benchmark::DoNotOptimize(ca.p);
    }
}
BENCHMARK(bm_conditional_affinities)->Arg(100)->Arg(300)->Unit(benchmark::kMillisecond);

void bm_tsne_iterations(benchmark::State& state) {
    const std::size_t n = 120;
    Rng rng(7);
    const Tensor x = random_tensor({n, 16}, rng);
    const Tensor p = symmetrize(conditional_affinities(x, 20.0).p);
    TsneConfig cfg;
    cfg.iterations = static_cast<std::size_t>(state.range(0));
    cfg.exaggeration_iters = 10;
    for (auto _ : state) {
        Embedding e = tsne_optimize(p, cfg);
        benchmark::DoNotOptimize(e.y);
    }
}
BENCHMARK(bm_tsne_iterations)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
