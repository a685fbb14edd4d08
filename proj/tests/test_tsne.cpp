#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bvar/parallel.hpp"
#include "bvar/rng.hpp"
#include "bvar/tsne.hpp"
#include "support/oracles.hpp"

using bvar::ConditionalAffinities;
using bvar::Embedding;
using bvar::Rng;
using bvar::Tensor;
using bvar::TsneConfig;

namespace {

// 2^H of one affinity row, H in bits over the positive entries.
double row_perplexity_bits(const Tensor& p, std::size_t i) {
    const std::size_t n = p.dim(1);
    double h = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double v = p[i * n + j];
        if (v > 0.0) h -= v * std::log2(v);
    }
    return std::exp2(h);
}

Tensor random_points(std::size_t n, std::size_t d, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n * d);
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor({n, d}, std::move(v));
}

// Random conditional matrix: zero diagonal, each row a point of the simplex.
Tensor random_conditional(std::size_t n, Rng& rng) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            v[i * n + j] = rng.uniform(0.01, 1.0);
            sum += v[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) v[i * n + j] /= sum;
    }
    return Tensor({n, n}, std::move(v));
}

void check_affinity_invariants(const Tensor& p) {
    const std::size_t n = p.dim(0);
    REQUIRE(p.dim(1) == n);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(p[i * n + i] == 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            CHECK(p[i * n + j] >= 0.0);
            CHECK(p[i * n + j] == p[j * n + i]);
            sum += p[i * n + j];
        }
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-8));
}

Tensor zero_mean(Tensor y) {
    const std::size_t n = y.dim(0), d = y.dim(1);
    std::vector<double> v(y.data().begin(), y.data().end());
    for (std::size_t k = 0; k < d; ++k) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += v[i * d + k];
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) v[i * d + k] -= mean;
    }
    return Tensor({n, d}, std::move(v));
}

}  // namespace

TEST_CASE("uniform rows have perplexity exactly k") {
    for (const std::size_t k : {2u, 3u, 7u}) {
        std::vector<double> row(k + 1, 1.0 / static_cast<double>(k));
        row[0] = 0.0;
        Tensor p({1, k + 1}, std::move(row));
        CHECK(oracle::rel_err(row_perplexity_bits(p, 0), static_cast<double>(k)) < 1e-12);
    }
}

TEST_CASE("equidistant points get uniform affinity rows") {
    // equilateral triangle, all pairwise distances 1
    Tensor tri({3, 2}, {0.0, 0.0, 1.0, 0.0, 0.5, std::sqrt(3.0) / 2.0});
    for (const double perp : {1.5, 2.0, 2.5}) {
        ConditionalAffinities a = bvar::conditional_affinities(tri, perp);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j)
                CHECK(a.p[i * 3 + j] == (i == j ? 0.0 : 0.5));
        for (const double s : a.sigma) CHECK(s > 0.0);
    }

    // regular tetrahedron: all squared distances 8
    Tensor tet({4, 3}, {1, 1, 1, 1, -1, -1, -1, 1, -1, -1, -1, 1});
    ConditionalAffinities a = bvar::conditional_affinities(tet, 2.0);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(oracle::rel_err(row_perplexity_bits(a.p, i), 3.0) < 1e-12);
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(a.p[i * 4 + j] == (i == j ? 0.0 : 1.0 / 3.0));
    }
}

TEST_CASE("bisection hits the target perplexity on random points") {
    Rng rng(42);
    Tensor x = random_points(10, 4, rng);
    ConditionalAffinities a = bvar::conditional_affinities(x, 5.0);
    REQUIRE(a.p.dim(0) == 10);
    REQUIRE(a.sigma.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        double row_sum = 0.0;
        for (std::size_t j = 0; j < 10; ++j) {
            CHECK(a.p[i * 10 + j] >= 0.0);
            row_sum += a.p[i * 10 + j];
        }
        CHECK(a.p[i * 10 + i] == 0.0);
        CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(std::fabs(row_perplexity_bits(a.p, i) - 5.0) < 2e-3);
        CHECK(a.sigma[i] > 0.0);
    }
}

TEST_CASE("affinity rows are independent of the thread cap") {
    Rng rng(4242);
    Tensor x = random_points(12, 5, rng);
    bvar::set_max_threads(4);
    ConditionalAffinities par = bvar::conditional_affinities(x, 4.0);
    bvar::set_max_threads(1);
    ConditionalAffinities ser = bvar::conditional_affinities(x, 4.0);
    for (std::size_t t = 0; t < 144; ++t) CHECK(par.p[t] == ser.p[t]);
    for (std::size_t i = 0; i < 12; ++i) CHECK(par.sigma[i] == ser.sigma[i]);
}

TEST_CASE("conditional affinity input errors") {
    Tensor two({2, 2}, {0.0, 0.0, 1.0, 1.0});
    CHECK_THROWS_AS(bvar::conditional_affinities(two, 1.5), bvar::InputError);

    Tensor tri({3, 2}, {0.0, 0.0, 1.0, 0.0, 0.5, 0.8});
    CHECK_THROWS_AS(bvar::conditional_affinities(tri, 1.0), bvar::InputError);
    CHECK_THROWS_AS(bvar::conditional_affinities(tri, 3.0), bvar::InputError);

    Tensor flat({4}, {0.0, 0.0, 1.0, 1.0});
    CHECK_THROWS_AS(bvar::conditional_affinities(flat, 2.0), bvar::DimensionError);

    // every point identical: all distances zero
    Tensor dup({3, 2}, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5});
    CHECK_THROWS_WITH_AS(bvar::conditional_affinities(dup, 2.0),
                         doctest::Contains("jitter"), bvar::InputError);
}

TEST_CASE("symmetrize matches the pairwise formula") {
    Rng rng(7);
    const std::size_t n = 6;
    Tensor c = random_conditional(n, rng);
    Tensor p = bvar::symmetrize(c);
    check_affinity_invariants(p);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double want =
                i == j ? 0.0 : (c[i * n + j] + c[j * n + i]) / (2.0 * static_cast<double>(n));
            CHECK(p[i * n + j] == want);
        }
}

TEST_CASE("symmetrize of a symmetric conditional divides by n") {
    const std::size_t n = 5;
    std::vector<double> v(n * n, 1.0 / static_cast<double>(n - 1));
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 0.0;
    Tensor c({n, n}, std::move(v));
    Tensor p = bvar::symmetrize(c);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double want = i == j ? 0.0 : c[i * n + j] / static_cast<double>(n);
            CHECK(p[i * n + j] == want);
        }
}

TEST_CASE("low-dimensional affinities") {
    // two points: forced normalization gives 1/2 regardless of separation
    for (const double gap : {0.1, 1.0, 25.0}) {
        Tensor y({2, 3}, {0.0, 0.0, 0.0, gap, 0.0, 0.0});
        Tensor q = bvar::low_dim_affinities(y);
        CHECK(q[1] == 0.5);
        CHECK(q[2] == 0.5);
        CHECK(q[0] == 0.0);
        CHECK(q[3] == 0.0);
    }

    // three points at mutual distance 1
    Tensor tri({3, 2}, {0.0, 0.0, 1.0, 0.0, 0.5, std::sqrt(3.0) / 2.0});
    Tensor q = bvar::low_dim_affinities(tri);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            if (i != j) CHECK(q[i * 3 + j] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));

    // random 8x3 against a direct loop oracle
    Rng rng(11);
    Tensor y = random_points(8, 3, rng, -2.0, 2.0);
    Tensor got = bvar::low_dim_affinities(y);
    check_affinity_invariants(got);
    double denom = 0.0;
    std::vector<double> w(64, 0.0);
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j) {
            if (i == j) continue;
            double d2 = 0.0;
            for (std::size_t k = 0; k < 3; ++k) {
                const double diff = y[i * 3 + k] - y[j * 3 + k];
                d2 += diff * diff;
            }
            w[i * 8 + j] = 1.0 / (1.0 + d2);
            denom += w[i * 8 + j];
        }
    for (std::size_t t = 0; t < 64; ++t)
        CHECK(oracle::rel_err(got[t], w[t] / denom) < 1e-12);
}

TEST_CASE("KL divergence of a matrix with itself is zero") {
    Rng rng(3);
    Tensor y = random_points(7, 3, rng);
    Tensor q = bvar::low_dim_affinities(y);
    CHECK(bvar::kl_divergence(q, q) == 0.0);
}

TEST_CASE("KL divergence matches a hand oracle and is nonnegative") {
    Tensor p({2, 2}, {0.0, 0.5, 0.5, 0.0});
    Tensor q({2, 2}, {0.0, 0.3, 0.7, 0.0});
    const double want = 0.5 * std::log(0.5 / 0.3) + 0.5 * std::log(0.5 / 0.7);
    CHECK(bvar::kl_divergence(p, q) == doctest::Approx(want).epsilon(1e-12));

    Rng rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = bvar::symmetrize(random_conditional(6, rng));
        Tensor b = bvar::symmetrize(random_conditional(6, rng));
        CHECK(bvar::kl_divergence(a, b) >= -1e-12);
    }
}

TEST_CASE("analytic gradient matches finite differences") {
    Rng rng(23);
    const std::size_t n = 8, dims = 3;
    Tensor x = random_points(n, 5, rng);
    Tensor p = bvar::symmetrize(bvar::conditional_affinities(x, 4.0).p);
    Tensor y0 = zero_mean(random_points(n, dims, rng, -1.5, 1.5));
    Tensor g = bvar::tsne_gradient(p, y0);

    const double h = 1e-5;
    const std::vector<double> yv(y0.data().begin(), y0.data().end());
    for (std::size_t t = 0; t < n * dims; ++t) {
        std::vector<double> plus = yv, minus = yv;
        plus[t] += h;
        minus[t] -= h;
        const double kp = bvar::kl_divergence(p, bvar::low_dim_affinities(Tensor({n, dims}, std::move(plus))));
        const double km = bvar::kl_divergence(p, bvar::low_dim_affinities(Tensor({n, dims}, std::move(minus))));
        const double numeric = (kp - km) / (2.0 * h);
        CHECK(oracle::rel_err(g[t], numeric) < 1e-4);
    }
}

TEST_CASE("a stationary point stays put") {
    Rng rng(31);
    Tensor y0 = zero_mean(random_points(6, 3, rng));
    Tensor p = bvar::low_dim_affinities(y0);

    TsneConfig cfg;
    cfg.iterations = 10;
    cfg.exaggeration = 1.0;
    Embedding e = bvar::tsne_optimize(p, cfg, &y0);
    double max_disp = 0.0;
    for (std::size_t t = 0; t < 18; ++t)
        max_disp = std::max(max_disp, std::fabs(e.y[t] - y0[t]));
    CHECK(max_disp < 1e-6);
}

TEST_CASE("NaN affinities are reported with the iteration index") {
    const double nan = std::nan("");
    Tensor p({2, 2}, {0.0, nan, nan, 0.0});
    Tensor y0({2, 3}, {0.5, 0.0, 0.0, -0.5, 0.0, 0.0});
    TsneConfig cfg;
    cfg.iterations = 5;
    CHECK_THROWS_WITH_AS(bvar::tsne_optimize(p, cfg, &y0),
                         doctest::Contains("iteration 0"), bvar::NumericError);
}

TEST_CASE("config validation") {
    TsneConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    TsneConfig bad = cfg;
    bad.perplexity = 1.0;
    CHECK_THROWS_AS(bad.validate(), bvar::ContractError);
    bad = cfg;
    bad.out_dims = 0;
    CHECK_THROWS_AS(bad.validate(), bvar::ContractError);
    bad = cfg;
    bad.iterations = 0;
    CHECK_THROWS_AS(bad.validate(), bvar::ContractError);
    bad = cfg;
    bad.learning_rate = 0.0;
    CHECK_THROWS_AS(bad.validate(), bvar::ContractError);
    bad = cfg;
    bad.exaggeration = 0.5;
    CHECK_THROWS_AS(bad.validate(), bvar::ContractError);
}

TEST_CASE("three separated clusters embed with high purity") {
    Rng rng(70);
    const std::size_t per = 20, d = 50;
    std::vector<double> xv;
    xv.reserve(3 * per * d);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < per; ++i)
            for (std::size_t k = 0; k < d; ++k) {
                const double center = k == c ? 8.0 : 0.0;
                xv.push_back(center + 0.5 * rng.normal());
            }
    Tensor x({3 * per, d}, std::move(xv));

    TsneConfig cfg;
    cfg.iterations = 500;
    cfg.learning_rate = 25.0;  // forces scale with the affinities (~1/n^2); 200 suits n in the thousands
    cfg.seed = 7;
    Embedding e = bvar::tsne_fit(x, cfg);
    REQUIRE(e.y.dim(0) == 3 * per);
    REQUIRE(e.y.dim(1) == 3);
    REQUIRE(e.kl_trace.size() == 500);
    for (std::size_t t = 0; t < e.y.numel(); ++t) CHECK(std::isfinite(e.y[t]));
    for (const double kl : e.kl_trace) CHECK(kl >= 0.0);

    // KL trend after early exaggeration: windowed non-increase
    for (std::size_t t = cfg.exaggeration_iters; t + 50 < e.kl_trace.size(); ++t)
        CHECK(e.kl_trace[t + 50] <= e.kl_trace[t] + 1e-6);

    // nearest-centroid purity
    double cent[3][3] = {};
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < per; ++i)
            for (std::size_t k = 0; k < 3; ++k) cent[c][k] += e.y[(c * per + i) * 3 + k] / per;
    std::size_t correct = 0;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < per; ++i) {
            std::size_t best = 0;
            double best_d = 0.0;
            for (std::size_t m = 0; m < 3; ++m) {
                double d2 = 0.0;
                for (std::size_t k = 0; k < 3; ++k) {
                    const double diff = e.y[(c * per + i) * 3 + k] - cent[m][k];
                    d2 += diff * diff;
                }
                if (m == 0 || d2 < best_d) {
                    best_d = d2;
                    best = m;
                }
            }
            if (best == c) ++correct;
        }
    CHECK(static_cast<double>(correct) >= 0.95 * 3 * per);
}

TEST_CASE("fit is deterministic and translation invariant") {
    // coordinates on a 2^-10 grid so that a +4 shift keeps differences exact
    Rng rng(55);
    const std::size_t n = 12, d = 6;
    std::vector<double> base(n * d);
    for (double& v : base) v = static_cast<double>(rng.below(1024)) / 1024.0;
    std::vector<double> shifted = base;
    for (double& v : shifted) v += 4.0;

    TsneConfig cfg;
    cfg.iterations = 60;
    cfg.seed = 9;
    Embedding a = bvar::tsne_fit(Tensor({n, d}, std::move(base)), cfg);
    Embedding b = bvar::tsne_fit(Tensor({n, d}, std::move(shifted)), cfg);
    for (std::size_t t = 0; t < n * 3; ++t) CHECK(a.y[t] == b.y[t]);
    for (std::size_t t = 0; t < 60; ++t) CHECK(a.kl_trace[t] == b.kl_trace[t]);

    Tensor tiny({4, 2}, {0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0});
    CHECK_THROWS_AS(bvar::tsne_fit(tiny, cfg), bvar::InputError);
}

TEST_CASE("embedding csv writer") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "bvar_tsne_embed.csv";
    Tensor y({2, 3}, {0.125, -3.75, 1e-9, 2.0, 0.0, -1.0});
    std::vector<bvar::EmbeddingPointMeta> meta{{"a", "0", "low"}, {"b", "1", "high"}};
    bvar::write_embedding_csv(path.string(), y, meta);

    std::ifstream in(path);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "id,y1,y2,y3,label,band");
    std::size_t row = 0;
    while (std::getline(in, line)) {
        char id[8], label[8], band[8];
        double a, b, c;
        REQUIRE(std::sscanf(line.c_str(), "%7[^,],%lg,%lg,%lg,%7[^,],%7s", id, &a, &b, &c, label,
                            band) == 6);
        CHECK(a == y[row * 3 + 0]);
        CHECK(b == y[row * 3 + 1]);
        CHECK(c == y[row * 3 + 2]);
        CHECK(std::string(id) == meta[row].id);
        CHECK(std::string(label) == meta[row].label);
        CHECK(std::string(band) == meta[row].band);
        ++row;
    }
    CHECK(row == 2);
    fs::remove(path);

    std::vector<bvar::EmbeddingPointMeta> wrong(3);
    CHECK_THROWS_AS(bvar::write_embedding_csv(path.string(), y, wrong), bvar::InputError);
}

TEST_CASE("vector csv reader") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "bvar_tsne_vectors.csv";
    {
        std::ofstream out(path);
        out << "id,f1,f2,label,E\n";
        out << "p0,0.25,-1.5,0,0.125\n";
        out << "p1,3.5,2.25,1,0.875\n";
    }
    bvar::VectorDataset ds = bvar::read_vector_csv(path.string());
    REQUIRE(ds.x.dim(0) == 2);
    REQUIRE(ds.x.dim(1) == 2);
    CHECK(ds.x[0] == 0.25);
    CHECK(ds.x[1] == -1.5);
    CHECK(ds.x[2] == 3.5);
    CHECK(ds.x[3] == 2.25);
    CHECK(ds.ids == std::vector<std::string>{"p0", "p1"});
    CHECK(ds.has_labels);
    CHECK(ds.labels == std::vector<std::size_t>{0, 1});
    CHECK(ds.has_e);
    CHECK(ds.e[0] == 0.125);
    CHECK(ds.e[1] == 0.875);

    {
        std::ofstream out(path);
        out << "a,b\n1,2\n3,4\n5,6\n";
    }
    ds = bvar::read_vector_csv(path.string());
    CHECK(ds.x.dim(0) == 3);
    CHECK(ds.x.dim(1) == 2);
    CHECK_FALSE(ds.has_labels);
    CHECK_FALSE(ds.has_e);
    CHECK(ds.ids == std::vector<std::string>{"0", "1", "2"});

    {
        std::ofstream out(path);
        out << "f1,f2\n1,2\n3\n";
    }
    CHECK_THROWS_AS(bvar::read_vector_csv(path.string()), bvar::InputError);

    {
        std::ofstream out(path);
        out << "f1\nnot_a_number\n";
    }
    CHECK_THROWS_AS(bvar::read_vector_csv(path.string()), bvar::InputError);

    {
        std::ofstream out(path);
        out << "f1,f2\n";
    }
    CHECK_THROWS_AS(bvar::read_vector_csv(path.string()), bvar::InputError);

    {
        std::ofstream out(path);
        out << "id,label\n";
    }
    CHECK_THROWS_AS(bvar::read_vector_csv(path.string()), bvar::InputError);

    fs::remove(path);
    CHECK_THROWS_AS(bvar::read_vector_csv(path.string()), bvar::InputError);
}
