#include "bvar/network.hpp"

#include <cmath>

#include "bvar/errors.hpp"

namespace bvar {

namespace {

LayerSpec conv3x3(std::size_t channels) {
    LayerSpec l;
    l.kind = LayerKind::kConv;
    l.channels = channels;
    l.kernel = 3;
    l.stride = 1;
    l.padding = Padding::kSame;
    return l;
}

LayerSpec dense(std::size_t features) {
    LayerSpec l;
    l.kind = LayerKind::kDense;
    l.features = features;
    return l;
}

LayerSpec plain(LayerKind kind) {
    LayerSpec l;
    l.kind = kind;
    return l;
}

}  // namespace

NetworkSpec NetworkSpec::preset(const std::string& name, std::size_t in_c, std::size_t in_h,
                                std::size_t in_w) {
    std::vector<std::size_t> filters;
    std::size_t fc1 = 0;
    bool adaptive = false;
    if (name == "bayesian_cnn") {
        filters = {16, 32, 32, 64, 128, 256};
        fc1 = 512;
    } else if (name == "modified_bayesian_cnn") {
        filters = {32, 64, 64, 128, 128, 128};
        fc1 = 256;
        adaptive = true;
    } else {
        throw InputError("unknown architecture preset '" + name +
                         "' (expected bayesian_cnn or modified_bayesian_cnn)");
    }

    NetworkSpec spec;
    spec.in_channels = in_c;
    spec.in_h = in_h;
    spec.in_w = in_w;
    for (std::size_t i = 0; i < filters.size(); ++i) {
        spec.layers.push_back(conv3x3(filters[i]));
        spec.layers.push_back(plain(LayerKind::kRelu));
        if (i % 2 == 1) spec.layers.push_back(plain(LayerKind::kMaxPool));
    }
    spec.layers.push_back(dense(fc1));
    spec.layers.push_back(plain(adaptive ? LayerKind::kAdaptiveRelu : LayerKind::kRelu));
    spec.layers.push_back(dense(2));
    spec.layers.push_back(plain(LayerKind::kSoftmax));
    spec.validate();
    return spec;
}

std::size_t NetworkSpec::num_classes() const {
    for (auto it = layers.rbegin(); it != layers.rend(); ++it)
        if (it->kind == LayerKind::kDense) return it->features;
    throw ContractError("network has no dense layer; class count undefined");
}

void NetworkSpec::validate() const {
    if (layers.empty()) throw ContractError("network has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (layers[i].kind == LayerKind::kSoftmax && i + 1 != layers.size())
            throw ContractError("softmax must be the final layer");
    (void)num_classes();
    (void)infer_shapes(*this);
}

std::vector<std::vector<std::size_t>> infer_shapes(const NetworkSpec& spec) {
    std::vector<std::vector<std::size_t>> out;
    bool flat = false;
    std::size_t c = spec.in_channels, h = spec.in_h, w = spec.in_w, f = 0;
    if (c < 1 || h < 1 || w < 1) throw DimensionError("network input extents must be positive");
    for (const LayerSpec& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::kConv: {
                if (flat) throw DimensionError("convolution after flatten is not supported");
                if (l.kernel < 1 || l.stride < 1)
                    throw ContractError("conv kernel and stride must be positive");
                if (l.padding == Padding::kValid) {
                    if (l.kernel > h || l.kernel > w)
                        throw DimensionError("conv kernel exceeds feature map in valid mode");
                    h = (h - l.kernel) / l.stride + 1;
                    w = (w - l.kernel) / l.stride + 1;
                } else {
                    h = (h + l.stride - 1) / l.stride;
                    w = (w + l.stride - 1) / l.stride;
                }
                c = l.channels;
                break;
            }
            case LayerKind::kMaxPool: {
                if (flat) throw DimensionError("maxpool after flatten is not supported");
                const std::size_t ch = h - h % 2, cw = w - w % 2;  // crop to even first
                if (ch < 2 || cw < 2)
                    throw DimensionError("feature map too small to pool: " + std::to_string(h) +
                                         "x" + std::to_string(w));
                h = ch / 2;
                w = cw / 2;
                break;
            }
            case LayerKind::kDense: {
                if (!flat) {
                    f = c * h * w;
                    flat = true;
                }
                if (l.features < 1) throw ContractError("dense layer needs positive width");
                f = l.features;
                break;
            }
            case LayerKind::kRelu:
            case LayerKind::kAdaptiveRelu:
                break;
            case LayerKind::kSoftmax:
                if (!flat) throw DimensionError("softmax head requires a dense layer before it");
                break;
        }
        if (flat)
            out.push_back({f});
        else
            out.push_back({c, h, w});
    }
    return out;
}

namespace {

std::vector<Network::Block> init_blocks(const NetworkSpec& spec, Rng& rng) {
    const auto shapes = infer_shapes(spec);
    std::vector<Network::Block> blocks;
    bool flat = false;
    std::size_t c = spec.in_channels, h = spec.in_h, w = spec.in_w, f = 0;
    std::size_t conv_i = 0, fc_i = 0, alpha_i = 0;

    auto uniform_block = [&](const std::string& name, std::vector<std::size_t> shape,
                             std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::vector<double> mu(shape_numel(shape));
        for (auto& v : mu) v = rng.uniform(-bound, bound);
        blocks.push_back({name, Tensor(shape, std::move(mu)), Tensor(std::move(shape), -3.0)});
    };

    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerSpec& l = spec.layers[li];
        switch (l.kind) {
            case LayerKind::kConv: {
                ++conv_i;
                const std::size_t fan_in = c * l.kernel * l.kernel;
                uniform_block("conv" + std::to_string(conv_i) + ".w",
                              {l.channels, c, l.kernel, l.kernel}, fan_in);
                uniform_block("conv" + std::to_string(conv_i) + ".b", {l.channels}, fan_in);
                break;
            }
            case LayerKind::kDense: {
                ++fc_i;
                const std::size_t fan_in = flat ? f : c * h * w;
                uniform_block("fc" + std::to_string(fc_i) + ".w", {fan_in, l.features}, fan_in);
                uniform_block("fc" + std::to_string(fc_i) + ".b", {l.features}, fan_in);
                break;
            }
            case LayerKind::kAdaptiveRelu: {
                ++alpha_i;
                blocks.push_back({"alpha" + std::to_string(alpha_i), Tensor::scalar(1.0),
                                  Tensor::scalar(-5.0), false});
                break;
            }
            default:
                break;
        }
        flat = shapes[li].size() == 1;
        if (flat)
            f = shapes[li][0];
        else {
            c = shapes[li][0];
            h = shapes[li][1];
            w = shapes[li][2];
        }
    }
    return blocks;
}

}  // namespace

Network::Network(NetworkSpec spec, Rng& init_rng) : spec_(std::move(spec)) {
    spec_.validate();
    blocks_ = init_blocks(spec_, init_rng);
}

Network::Network(NetworkSpec spec, std::vector<Block> blocks)
    : spec_(std::move(spec)), blocks_(std::move(blocks)) {
    spec_.validate();
    Rng probe(0);
    const auto expected = init_blocks(spec_, probe);
    if (expected.size() != blocks_.size())
        throw CheckpointError("parameter block count mismatch: expected " +
                              std::to_string(expected.size()) + ", got " +
                              std::to_string(blocks_.size()));
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        if (!same_shape(expected[i].mu, blocks_[i].mu) ||
            !same_shape(expected[i].rho, blocks_[i].rho))
            throw CheckpointError("parameter block '" + expected[i].name + "' has shape " +
                                  blocks_[i].mu.shape_str() + ", expected " +
                                  expected[i].mu.shape_str());
        blocks_[i].name = expected[i].name;
        blocks_[i].in_kl = expected[i].in_kl;
    }
}

void Network::set_block_values(std::size_t index, Tensor mu, Tensor rho) {
    if (index >= blocks_.size()) throw ContractError("block index out of range");
    Block& b = blocks_[index];
    if (!same_shape(mu, b.mu) || !same_shape(rho, b.rho))
        throw DimensionError("block '" + b.name + "' value shape mismatch");
    b.mu = std::move(mu);
    b.rho = std::move(rho);
}

Network::ForwardResult Network::forward(Graph& g, const Tensor& input, NoiseMode mode, Rng* rng,
                                        bool apply_softmax) const {
    if (input.rank() != 4)
        throw DimensionError("network input must be [B,C,H,W], got " + input.shape_str());
    if (input.dim(1) != spec_.in_channels || input.dim(2) != spec_.in_h ||
        input.dim(3) != spec_.in_w)
        throw DimensionError("network input " + input.shape_str() + " does not match spec " +
                             std::to_string(spec_.in_channels) + "x" + std::to_string(spec_.in_h) +
                             "x" + std::to_string(spec_.in_w));
    if (mode == NoiseMode::kSampled && rng == nullptr)
        throw ContractError("sampled forward pass needs an rng");

    ForwardResult r;
    r.mu_leaves.reserve(blocks_.size());
    r.rho_leaves.reserve(blocks_.size());
    r.samples.reserve(blocks_.size());

    auto next_block = [&](std::size_t& bi) -> std::pair<Tensor, Tensor> {
        const Block& b = blocks_[bi];
        Tensor mu = g.leaf(b.mu);
        Tensor rho = g.leaf(b.rho);
        r.mu_leaves.push_back(mu);
        r.rho_leaves.push_back(rho);
        ++bi;
        return {mu, rho};
    };
    auto sample_block = [&](std::size_t& bi) {
        auto [mu, rho] = next_block(bi);
        Tensor eps = g.leaf(mode == NoiseMode::kSampled ? normal_tensor(*rng, mu.shape())
                                                        : Tensor::zeros(mu.shape()));
        Tensor w = sample_weights(g, mu, rho, eps);
        r.samples.push_back(w);
        return w;
    };

    Tensor x = input.has_node() ? input : g.leaf(input);
    bool flat = false;
    std::size_t bi = 0;
    for (const LayerSpec& l : spec_.layers) {
        switch (l.kind) {
            case LayerKind::kConv: {
                Tensor w = sample_block(bi);
                Tensor b = sample_block(bi);
                x = g.bias_add_channel(g.conv2d(x, w, l.stride, l.padding), b);
                break;
            }
            case LayerKind::kMaxPool: {
                const std::size_t h = x.dim(2), w = x.dim(3);
                if (h % 2 != 0 || w % 2 != 0) x = g.crop2d(x, h - h % 2, w - w % 2);
                x = g.maxpool2d(x);
                break;
            }
            case LayerKind::kDense: {
                if (!flat) {
                    x = g.reshape(x, {x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)});
                    flat = true;
                }
                Tensor w = sample_block(bi);
                Tensor b = sample_block(bi);
                x = g.bias_add_row(g.matmul(x, w), b);
                break;
            }
            case LayerKind::kRelu:
                x = g.relu(x);
                break;
            case LayerKind::kAdaptiveRelu: {
                auto [amu, arho] = next_block(bi);
                const double eps = mode == NoiseMode::kSampled ? rng->normal() : 0.0;
                Tensor alpha = g.add(amu, g.mul_const(g.softplus(arho), eps));
                r.samples.push_back(alpha);
                x = g.relu(g.mul(x, alpha));
                break;
            }
            case LayerKind::kSoftmax:
                if (apply_softmax) x = g.softmax(x);
                break;
        }
    }
    r.output = x;
    return r;
}

}  // namespace bvar
