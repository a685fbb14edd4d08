#pragma once

// Layer specifications, the two preset architectures, and the Bayesian
// network itself: an ordered list of variational weight blocks plus a
// forward-pass builder that samples weights onto a caller-supplied graph.

#include <string>
#include <vector>

#include "bvar/rng.hpp"
#include "bvar/tensor.hpp"
#include "bvar/variational.hpp"

namespace bvar {

enum class LayerKind { kConv, kDense, kMaxPool, kRelu, kAdaptiveRelu, kSoftmax };

struct LayerSpec {
    LayerKind kind;
    std::size_t channels = 0;  // conv output channels
    std::size_t kernel = 3;
    std::size_t stride = 1;
    Padding padding = Padding::kSame;
    std::size_t features = 0;  // dense output features
};

struct NetworkSpec {
    std::size_t in_channels = 3;
    std::size_t in_h = 50;
    std::size_t in_w = 50;
    std::vector<LayerSpec> layers;

    // Presets: "bayesian_cnn" (conv 16,32,32,64,128,256; FC1 512; FC2 2) and
    // "modified_bayesian_cnn" (conv 32,64,64,128,128,128; FC1 256; FC2 2 with
    // the adaptive ReLU after FC1). 3x3 stride-1 same-padding convolutions,
    // 2x2 stride-2 pools after convolutions 2, 4 and 6, softmax head.
    static NetworkSpec preset(const std::string& name, std::size_t in_c, std::size_t in_h,
                              std::size_t in_w);

    std::size_t num_classes() const;
    void validate() const;
};

// Output shape after each layer for a single (batchless) input. Spatial dims
// with an odd extent are cropped to even immediately before a pool, and the
// first dense layer flattens whatever precedes it. Throws DimensionError when
// the stack does not compose.
std::vector<std::vector<std::size_t>> infer_shapes(const NetworkSpec& spec);

enum class NoiseMode { kSampled, kZeros };

class Network {
  public:
    struct Block {
        std::string name;
        Tensor mu;
        Tensor rho;
        // Weight/bias blocks enter the KL term; adaptive-activation alpha
        // blocks are trained through the likelihood alone.
        bool in_kl = true;
    };

    Network(NetworkSpec spec, Rng& init_rng);
    Network(NetworkSpec spec, std::vector<Block> blocks);

    const NetworkSpec& spec() const { return spec_; }
    const std::vector<Block>& blocks() const { return blocks_; }
    std::size_t num_classes() const { return spec_.num_classes(); }
    void set_block_values(std::size_t index, Tensor mu, Tensor rho);

    struct ForwardResult {
        Tensor output;  // [B, classes]; probabilities when softmax applied
        std::vector<Tensor> mu_leaves;
        std::vector<Tensor> rho_leaves;
        std::vector<Tensor> samples;  // the sampled w / b / alpha per block
    };

    // input: [B, C, H, W]. kZeros forces every eps to zero, giving the
    // posterior-mean deterministic network. rng may be null only for kZeros.
    ForwardResult forward(Graph& g, const Tensor& input, NoiseMode mode, Rng* rng,
                          bool apply_softmax = true) const;

  private:
    NetworkSpec spec_;
    std::vector<Block> blocks_;
};

}  // namespace bvar
