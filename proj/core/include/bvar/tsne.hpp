#pragma once

// Exact O(n^2) t-SNE: per-point bandwidth calibration by bisection,
// symmetrized joint affinities, Student-t low-dimensional affinities, and
// momentum gradient descent on the KL divergence, projecting flattened
// images (or any feature vectors) into a few dimensions.

#include <cstdint>
#include <string>
#include <vector>

#include "bvar/rng.hpp"
#include "bvar/tensor.hpp"

namespace bvar {

struct ConditionalAffinities {
    Tensor p;                   // [n,n], row i holds p_{j|i}, zero diagonal
    std::vector<double> sigma;  // calibrated bandwidth per point
};

// Calibrates sigma_i per row so the row's perplexity (2^entropy, entropy in
// bits) hits `perplexity` within 1e-3, by bisection over at most 200 steps.
// Rows whose off-diagonal distances are all equal are accepted as uniform
// (their perplexity is n-1 regardless of sigma). x is [n,d], n >= 3,
// 1 < perplexity < n.
ConditionalAffinities conditional_affinities(const Tensor& x, double perplexity);

// p_ij = (p_{i|j} + p_{j|i}) / (2n): symmetric, zero diagonal, sums to 1.
Tensor symmetrize(const Tensor& conditional);

// q_ij = (1+||y_i-y_j||^2)^-1, normalized over all off-diagonal pairs.
Tensor low_dim_affinities(const Tensor& y);

// KL(P||Q) over off-diagonal entries; both arguments floored at 1e-12 inside
// the log, zero-probability P entries contribute nothing.
double kl_divergence(const Tensor& p, const Tensor& q);

struct TsneConfig {
    double perplexity = 30.0;  // clipped to (n-1)/3 for small n
    std::size_t out_dims = 3;
    std::size_t iterations = 1000;
    double learning_rate = 200.0;
    double momentum_early = 0.5;
    double momentum_late = 0.8;
    std::size_t momentum_switch = 250;   // iteration where momentum steps up
    double exaggeration = 12.0;          // early-exaggeration factor on P
    std::size_t exaggeration_iters = 250;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Embedding {
    Tensor y;                      // [n,out_dims]
    std::vector<double> kl_trace;  // KL(P||Q) after every iteration
};

// Gradient of KL(p || q(y)) with respect to y: 4 sum_j (p_ij - q_ij) w_ij (y_i - y_j).
Tensor tsne_gradient(const Tensor& p, const Tensor& y);

// Descends from y0 (or a seeded N(0, 1e-4) initialization when null) with
// momentum and per-coordinate adaptive gains; the trace always reports KL
// against the unexaggerated P.
Embedding tsne_optimize(const Tensor& p, const TsneConfig& cfg, const Tensor* y0 = nullptr);

// conditional_affinities + symmetrize + tsne_optimize. x is [n,d], n >= 5.
Embedding tsne_fit(const Tensor& x, const TsneConfig& cfg);

struct EmbeddingPointMeta {
    std::string id;
    std::string label;  // empty when unknown
    std::string band;   // empty when unknown
};

// CSV `id,y1,y2,y3,label,band` (one y column per output dimension).
void write_embedding_csv(const std::string& path, const Tensor& y,
                         const std::vector<EmbeddingPointMeta>& meta);

struct VectorDataset {
    Tensor x;  // [n,d]
    std::vector<std::string> ids;
    std::vector<std::size_t> labels;  // meaningful when has_labels
    std::vector<double> e;            // meaningful when has_e
    bool has_labels = false;
    bool has_e = false;
};

// Feature CSV: a header naming the columns, where `id`, `label` and `E` are
// recognized as metadata and every other column is a feature, in order.
VectorDataset read_vector_csv(const std::string& path);

}  // namespace bvar
