#pragma once

// Gaussian variational posteriors over weight blocks, weight priors, the
// Monte-Carlo KL estimator, and the stochastic adaptive ReLU. All graph
// builders return nodes registered on the caller's graph so gradients flow
// back to the (mu, rho) leaves through the reparameterization w = mu +
// softplus(rho) * eps.

#include <cstdint>

#include "bvar/rng.hpp"
#include "bvar/tensor.hpp"

namespace bvar {

struct VariationalParameter {
    Tensor mu;
    Tensor rho;  // sigma = softplus(rho), strictly positive

    VariationalParameter(Tensor mu_, Tensor rho_) : mu(std::move(mu_)), rho(std::move(rho_)) {
        if (!same_shape(mu, rho))
            throw DimensionError("variational parameter mu/rho shape mismatch: " + mu.shape_str() +
                                 " vs " + rho.shape_str());
    }

    Tensor sigma() const;
};

struct Prior {
    enum class Kind { kGaussian, kScaleMixture };

    Kind kind = Kind::kGaussian;
    double sigma = 1.0;  // gaussian component, mean 0
    double pi = 0.5;     // mixture weight of the wide component
    double sigma1 = 1.0;
    double sigma2 = 0.05;  // sigma1 > sigma2 > 0

    void validate() const;
    // Density at a point, for tests and grid checks.
    double density(double w) const;
};

// Fills a tensor with unit normals drawn in row-major order.
Tensor normal_tensor(Rng& rng, std::vector<std::size_t> shape);

// w = mu + softplus(rho) * eps, elementwise.
Tensor sample_weights(Graph& g, const Tensor& mu, const Tensor& rho, const Tensor& eps);

// Sum over elements of log N(w; mu, softplus(rho)^2).
Tensor log_q(Graph& g, const Tensor& mu, const Tensor& rho, const Tensor& w);

// Sum over elements of the prior log density.
Tensor log_prior(Graph& g, const Prior& prior, const Tensor& w);

// Average over n_samples of log_q(w) - log_prior(w) with w drawn from the
// posterior; differentiable w.r.t. the mu/rho leaves.
Tensor kl_monte_carlo_node(Graph& g, const Tensor& mu_leaf, const Tensor& rho_leaf,
                           const Prior& prior, std::size_t n_samples, Rng& rng);

// Value-only convenience wrapper around kl_monte_carlo_node.
double kl_monte_carlo(const VariationalParameter& vp, const Prior& prior, std::size_t n_samples,
                      std::uint64_t seed);

struct AdaptiveActivationParam {
    double alpha_mu = 1.0;
    double alpha_rho = -5.0;
};

// max(0, alpha * x) with alpha = alpha_mu + softplus(alpha_rho) * eps shared
// across the whole tensor. eps = 0 makes alpha deterministic, and alpha_mu=1
// then reproduces relu bitwise.
Tensor adaptive_relu(Graph& g, const Tensor& x, const Tensor& alpha_mu, const Tensor& alpha_rho,
                     double eps);

}  // namespace bvar
