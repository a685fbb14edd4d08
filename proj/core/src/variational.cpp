#include "bvar/variational.hpp"

#include <cmath>

namespace bvar {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)

}  // namespace

Tensor VariationalParameter::sigma() const {
    std::vector<double> s(rho.numel());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = softplus_value(rho[i]);
    return Tensor(rho.shape(), std::move(s));
}

void Prior::validate() const {
    if (kind == Kind::kGaussian) {
        if (!(sigma > 0.0)) throw ContractError("gaussian prior sigma must be positive");
    } else {
        if (!(pi > 0.0 && pi < 1.0)) throw ContractError("mixture prior pi must lie in (0,1)");
        // sigma1 == sigma2 degenerates to a plain Gaussian and stays legal.
        if (!(sigma1 >= sigma2 && sigma2 > 0.0))
            throw ContractError("mixture prior requires sigma1 >= sigma2 > 0");
    }
}

double Prior::density(double w) const {
    auto gauss = [](double x, double s) {
        return std::exp(-0.5 * (x / s) * (x / s)) / (s * std::sqrt(2.0 * 3.14159265358979323846));
    };
    if (kind == Kind::kGaussian) return gauss(w, sigma);
    return pi * gauss(w, sigma1) + (1.0 - pi) * gauss(w, sigma2);
}

Tensor normal_tensor(Rng& rng, std::vector<std::size_t> shape) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal();
    return Tensor(std::move(shape), std::move(v));
}

Tensor sample_weights(Graph& g, const Tensor& mu, const Tensor& rho, const Tensor& eps) {
    if (!same_shape(mu, eps) || !same_shape(mu, rho))
        throw DimensionError("sample_weights shape mismatch: mu " + mu.shape_str() + ", rho " +
                             rho.shape_str() + ", eps " + eps.shape_str());
    return g.add(mu, g.mul(g.softplus(rho), eps));
}

Tensor log_q(Graph& g, const Tensor& mu, const Tensor& rho, const Tensor& w) {
    if (!same_shape(mu, w))
        throw DimensionError("log_q shape mismatch: mu " + mu.shape_str() + ", w " + w.shape_str());
    Tensor sigma = g.softplus(rho);
    Tensor z = g.div(g.sub(w, mu), sigma);
    Tensor per_elem = g.sub(g.add_const(g.mul_const(g.mul(z, z), -0.5), -0.5 * kLog2Pi),
                            g.log(sigma));
    return g.sum(per_elem);
}

Tensor log_prior(Graph& g, const Prior& prior, const Tensor& w) {
    prior.validate();
    if (prior.kind == Prior::Kind::kGaussian) {
        const double s = prior.sigma;
        Tensor quad = g.mul_const(g.mul(w, w), -0.5 / (s * s));
        return g.sum(g.add_const(quad, -0.5 * kLog2Pi - std::log(s)));
    }
    return g.sum(g.log_mix_gauss(w, prior.pi, prior.sigma1, prior.sigma2));
}

Tensor kl_monte_carlo_node(Graph& g, const Tensor& mu_leaf, const Tensor& rho_leaf,
                           const Prior& prior, std::size_t n_samples, Rng& rng) {
    if (n_samples < 1) throw ContractError("kl_monte_carlo needs n_samples >= 1");
    Tensor mu_t = g.tile(mu_leaf, n_samples);
    Tensor rho_t = g.tile(rho_leaf, n_samples);
    Tensor eps = g.leaf(normal_tensor(rng, mu_t.shape()));
    Tensor w = sample_weights(g, mu_t, rho_t, eps);
    Tensor lq = log_q(g, mu_t, rho_t, w);
    Tensor lp = log_prior(g, prior, w);
    return g.mul_const(g.sub(lq, lp), 1.0 / static_cast<double>(n_samples));
}

double kl_monte_carlo(const VariationalParameter& vp, const Prior& prior, std::size_t n_samples,
                      std::uint64_t seed) {
    Graph g;
    Rng rng(seed);
    Tensor mu = g.leaf(vp.mu);
    Tensor rho = g.leaf(vp.rho);
    return kl_monte_carlo_node(g, mu, rho, prior, n_samples, rng).value();
}

Tensor adaptive_relu(Graph& g, const Tensor& x, const Tensor& alpha_mu, const Tensor& alpha_rho,
                     double eps) {
    if (!alpha_mu.is_scalar() || !alpha_rho.is_scalar())
        throw DimensionError("adaptive_relu alpha parameters must be scalars");
    Tensor alpha = g.add(alpha_mu, g.mul_const(g.softplus(alpha_rho), eps));
    return g.relu(g.mul(x, alpha));
}

}  // namespace bvar
