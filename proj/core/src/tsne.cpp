#include "bvar/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bvar/parallel.hpp"

namespace bvar {

namespace {

constexpr double kLogFloor = 1e-12;

// Squared Euclidean distances between rows of x, [n,n].
std::vector<double> pairwise_sq(const Tensor& x) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    const auto v = x.data();
    std::vector<double> out(n * n, 0.0);
    parallel_for(n, [&](std::size_t i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = v[i * d + k] - v[j * d + k];
                acc += diff * diff;
            }
            out[i * n + j] = acc;
            out[j * n + i] = acc;
        }
    });
    return out;
}

// Row perplexity 2^H for the Gaussian kernel at precision beta = 1/(2 sigma^2),
// filling row with the normalized probabilities.
double row_perplexity(const std::vector<double>& d2, std::size_t n, std::size_t i, double beta,
                      std::vector<double>& row) {
    double dmin = 0.0;
    bool first = true;
    for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        if (first || d2[i * n + j] < dmin) dmin = d2[i * n + j];
        first = false;
    }
    double sum = 0.0, weighted = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (j == i) {
            row[j] = 0.0;
            continue;
        }
        const double shifted = d2[i * n + j] - dmin;
        const double w = std::exp(-beta * shifted);
        row[j] = w;
        sum += w;
        weighted += w * shifted;
    }
    for (std::size_t j = 0; j < n; ++j)
        if (j != i) row[j] /= sum;
    // H_nat = log(sum) + beta * E[d^2 - dmin]; perplexity = 2^(H/log 2) = e^H
    const double h_nat = std::log(sum) + beta * weighted / sum;
    return std::exp(h_nat);
}

// Student-t weights w_ij = (1 + ||y_i - y_j||^2)^-1 with zero diagonal and
// their total. Shared by low_dim_affinities and the descent loop so that
// q values agree bitwise across the two paths.
double student_t_weights(std::span<const double> y, std::size_t n, std::size_t dims,
                         std::vector<double>& w) {
    double wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < dims; ++k) {
                const double diff = y[i * dims + k] - y[j * dims + k];
                d2 += diff * diff;
            }
            const double wij = 1.0 / (1.0 + d2);
            w[i * n + j] = wij;
            w[j * n + i] = wij;
            wsum += 2.0 * wij;
        }
    return wsum;
}

}  // namespace

ConditionalAffinities conditional_affinities(const Tensor& x, double perplexity) {
    if (x.rank() != 2) throw DimensionError("affinity input must be [n,d], got " + x.shape_str());
    const std::size_t n = x.dim(0);
    if (n < 3) throw InputError("affinities need at least 3 points");
    if (!(perplexity > 1.0 && perplexity < static_cast<double>(n)))
        throw InputError("perplexity must lie in (1, n)");

    const std::vector<double> d2 = pairwise_sq(x);
    std::vector<double> p(n * n, 0.0);
    std::vector<double> sigma(n, 0.0);
    std::vector<std::string> row_errors(n);

    parallel_for(n, [&](std::size_t i) {
        double lo = 0.0, hi = 0.0;  // hi == 0 means unbounded above
        double beta = 1.0;
        std::vector<double> row(n, 0.0);

        double dmax = 0.0, dmin = -1.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            dmax = std::max(dmax, d2[i * n + j]);
            dmin = dmin < 0.0 ? d2[i * n + j] : std::min(dmin, d2[i * n + j]);
        }
        if (dmax == 0.0) {
            row_errors[i] = "point " + std::to_string(i) +
                            " duplicates all of its neighbors; add jitter to the input";
            return;
        }
        // Equidistant neighbors give a uniform row whose perplexity is n-1 no
        // matter the bandwidth; accept it instead of bisecting forever.
        if (dmax - dmin <= 1e-12 * dmax) {
            for (std::size_t j = 0; j < n; ++j)
                p[i * n + j] = j == i ? 0.0 : 1.0 / static_cast<double>(n - 1);
            sigma[i] = std::sqrt(0.5);
            return;
        }

        bool converged = false;
        for (std::size_t it = 0; it < 200; ++it) {
            const double perp = row_perplexity(d2, n, i, beta, row);
            if (std::fabs(perp - perplexity) <= 1e-3) {
                converged = true;
                break;
            }
            if (perp > perplexity) {
                // entropy too high: sharpen the kernel
                lo = beta;
                beta = hi == 0.0 ? beta * 2.0 : 0.5 * (lo + hi);
            } else {
                hi = beta;
                beta = 0.5 * (lo + hi);
            }
        }
        if (!converged) {
            row_errors[i] =
                "bandwidth search for point " + std::to_string(i) + " did not converge";
            return;
        }
        for (std::size_t j = 0; j < n; ++j) p[i * n + j] = row[j];
        sigma[i] = std::sqrt(0.5 / beta);
    });

    for (const auto& err : row_errors) {
        if (err.empty()) continue;
        if (err.find("did not converge") != std::string::npos) throw NumericError(err);
        throw InputError(err);
    }
    return ConditionalAffinities{Tensor({n, n}, std::move(p)), std::move(sigma)};
}

Tensor symmetrize(const Tensor& conditional) {
    if (conditional.rank() != 2 || conditional.dim(0) != conditional.dim(1))
        throw DimensionError("conditional matrix must be square, got " + conditional.shape_str());
    const std::size_t n = conditional.dim(0);
    const auto c = conditional.data();
    std::vector<double> p(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) p[i * n + j] = (c[i * n + j] + c[j * n + i]) / (2.0 * static_cast<double>(n));
    return Tensor({n, n}, std::move(p));
}

Tensor low_dim_affinities(const Tensor& y) {
    if (y.rank() != 2) throw DimensionError("embedding must be [n,dims], got " + y.shape_str());
    const std::size_t n = y.dim(0);
    if (n < 2) throw InputError("affinities need at least 2 points");
    std::vector<double> w(n * n, 0.0);
    const double wsum = student_t_weights(y.data(), n, y.dim(1), w);
    for (double& v : w) v /= wsum;
    return Tensor({n, n}, std::move(w));
}

double kl_divergence(const Tensor& p, const Tensor& q) {
    if (!same_shape(p, q) || p.rank() != 2 || p.dim(0) != p.dim(1))
        throw DimensionError("KL needs matching square matrices");
    const std::size_t n = p.dim(0);
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double pij = p[i * n + j];
            if (pij <= 0.0) continue;
            kl += pij * std::log(std::max(pij, kLogFloor) / std::max(q[i * n + j], kLogFloor));
        }
    return kl;
}

void TsneConfig::validate() const {
    if (!(perplexity > 1.0)) throw ContractError("perplexity must exceed 1");
    if (out_dims < 1) throw ContractError("output dimension must be >= 1");
    if (iterations < 1) throw ContractError("iterations must be >= 1");
    if (learning_rate <= 0.0) throw ContractError("learning rate must be positive");
    if (exaggeration < 1.0) throw ContractError("exaggeration must be >= 1");
}

namespace {

// Gradient 4 sum_j (exag*p_ij - q_ij)(y_i - y_j) w_ij where q = w/wsum.
void student_t_gradient(std::span<const double> pd, std::span<const double> y, std::size_t n,
                        std::size_t dims, double exag, std::vector<double>& w, double& wsum,
                        std::vector<double>& grad) {
    wsum = student_t_weights(y, n, dims, w);
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double qij = w[i * n + j] / wsum;
            const double coeff = 4.0 * (exag * pd[i * n + j] - qij) * w[i * n + j];
            for (std::size_t k = 0; k < dims; ++k)
                grad[i * dims + k] += coeff * (y[i * dims + k] - y[j * dims + k]);
        }
}

}  // namespace

Tensor tsne_gradient(const Tensor& p, const Tensor& y) {
    if (p.rank() != 2 || p.dim(0) != p.dim(1))
        throw DimensionError("affinity matrix must be square, got " + p.shape_str());
    if (y.rank() != 2 || y.dim(0) != p.dim(0))
        throw DimensionError("embedding rows must match the affinity matrix");
    const std::size_t n = y.dim(0), dims = y.dim(1);
    std::vector<double> yv(y.data().begin(), y.data().end());
    std::vector<double> w(n * n, 0.0), grad(n * dims, 0.0);
    double wsum = 0.0;
    student_t_gradient(p.data(), yv, n, dims, 1.0, w, wsum, grad);
    return Tensor({n, dims}, std::move(grad));
}

Embedding tsne_optimize(const Tensor& p, const TsneConfig& cfg, const Tensor* y0) {
    cfg.validate();
    if (p.rank() != 2 || p.dim(0) != p.dim(1))
        throw DimensionError("affinity matrix must be square, got " + p.shape_str());
    const std::size_t n = p.dim(0);
    const std::size_t dims = y0 ? y0->dim(1) : cfg.out_dims;

    std::vector<double> y(n * dims);
    if (y0) {
        if (y0->rank() != 2 || y0->dim(0) != n)
            throw DimensionError("initial embedding must be [n,dims]");
        std::copy(y0->data().begin(), y0->data().end(), y.begin());
    } else {
        Rng rng(cfg.seed);
        for (double& v : y) v = 0.01 * rng.normal();
    }

    Embedding out;
    out.kl_trace.reserve(cfg.iterations);
    std::vector<double> inc(n * dims, 0.0);
    std::vector<double> gains(n * dims, 1.0);
    std::vector<double> grad(n * dims, 0.0);
    std::vector<double> w(n * n, 0.0);
    const auto pd = p.data();

    for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
        const double exag = iter < cfg.exaggeration_iters ? cfg.exaggeration : 1.0;
        double wsum = 0.0;
        student_t_gradient(pd, y, n, dims, exag, w, wsum, grad);

        for (const double g : grad)
            if (std::isnan(g))
                throw NumericError("NaN gradient at iteration " + std::to_string(iter));

        const double momentum =
            iter < cfg.momentum_switch ? cfg.momentum_early : cfg.momentum_late;
        for (std::size_t t = 0; t < y.size(); ++t) {
            // delta-bar-delta gains: grow while the step keeps descending the
            // same way, shrink under oscillation (inc carries -grad's sign)
            gains[t] = (grad[t] > 0.0) != (inc[t] > 0.0) ? gains[t] + 0.2 : gains[t] * 0.8;
            if (gains[t] < 0.01) gains[t] = 0.01;
            inc[t] = momentum * inc[t] - cfg.learning_rate * gains[t] * grad[t];
            y[t] += inc[t];
        }
        // recenter to keep the embedding from drifting; sub-ulp shifts are
        // skipped so an exact stationary point stays bitwise fixed
        for (std::size_t k = 0; k < dims; ++k) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += y[i * dims + k];
            mean /= static_cast<double>(n);
            if (std::fabs(mean) <= 1e-12) continue;
            for (std::size_t i = 0; i < n; ++i) y[i * dims + k] -= mean;
        }

        double kl = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double pij = pd[i * n + j];
                if (pij <= 0.0) continue;
                const double qij = w[i * n + j] / wsum;
                kl += pij * std::log(std::max(pij, kLogFloor) / std::max(qij, kLogFloor));
            }
        out.kl_trace.push_back(kl);
    }

    out.y = Tensor({n, dims}, std::move(y));
    return out;
}

Embedding tsne_fit(const Tensor& x, const TsneConfig& cfg) {
    if (x.rank() != 2) throw DimensionError("tsne input must be [n,d], got " + x.shape_str());
    const std::size_t n = x.dim(0);
    if (n < 5) throw InputError("tsne needs at least 5 points");
    TsneConfig effective = cfg;
    effective.perplexity =
        std::min(cfg.perplexity, static_cast<double>(n - 1) / 3.0);
    ConditionalAffinities cond = conditional_affinities(x, effective.perplexity);
    Tensor p = symmetrize(cond.p);
    return tsne_optimize(p, effective);
}

void write_embedding_csv(const std::string& path, const Tensor& y,
                         const std::vector<EmbeddingPointMeta>& meta) {
    if (y.rank() != 2 || y.dim(0) != meta.size())
        throw InputError("embedding rows and metadata rows must correspond");
    std::ofstream out(path);
    if (!out) throw InputError("cannot write embedding to '" + path + "'");
    const std::size_t dims = y.dim(1);
    out << "id";
    for (std::size_t k = 0; k < dims; ++k) out << ",y" << k + 1;
    out << ",label,band\n";
    char buf[40];
    for (std::size_t i = 0; i < meta.size(); ++i) {
        out << meta[i].id;
        for (std::size_t k = 0; k < dims; ++k) {
            std::snprintf(buf, sizeof(buf), ",%.17g", y[i * dims + k]);
            out << buf;
        }
        out << ',' << meta[i].label << ',' << meta[i].band << '\n';
    }
}

VectorDataset read_vector_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read vectors from '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw InputError("'" + path + "' is empty");

    auto split_fields = [](const std::string& s) {
        std::vector<std::string> fields;
        std::stringstream ss(s);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (!s.empty() && s.back() == ',') fields.push_back("");
        return fields;
    };

    const std::vector<std::string> header = split_fields(line);
    std::ptrdiff_t id_col = -1, label_col = -1, e_col = -1;
    std::vector<std::size_t> feature_cols;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == "id")
            id_col = static_cast<std::ptrdiff_t>(c);
        else if (header[c] == "label")
            label_col = static_cast<std::ptrdiff_t>(c);
        else if (header[c] == "E")
            e_col = static_cast<std::ptrdiff_t>(c);
        else
            feature_cols.push_back(c);
    }
    if (feature_cols.empty()) throw InputError("'" + path + "' has no feature columns");

    VectorDataset out;
    out.has_labels = label_col >= 0;
    out.has_e = e_col >= 0;
    std::vector<double> x;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_fields(line);
        if (fields.size() != header.size())
            throw InputError("row " + std::to_string(rows + 1) + " has " +
                             std::to_string(fields.size()) + " fields, expected " +
                             std::to_string(header.size()));
        try {
            for (const std::size_t c : feature_cols) x.push_back(std::stod(fields[c]));
            out.ids.push_back(id_col >= 0 ? fields[static_cast<std::size_t>(id_col)]
                                          : std::to_string(rows));
            if (out.has_labels)
                out.labels.push_back(std::stoul(fields[static_cast<std::size_t>(label_col)]));
            if (out.has_e)
                out.e.push_back(std::stod(fields[static_cast<std::size_t>(e_col)]));
        } catch (const std::logic_error&) {
            throw InputError("row " + std::to_string(rows + 1) + " of '" + path +
                             "' is not numeric");
        }
        ++rows;
    }
    if (rows == 0) throw InputError("'" + path + "' holds no data rows");
    out.x = Tensor({rows, feature_cols.size()}, std::move(x));
    return out;
}

}  // namespace bvar
