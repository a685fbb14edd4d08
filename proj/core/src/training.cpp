#include "bvar/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace bvar {

void TrainingConfig::validate() const {
    // learning_rate 0 is allowed and must be a bitwise no-op.
    if (learning_rate < 0.0) throw ContractError("learning rate must be non-negative");
    if (batch_size < 1) throw ContractError("batch size must be >= 1");
    if (mc_samples_train < 1) throw ContractError("mc_samples_train must be >= 1");
    prior.validate();
}

Tensor nll_loss(Graph& g, const Tensor& logits, const std::vector<std::size_t>& labels) {
    Tensor picked = g.pick_class(g.softmax(logits), labels);
    return g.mul_const(g.mean(g.log(g.clamp_min(picked, 1e-12))), -1.0);
}

namespace {

Tensor make_batch(const std::vector<LabeledImage>& items, const std::vector<std::size_t>& order,
                  std::size_t from, std::size_t to, std::vector<std::size_t>* labels) {
    const Tensor& first = items[order[from]].pixels;
    if (first.rank() != 3) throw DimensionError("image tensors must be [C,H,W]");
    const std::size_t per = first.numel();
    std::vector<double> buf((to - from) * per);
    if (labels) labels->clear();
    for (std::size_t i = from; i < to; ++i) {
        const LabeledImage& item = items[order[i]];
        if (!same_shape(item.pixels, first))
            throw DimensionError("image '" + item.id + "' has shape " + item.pixels.shape_str() +
                                 ", expected " + first.shape_str());
        const auto d = item.pixels.data();
        std::copy(d.begin(), d.end(), buf.begin() + static_cast<std::ptrdiff_t>((i - from) * per));
        if (labels) labels->push_back(item.label);
    }
    return Tensor({to - from, first.dim(0), first.dim(1), first.dim(2)}, std::move(buf));
}

std::size_t argmax_row(const double* row, std::size_t k) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

void add_into(std::vector<double>& acc, const Tensor& t) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += t[i];
}

}  // namespace

VfeResult vfe_loss(const Network& net, const Tensor& batch, const std::vector<std::size_t>& labels,
                   const Prior& prior, double kl_weight, std::size_t mc_samples, Rng& rng) {
    if (batch.rank() != 4 || batch.dim(0) == 0) throw InputError("vfe_loss needs a nonempty batch");
    if (labels.size() != batch.dim(0)) throw InputError("one label per batch row required");
    if (mc_samples < 1) throw ContractError("mc_samples must be >= 1");

    Graph g;
    Tensor x = g.leaf(batch);
    std::vector<Network::ForwardResult> passes;
    passes.reserve(mc_samples);
    Tensor total;
    double kl_sum = 0.0, nll_sum = 0.0;
    for (std::size_t s = 0; s < mc_samples; ++s) {
        Network::ForwardResult fwd =
            net.forward(g, x, NoiseMode::kSampled, &rng, /*apply_softmax=*/false);
        Tensor nll = nll_loss(g, fwd.output, labels);

        Tensor kl = g.leaf(Tensor::scalar(0.0));
        const auto& blocks = net.blocks();
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            if (!blocks[i].in_kl) continue;
            Tensor lq = log_q(g, fwd.mu_leaves[i], fwd.rho_leaves[i], fwd.samples[i]);
            Tensor lp = log_prior(g, prior, fwd.samples[i]);
            kl = g.add(kl, g.sub(lq, lp));
        }

        const double kl_v = kl.value(), nll_v = nll.value();
        if (!std::isfinite(kl_v))
            throw NumericError("VFE KL term non-finite at sample " + std::to_string(s));
        if (!std::isfinite(nll_v))
            throw NumericError("VFE likelihood term non-finite at sample " + std::to_string(s));
        kl_sum += kl_v;
        nll_sum += nll_v;

        Tensor term = g.add(g.mul_const(kl, kl_weight), nll);
        total = s == 0 ? term : g.add(total, term);
        passes.push_back(std::move(fwd));
    }
    total = g.mul_const(total, 1.0 / static_cast<double>(mc_samples));

    VfeResult out;
    out.loss = total.value();
    out.kl_term = kl_sum / static_cast<double>(mc_samples);
    out.nll_term = nll_sum / static_cast<double>(mc_samples);
    if (!std::isfinite(out.loss)) throw NumericError("VFE loss non-finite");

    const auto grads = g.backward(total);
    const std::size_t nb = net.blocks().size();
    out.grad_mu.reserve(nb);
    out.grad_rho.reserve(nb);
    for (std::size_t i = 0; i < nb; ++i) {
        std::vector<double> gm(net.blocks()[i].mu.numel(), 0.0);
        std::vector<double> gr(gm.size(), 0.0);
        for (const auto& fwd : passes) {
            add_into(gm, grads[static_cast<std::size_t>(fwd.mu_leaves[i].node())]);
            add_into(gr, grads[static_cast<std::size_t>(fwd.rho_leaves[i].node())]);
        }
        out.grad_mu.emplace_back(net.blocks()[i].mu.shape(), std::move(gm));
        out.grad_rho.emplace_back(net.blocks()[i].rho.shape(), std::move(gr));
    }
    return out;
}

std::vector<std::size_t> predict_classes(const Network& net,
                                         const std::vector<LabeledImage>& items,
                                         std::size_t batch_size) {
    if (items.empty()) throw InputError("cannot predict over an empty set");
    if (batch_size == 0) throw ContractError("batch_size must be positive");
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<std::size_t> preds(items.size());
    for (std::size_t from = 0; from < items.size(); from += batch_size) {
        const std::size_t to = std::min(items.size(), from + batch_size);
        Tensor batch = make_batch(items, order, from, to, nullptr);
        Graph g;
        Network::ForwardResult fwd = net.forward(g, g.leaf(batch), NoiseMode::kZeros, nullptr);
        const std::size_t k = fwd.output.dim(1);
        const double* p = fwd.output.data().data();
        for (std::size_t r = 0; r < to - from; ++r)
            preds[from + r] = argmax_row(p + r * k, k);
    }
    return preds;
}

double mean_accuracy(const Network& net, const std::vector<LabeledImage>& items,
                     std::size_t batch_size) {
    if (items.empty()) throw InputError("accuracy over an empty set is undefined");
    const std::vector<std::size_t> preds = predict_classes(net, items, batch_size);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < items.size(); ++i)
        if (preds[i] == items[i].label) ++correct;
    return static_cast<double>(correct) / static_cast<double>(items.size());
}

namespace {

struct AdamState {
    std::vector<std::vector<double>> m_mu, v_mu, m_rho, v_rho;
    std::size_t t = 0;
};

void apply_update(Network& net, const VfeResult& grads, const TrainingConfig& cfg,
                  AdamState& adam) {
    const double lr = cfg.learning_rate;
    if (cfg.optimizer == Optimizer::kSgd) {
        for (std::size_t i = 0; i < net.blocks().size(); ++i) {
            const auto& b = net.blocks()[i];
            std::vector<double> mu(b.mu.data().begin(), b.mu.data().end());
            std::vector<double> rho(b.rho.data().begin(), b.rho.data().end());
            for (std::size_t j = 0; j < mu.size(); ++j) {
                mu[j] -= lr * grads.grad_mu[i][j];
                rho[j] -= lr * grads.grad_rho[i][j];
            }
            net.set_block_values(i, Tensor(b.mu.shape(), std::move(mu)),
                                 Tensor(b.rho.shape(), std::move(rho)));
        }
        return;
    }

    if (adam.m_mu.empty()) {
        for (const auto& b : net.blocks()) {
            adam.m_mu.emplace_back(b.mu.numel(), 0.0);
            adam.v_mu.emplace_back(b.mu.numel(), 0.0);
            adam.m_rho.emplace_back(b.rho.numel(), 0.0);
            adam.v_rho.emplace_back(b.rho.numel(), 0.0);
        }
    }
    adam.t += 1;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(adam.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(adam.t));
    for (std::size_t i = 0; i < net.blocks().size(); ++i) {
        const auto& b = net.blocks()[i];
        std::vector<double> mu(b.mu.data().begin(), b.mu.data().end());
        std::vector<double> rho(b.rho.data().begin(), b.rho.data().end());
        auto step = [&](std::vector<double>& p, const Tensor& grad, std::vector<double>& m,
                        std::vector<double>& v) {
            for (std::size_t j = 0; j < p.size(); ++j) {
                m[j] = b1 * m[j] + (1.0 - b1) * grad[j];
                v[j] = b2 * v[j] + (1.0 - b2) * grad[j] * grad[j];
                p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.adam_eps);
            }
        };
        step(mu, grads.grad_mu[i], adam.m_mu[i], adam.v_mu[i]);
        step(rho, grads.grad_rho[i], adam.m_rho[i], adam.v_rho[i]);
        net.set_block_values(i, Tensor(b.mu.shape(), std::move(mu)),
                             Tensor(b.rho.shape(), std::move(rho)));
    }
}

}  // namespace

TrainResult train(Network net, const DatasetSplit& splits, const TrainingConfig& cfg) {
    cfg.validate();
    if (splits.train.empty() || splits.validation.empty())
        throw InputError("training needs nonempty train and validation splits");

    const std::size_t n = splits.train.size();
    const std::size_t num_batches = (n + cfg.batch_size - 1) / cfg.batch_size;
    const double kl_w =
        cfg.kl_weight < 0.0 ? 1.0 / static_cast<double>(num_batches) : cfg.kl_weight;

    Rng rng = Rng(cfg.seed).stream(1);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    TrainResult result{net, {}, 0};
    double best_val = -1.0;
    std::vector<Network::Block> best_blocks = net.blocks();
    AdamState adam;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        double loss_weighted = 0.0;
        for (std::size_t from = 0; from < n; from += cfg.batch_size) {
            const std::size_t to = std::min(n, from + cfg.batch_size);
            std::vector<std::size_t> labels;
            Tensor batch = make_batch(splits.train, order, from, to, &labels);
            VfeResult r =
                vfe_loss(net, batch, labels, cfg.prior, kl_w, cfg.mc_samples_train, rng);
            apply_update(net, r, cfg, adam);
            loss_weighted += r.loss * static_cast<double>(to - from);
        }

        TraceRow row;
        row.epoch = epoch;
        row.train_loss = loss_weighted / static_cast<double>(n);
        row.train_acc = mean_accuracy(net, splits.train, cfg.batch_size);
        row.val_acc = mean_accuracy(net, splits.validation, cfg.batch_size);
        result.trace.push_back(row);

        if (row.val_acc > best_val) {
            best_val = row.val_acc;
            result.best_epoch = epoch;
            best_blocks = net.blocks();
        } else if (epoch - result.best_epoch >= cfg.early_stop_patience) {
            break;
        }
    }

    result.network = Network(net.spec(), std::move(best_blocks));
    return result;
}

void write_trace_csv(const std::string& path, const TrainingTrace& trace) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write trace to '" + path + "'");
    out << "epoch,train_loss,train_acc,val_acc\n";
    char buf[96];
    for (const TraceRow& r : trace) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss,
                      r.train_acc, r.val_acc);
        out << buf;
    }
}

}  // namespace bvar
