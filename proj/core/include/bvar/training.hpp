#pragma once

// Variational Free Energy minimization: the NLL and VFE losses, minibatch
// gradient descent (SGD or Adam) with early stopping on validation accuracy,
// and the per-epoch training trace.

#include <cstdint>
#include <string>
#include <vector>

#include "bvar/data.hpp"
#include "bvar/network.hpp"
#include "bvar/variational.hpp"

namespace bvar {

enum class Optimizer { kSgd, kAdam };

struct TrainingConfig {
    double learning_rate = 0.0001;
    std::size_t batch_size = 64;
    std::size_t epochs = 30;
    std::size_t mc_samples_train = 1;
    double kl_weight = -1.0;  // negative: 1/num_batches per minibatch
    std::uint64_t seed = 0;
    std::size_t early_stop_patience = 10;
    Optimizer optimizer = Optimizer::kSgd;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    Prior prior;

    void validate() const;
};

struct TraceRow {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
};
using TrainingTrace = std::vector<TraceRow>;

// Mean over the batch of -log softmax(logits)[label], probabilities clamped
// at 1e-12 before the log.
Tensor nll_loss(Graph& g, const Tensor& logits, const std::vector<std::size_t>& labels);

struct VfeResult {
    double loss = 0.0;
    double kl_term = 0.0;   // sample-averaged KL estimate, before weighting
    double nll_term = 0.0;  // sample-averaged NLL
    std::vector<Tensor> grad_mu;   // aligned with Network::blocks()
    std::vector<Tensor> grad_rho;
};

// Averages (kl_weight * KL + NLL) over mc_samples fresh weight draws and
// returns gradients for every block.
VfeResult vfe_loss(const Network& net, const Tensor& batch, const std::vector<std::size_t>& labels,
                   const Prior& prior, double kl_weight, std::size_t mc_samples, Rng& rng);

// Argmax class of the posterior-mean (eps = 0) network per item, evaluated in
// batches of batch_size; argmax ties predict 0.
std::vector<std::size_t> predict_classes(const Network& net,
                                         const std::vector<LabeledImage>& items,
                                         std::size_t batch_size);

// Accuracy of the posterior-mean (eps = 0) network; argmax ties predict 0.
double mean_accuracy(const Network& net, const std::vector<LabeledImage>& items,
                     std::size_t batch_size);

struct TrainResult {
    Network network;  // parameters from the best validation epoch
    TrainingTrace trace;
    std::size_t best_epoch = 0;  // 1-based; ties resolved to the earliest
};

TrainResult train(Network net, const DatasetSplit& splits, const TrainingConfig& cfg);

void write_trace_csv(const std::string& path, const TrainingTrace& trace);

}  // namespace bvar
