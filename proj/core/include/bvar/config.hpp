#pragma once

// Plain-text `key = value` run configuration. Every key is optional; unset
// keys fall back to documented defaults, with the learning rate and batch
// size keyed to the chosen architecture when left blank (bayesian_cnn
// 0.001/128, modified_bayesian_cnn 0.0001/64).

#include <cstdint>
#include <optional>
#include <string>

#include "bvar/network.hpp"
#include "bvar/training.hpp"

namespace bvar {

struct RunConfig {
    // training
    std::optional<std::string> arch;  // bayesian_cnn | modified_bayesian_cnn
    std::optional<double> learning_rate;
    std::optional<std::size_t> batch_size;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> mc_samples;
    std::optional<double> kl_weight;
    std::optional<std::size_t> patience;
    std::optional<std::string> optimizer;  // sgd | adam
    std::optional<std::string> prior;      // gaussian | scale_mixture
    std::optional<double> prior_sigma;
    std::optional<double> prior_pi;
    std::optional<double> prior_sigma1;
    std::optional<double> prior_sigma2;
    std::optional<std::string> padding;  // same | valid, applied to preset convolutions
    std::optional<std::uint64_t> seed;

    // prediction and triage
    std::optional<std::size_t> predict_samples;
    std::optional<double> band_low;
    std::optional<double> band_high;
    std::optional<std::size_t> grid;

    // embedding
    std::optional<double> perplexity;
    std::optional<std::size_t> tsne_iterations;
    std::optional<double> tsne_learning_rate;
    std::optional<double> tsne_exaggeration;

    // paths
    std::optional<std::string> data_dir;
    std::optional<std::string> model_path;
    std::optional<std::string> out_path;
    std::optional<std::string> trace_path;
};

// Parses `key = value` lines; '#' starts a comment, blank lines are skipped,
// later assignments override earlier ones. Unknown keys and malformed values
// raise InputError.
RunConfig parse_run_config_text(const std::string& text);
RunConfig parse_run_config(const std::string& path);

// Architecture name with the default applied.
std::string resolved_arch(const RunConfig& rc);

// TrainingConfig with per-architecture learning-rate/batch-size defaults.
TrainingConfig resolve_training(const RunConfig& rc);

// Architecture preset for the given input geometry with the padding override
// applied to its convolutions.
NetworkSpec resolve_spec(const RunConfig& rc, std::size_t in_c, std::size_t in_h,
                         std::size_t in_w);

}  // namespace bvar
