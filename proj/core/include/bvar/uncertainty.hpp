#pragma once

// Monte-Carlo predictive distributions and the covariance split into
// aleatoric (data) and epistemic (model) parts, plus per-image records with
// dataset-level normalization and CSV serialization.

#include <string>
#include <vector>

#include "bvar/network.hpp"
#include "bvar/tensor.hpp"

namespace bvar {

struct PredictiveSampleSet {
    std::vector<Tensor> samples;  // N softmax vectors, each [K]
    Tensor mean;                  // [K], sample average

    // Checks that every sample is a probability vector (sum 1 within 1e-10)
    // and that mean matches the recomputed average within 1e-12.
    void validate() const;
};

// Draws n independent weight realizations (one derived RNG stream per draw,
// so results do not depend on scheduling) and runs one forward pass each.
// image is a single [C,H,W] tensor. kZeros collapses every draw onto the
// posterior mean.
PredictiveSampleSet predictive_samples(const Network& net, const Tensor& image, std::size_t n,
                                       const Rng& rng, NoiseMode mode = NoiseMode::kSampled);

// (1/N) sum of diag(p) - p p^T per sample: uncertainty the data itself
// carries, surviving even a perfectly known model.
Tensor aleatoric(const PredictiveSampleSet& set);

// (1/N) sum of (p - mean)(p - mean)^T: spread caused by weight uncertainty,
// zero when every draw agrees.
Tensor epistemic(const PredictiveSampleSet& set);

double matrix_trace(const Tensor& m);

struct UncertaintyRecord {
    std::string id;
    std::size_t predicted = 0;  // argmax of the mean; ties go to class 0
    std::size_t label = 0;
    Tensor aleatoric_matrix;
    Tensor epistemic_matrix;
    double scalar_aleatoric = 0.0;   // trace of the aleatoric matrix
    double scalar_epistemic = 0.0;   // trace of the epistemic matrix
    double normalized_epistemic = 0.0;  // E in [0,1], set by normalize_epistemic
};

UncertaintyRecord make_record(const std::string& id, std::size_t label,
                              const PredictiveSampleSet& set);

// Min-max rescaling of scalar_epistemic over the list into [0,1]. A constant
// list (max == min) maps everything to 0.
void normalize_epistemic(std::vector<UncertaintyRecord>& records);

// CSV with header `id,pred,label,aleatoric,epistemic,E`; floats carry 17
// significant digits so a read back restores them bitwise. The matrices are
// not serialized.
void write_records_csv(const std::string& path, const std::vector<UncertaintyRecord>& records);
std::vector<UncertaintyRecord> read_records_csv(const std::string& path);

}  // namespace bvar
