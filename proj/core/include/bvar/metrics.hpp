#pragma once

// Binary classification quality metrics. Degenerate denominators produce
// empty optionals rather than silent zeros; the JSON report writes them as
// null.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "bvar/errors.hpp"

namespace bvar {

// Positive class is label 1.
struct ConfusionMatrix {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t tn = 0;

    std::size_t total() const { return tp + fp + fn + tn; }
};

ConfusionMatrix confusion(const std::vector<std::size_t>& predictions,
                          const std::vector<std::size_t>& labels);

struct MetricsReport {
    std::optional<double> accuracy;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;
    std::optional<double> kappa;
    ConfusionMatrix cm;
};

// accuracy=(tp+tn)/total, precision=tp/(tp+fp), recall=tp/(tp+fn), f1 the
// harmonic mean of the two. Any zero denominator leaves that entry (and f1,
// which needs both) unset.
MetricsReport metrics(const ConfusionMatrix& cm);

// kappa = (p_o - p_e) / (1 - p_e); unset when p_e == 1 (both sides constant).
// Negative values are possible (worse-than-chance agreement).
std::optional<double> cohens_kappa(const ConfusionMatrix& cm);

// Flat JSON object with keys accuracy, precision, recall, f1, kappa, tp, fp,
// fn, tn; unset metrics serialize as null.
std::string metrics_json(const MetricsReport& report);

}  // namespace bvar
