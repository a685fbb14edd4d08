#pragma once

// Uncertainty-based referral: split records at a scalar threshold, sweep a
// threshold grid into an accuracy/retention curve, and partition by the
// normalized epistemic bands.

#include <optional>
#include <string>
#include <vector>

#include "bvar/metrics.hpp"
#include "bvar/uncertainty.hpp"

namespace bvar {

enum class UncertaintyField { kAleatoric, kEpistemic };

double field_value(const UncertaintyRecord& rec, UncertaintyField field);

struct ThresholdSplit {
    std::vector<UncertaintyRecord> low;   // scalar <= threshold, kept for the model
    std::vector<UncertaintyRecord> high;  // referred onward
};

ThresholdSplit threshold_split(const std::vector<UncertaintyRecord>& records, double threshold,
                               UncertaintyField field);

struct TriageRow {
    double threshold = 0.0;
    double retained_fraction = 0.0;
    // Unset when nothing falls below the threshold; plots should gap there
    // instead of drawing a misleading zero.
    std::optional<double> retained_accuracy;
    std::size_t fn_count = 0;
    std::size_t fp_count = 0;
    double referred_fraction = 0.0;
};
using TriageCurve = std::vector<TriageRow>;

// One row per threshold, thresholds strictly ascending. Counts come from the
// retained (low) subset only.
TriageCurve sweep(const std::vector<UncertaintyRecord>& records,
                  const std::vector<double>& thresholds, UncertaintyField field);

// Evenly spaced thresholds from 0 to the observed maximum of the field.
std::vector<double> default_grid(const std::vector<UncertaintyRecord>& records,
                                 UncertaintyField field, std::size_t points = 50);

struct BandPartition {
    std::vector<UncertaintyRecord> low;     // E <= 0.01
    std::vector<UncertaintyRecord> medium;  // 0.01 < E <= 0.1
    std::vector<UncertaintyRecord> high;    // E > 0.1
};

// Requires normalized E in [0,1] on every record and 0 <= low < high.
BandPartition band_partition(const std::vector<UncertaintyRecord>& records,
                             double low = 0.01, double high = 0.1);

// CSV with header `threshold,retained_frac,retained_acc,fn,fp,referred_frac`;
// an undefined accuracy is written as `nan`.
void write_curve_csv(const std::string& path, const TriageCurve& curve);

}  // namespace bvar
