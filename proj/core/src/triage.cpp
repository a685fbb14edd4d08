#include "bvar/triage.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace bvar {

double field_value(const UncertaintyRecord& rec, UncertaintyField field) {
    return field == UncertaintyField::kAleatoric ? rec.scalar_aleatoric : rec.scalar_epistemic;
}

ThresholdSplit threshold_split(const std::vector<UncertaintyRecord>& records, double threshold,
                               UncertaintyField field) {
    if (!std::isfinite(threshold)) throw InputError("triage threshold must be finite");
    ThresholdSplit out;
    for (const auto& rec : records)
        (field_value(rec, field) <= threshold ? out.low : out.high).push_back(rec);
    return out;
}

TriageCurve sweep(const std::vector<UncertaintyRecord>& records,
                  const std::vector<double>& thresholds, UncertaintyField field) {
    for (std::size_t i = 1; i < thresholds.size(); ++i)
        if (!(thresholds[i - 1] < thresholds[i]))
            throw InputError("sweep thresholds must be strictly ascending");

    TriageCurve curve;
    curve.reserve(thresholds.size());
    for (const double t : thresholds) {
        ThresholdSplit split = threshold_split(records, t, field);
        TriageRow row;
        row.threshold = t;
        row.retained_fraction =
            records.empty() ? 0.0
                            : static_cast<double>(split.low.size()) /
                                  static_cast<double>(records.size());
        row.referred_fraction = records.empty() ? 1.0 : 1.0 - row.retained_fraction;
        if (!split.low.empty()) {
            std::vector<std::size_t> preds, labels;
            for (const auto& rec : split.low) {
                preds.push_back(rec.predicted);
                labels.push_back(rec.label);
            }
            const ConfusionMatrix cm = confusion(preds, labels);
            row.retained_accuracy = metrics(cm).accuracy;
            row.fn_count = cm.fn;
            row.fp_count = cm.fp;
        }
        curve.push_back(row);
    }
    return curve;
}

std::vector<double> default_grid(const std::vector<UncertaintyRecord>& records,
                                 UncertaintyField field, std::size_t points) {
    if (records.empty()) throw InputError("cannot build a threshold grid from no records");
    if (points < 2) throw ContractError("threshold grid needs at least 2 points");
    double hi = 0.0;
    for (const auto& rec : records) hi = std::max(hi, field_value(rec, field));
    std::vector<double> grid(points);
    // A constant-zero field still needs an ascending grid; sweep any range.
    if (hi == 0.0) hi = 1.0;
    for (std::size_t i = 0; i < grid.size(); ++i)
        grid[i] = hi * static_cast<double>(i) / static_cast<double>(grid.size() - 1);
    return grid;
}

BandPartition band_partition(const std::vector<UncertaintyRecord>& records,
                             double low, double high) {
    if (!(low >= 0.0 && low < high))
        throw ContractError("band cutoffs must satisfy 0 <= low < high");
    BandPartition out;
    for (const auto& rec : records) {
        const double e = rec.normalized_epistemic;
        if (!(e >= 0.0 && e <= 1.0))
            throw ContractError("record '" + rec.id + "' has unnormalized E = " +
                                std::to_string(e));
        if (e <= low)
            out.low.push_back(rec);
        else if (e <= high)
            out.medium.push_back(rec);
        else
            out.high.push_back(rec);
    }
    return out;
}

void write_curve_csv(const std::string& path, const TriageCurve& curve) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write curve to '" + path + "'");
    out << "threshold,retained_frac,retained_acc,fn,fp,referred_frac\n";
    char buf[192];
    for (const TriageRow& r : curve) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%zu,%zu,%.17g\n", r.threshold,
                      r.retained_fraction,
                      r.retained_accuracy ? *r.retained_accuracy
                                          : std::numeric_limits<double>::quiet_NaN(),
                      r.fn_count, r.fp_count, r.referred_fraction);
        out << buf;
    }
}

}  // namespace bvar
