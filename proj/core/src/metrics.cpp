#include "bvar/metrics.hpp"

#include <json.hpp>

#include "bvar/errors.hpp"

namespace bvar {

ConfusionMatrix confusion(const std::vector<std::size_t>& predictions,
                          const std::vector<std::size_t>& labels) {
    if (predictions.size() != labels.size())
        throw InputError("confusion needs one prediction per label: " +
                         std::to_string(predictions.size()) + " vs " +
                         std::to_string(labels.size()));
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (predictions[i] > 1 || labels[i] > 1)
            throw InputError("confusion is binary: classes must be 0 or 1");
        if (labels[i] == 1)
            ++(predictions[i] == 1 ? cm.tp : cm.fn);
        else
            ++(predictions[i] == 1 ? cm.fp : cm.tn);
    }
    return cm;
}

MetricsReport metrics(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw InputError("metrics over zero items are undefined");
    MetricsReport r;
    r.cm = cm;
    const auto n = static_cast<double>(cm.total());
    r.accuracy = static_cast<double>(cm.tp + cm.tn) / n;
    if (cm.tp + cm.fp > 0)
        r.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
    if (cm.tp + cm.fn > 0)
        r.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
    if (r.precision && r.recall && *r.precision + *r.recall > 0.0)
        r.f1 = 2.0 * *r.precision * *r.recall / (*r.precision + *r.recall);
    r.kappa = cohens_kappa(cm);
    return r;
}

std::optional<double> cohens_kappa(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw InputError("kappa over zero items is undefined");
    const auto n = static_cast<double>(cm.total());
    const double p_o = static_cast<double>(cm.tp + cm.tn) / n;
    const double pred_pos = static_cast<double>(cm.tp + cm.fp) / n;
    const double true_pos = static_cast<double>(cm.tp + cm.fn) / n;
    const double p_e = pred_pos * true_pos + (1.0 - pred_pos) * (1.0 - true_pos);
    if (p_e == 1.0) return std::nullopt;
    return (p_o - p_e) / (1.0 - p_e);
}

std::string metrics_json(const MetricsReport& report) {
    nlohmann::json j;
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v)
            j[key] = *v;
        else
            j[key] = nullptr;
    };
    put("accuracy", report.accuracy);
    put("precision", report.precision);
    put("recall", report.recall);
    put("f1", report.f1);
    put("kappa", report.kappa);
    j["tp"] = report.cm.tp;
    j["fp"] = report.cm.fp;
    j["fn"] = report.cm.fn;
    j["tn"] = report.cm.tn;
    return j.dump(2);
}

}  // namespace bvar
