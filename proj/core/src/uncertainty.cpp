#include "bvar/uncertainty.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bvar/parallel.hpp"

namespace bvar {

void PredictiveSampleSet::validate() const {
    if (samples.empty()) throw ContractError("predictive sample set is empty");
    const std::size_t k = samples.front().numel();
    std::vector<double> acc(k, 0.0);
    for (const Tensor& p : samples) {
        if (p.numel() != k) throw DimensionError("predictive samples differ in length");
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (p[j] < 0.0) throw ContractError("negative predictive probability");
            sum += p[j];
            acc[j] += p[j];
        }
        if (std::fabs(sum - 1.0) > 1e-10)
            throw ContractError("predictive sample sums to " + std::to_string(sum));
    }
    if (mean.numel() != k) throw DimensionError("predictive mean has wrong length");
    for (std::size_t j = 0; j < k; ++j)
        if (std::fabs(mean[j] - acc[j] / static_cast<double>(samples.size())) > 1e-12)
            throw ContractError("predictive mean inconsistent with samples");
}

PredictiveSampleSet predictive_samples(const Network& net, const Tensor& image, std::size_t n,
                                       const Rng& rng, NoiseMode mode) {
    if (n < 1) throw ContractError("predictive_samples needs n >= 1");
    if (image.rank() != 3) throw DimensionError("image must be [C,H,W], got " + image.shape_str());

    const Tensor batch = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
    PredictiveSampleSet out;
    out.samples.resize(n);
    parallel_for(n, [&](std::size_t i) {
        Rng child = rng.stream(i);
        Graph g;
        Network::ForwardResult fwd = net.forward(
            g, g.leaf(batch), mode, mode == NoiseMode::kSampled ? &child : nullptr);
        std::vector<double> row(fwd.output.data().begin(), fwd.output.data().end());
        const std::size_t k = row.size();
        out.samples[i] = Tensor({k}, std::move(row));
    });

    const std::size_t k = out.samples.front().numel();
    std::vector<double> mean(k, 0.0);
    for (const Tensor& p : out.samples)
        for (std::size_t j = 0; j < k; ++j) mean[j] += p[j];
    for (double& v : mean) v /= static_cast<double>(n);
    out.mean = Tensor({k}, std::move(mean));
    return out;
}

Tensor aleatoric(const PredictiveSampleSet& set) {
    set.validate();
    const std::size_t k = set.mean.numel();
    std::vector<double> a(k * k, 0.0);
    for (const Tensor& p : set.samples)
        for (std::size_t r = 0; r < k; ++r)
            for (std::size_t c = 0; c < k; ++c)
                a[r * k + c] += (r == c ? p[r] : 0.0) - p[r] * p[c];
    for (double& v : a) v /= static_cast<double>(set.samples.size());
    return Tensor({k, k}, std::move(a));
}

Tensor epistemic(const PredictiveSampleSet& set) {
    set.validate();
    const std::size_t k = set.mean.numel();
    std::vector<double> e(k * k, 0.0);
    for (const Tensor& p : set.samples)
        for (std::size_t r = 0; r < k; ++r)
            for (std::size_t c = 0; c < k; ++c)
                e[r * k + c] += (p[r] - set.mean[r]) * (p[c] - set.mean[c]);
    for (double& v : e) v /= static_cast<double>(set.samples.size());
    return Tensor({k, k}, std::move(e));
}

double matrix_trace(const Tensor& m) {
    if (m.rank() != 2 || m.dim(0) != m.dim(1))
        throw DimensionError("trace needs a square matrix, got " + m.shape_str());
    double t = 0.0;
    for (std::size_t i = 0; i < m.dim(0); ++i) t += m[i * m.dim(0) + i];
    return t;
}

UncertaintyRecord make_record(const std::string& id, std::size_t label,
                              const PredictiveSampleSet& set) {
    UncertaintyRecord rec;
    rec.id = id;
    rec.label = label;
    rec.predicted = 0;
    for (std::size_t j = 1; j < set.mean.numel(); ++j)
        if (set.mean[j] > set.mean[rec.predicted]) rec.predicted = j;
    rec.aleatoric_matrix = aleatoric(set);
    rec.epistemic_matrix = epistemic(set);
    rec.scalar_aleatoric = matrix_trace(rec.aleatoric_matrix);
    rec.scalar_epistemic = matrix_trace(rec.epistemic_matrix);
    return rec;
}

void normalize_epistemic(std::vector<UncertaintyRecord>& records) {
    if (records.empty()) throw InputError("cannot normalize an empty record list");
    double lo = records.front().scalar_epistemic, hi = lo;
    for (const auto& r : records) {
        lo = std::min(lo, r.scalar_epistemic);
        hi = std::max(hi, r.scalar_epistemic);
    }
    for (auto& r : records)
        r.normalized_epistemic = hi == lo ? 0.0 : (r.scalar_epistemic - lo) / (hi - lo);
}

void write_records_csv(const std::string& path, const std::vector<UncertaintyRecord>& records) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write records to '" + path + "'");
    out << "id,pred,label,aleatoric,epistemic,E\n";
    char buf[160];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof(buf), ",%zu,%zu,%.17g,%.17g,%.17g\n", r.predicted, r.label,
                      r.scalar_aleatoric, r.scalar_epistemic, r.normalized_epistemic);
        out << r.id << buf;
    }
}

std::vector<UncertaintyRecord> read_records_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read records from '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != "id,pred,label,aleatoric,epistemic,E")
        throw InputError("'" + path + "' is not an uncertainty record CSV");
    std::vector<UncertaintyRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::size_t cut = line.find(',');
        if (cut == std::string::npos)
            throw InputError("malformed record row: '" + line + "'");
        UncertaintyRecord rec;
        rec.id = line.substr(0, cut);
        if (std::sscanf(line.c_str() + cut, ",%zu,%zu,%lg,%lg,%lg", &rec.predicted, &rec.label,
                        &rec.scalar_aleatoric, &rec.scalar_epistemic,
                        &rec.normalized_epistemic) != 5)
            throw InputError("malformed record row: '" + line + "'");
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace bvar
