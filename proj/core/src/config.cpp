#include "bvar/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "bvar/errors.hpp"

namespace bvar {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

double parse_double(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &used);
    } catch (const std::logic_error&) {
        throw InputError("config key '" + key + "' needs a number, got '" + value + "'");
    }
    if (used != value.size())
        throw InputError("config key '" + key + "' needs a number, got '" + value + "'");
    return v;
}

std::size_t parse_count(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(value, &used);
    } catch (const std::logic_error&) {
        throw InputError("config key '" + key + "' needs a nonnegative integer, got '" + value +
                         "'");
    }
    if (used != value.size() || value.front() == '-')
        throw InputError("config key '" + key + "' needs a nonnegative integer, got '" + value +
                         "'");
    return static_cast<std::size_t>(v);
}

}  // namespace

RunConfig parse_run_config_text(const std::string& text) {
    RunConfig rc;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw InputError("config line " + std::to_string(lineno) +
                             " is not of the form key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw InputError("config line " + std::to_string(lineno) +
                             " is not of the form key = value");

        if (key == "arch")
            rc.arch = value;
        else if (key == "learning_rate")
            rc.learning_rate = parse_double(key, value);
        else if (key == "batch_size")
            rc.batch_size = parse_count(key, value);
        else if (key == "epochs")
            rc.epochs = parse_count(key, value);
        else if (key == "mc_samples")
            rc.mc_samples = parse_count(key, value);
        else if (key == "kl_weight")
            rc.kl_weight = parse_double(key, value);
        else if (key == "patience")
            rc.patience = parse_count(key, value);
        else if (key == "optimizer")
            rc.optimizer = value;
        else if (key == "prior")
            rc.prior = value;
        else if (key == "prior_sigma")
            rc.prior_sigma = parse_double(key, value);
        else if (key == "prior_pi")
            rc.prior_pi = parse_double(key, value);
        else if (key == "prior_sigma1")
            rc.prior_sigma1 = parse_double(key, value);
        else if (key == "prior_sigma2")
            rc.prior_sigma2 = parse_double(key, value);
        else if (key == "padding")
            rc.padding = value;
        else if (key == "seed")
            rc.seed = static_cast<std::uint64_t>(parse_count(key, value));
        else if (key == "predict_samples")
            rc.predict_samples = parse_count(key, value);
        else if (key == "band_low")
            rc.band_low = parse_double(key, value);
        else if (key == "band_high")
            rc.band_high = parse_double(key, value);
        else if (key == "grid")
            rc.grid = parse_count(key, value);
        else if (key == "perplexity")
            rc.perplexity = parse_double(key, value);
        else if (key == "tsne_iterations")
            rc.tsne_iterations = parse_count(key, value);
        else if (key == "tsne_learning_rate")
            rc.tsne_learning_rate = parse_double(key, value);
        else if (key == "tsne_exaggeration")
            rc.tsne_exaggeration = parse_double(key, value);
        else if (key == "data_dir")
            rc.data_dir = value;
        else if (key == "model_path")
            rc.model_path = value;
        else if (key == "out_path")
            rc.out_path = value;
        else if (key == "trace_path")
            rc.trace_path = value;
        else
            throw InputError("unknown config key '" + key + "' on line " +
                             std::to_string(lineno));
    }
    return rc;
}

RunConfig parse_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read config file '" + path + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_run_config_text(text.str());
}

std::string resolved_arch(const RunConfig& rc) {
    const std::string arch = rc.arch.value_or("modified_bayesian_cnn");
    if (arch != "bayesian_cnn" && arch != "modified_bayesian_cnn")
        throw InputError("unknown architecture '" + arch + "'");
    return arch;
}

TrainingConfig resolve_training(const RunConfig& rc) {
    const std::string arch = resolved_arch(rc);
    TrainingConfig cfg;
    if (arch == "bayesian_cnn") {
        cfg.learning_rate = 0.001;
        cfg.batch_size = 128;
    } else {
        cfg.learning_rate = 0.0001;
        cfg.batch_size = 64;
    }
    if (rc.learning_rate) cfg.learning_rate = *rc.learning_rate;
    if (rc.batch_size) cfg.batch_size = *rc.batch_size;
    if (rc.epochs) cfg.epochs = *rc.epochs;
    if (rc.mc_samples) cfg.mc_samples_train = *rc.mc_samples;
    if (rc.kl_weight) cfg.kl_weight = *rc.kl_weight;
    if (rc.patience) cfg.early_stop_patience = *rc.patience;
    if (rc.seed) cfg.seed = *rc.seed;
    if (rc.optimizer) {
        if (*rc.optimizer == "sgd")
            cfg.optimizer = Optimizer::kSgd;
        else if (*rc.optimizer == "adam")
            cfg.optimizer = Optimizer::kAdam;
        else
            throw InputError("unknown optimizer '" + *rc.optimizer + "'");
    }
    if (rc.prior) {
        if (*rc.prior == "gaussian")
            cfg.prior.kind = Prior::Kind::kGaussian;
        else if (*rc.prior == "scale_mixture")
            cfg.prior.kind = Prior::Kind::kScaleMixture;
        else
            throw InputError("unknown prior '" + *rc.prior + "'");
    }
    if (rc.prior_sigma) cfg.prior.sigma = *rc.prior_sigma;
    if (rc.prior_pi) cfg.prior.pi = *rc.prior_pi;
    if (rc.prior_sigma1) cfg.prior.sigma1 = *rc.prior_sigma1;
    if (rc.prior_sigma2) cfg.prior.sigma2 = *rc.prior_sigma2;
    cfg.validate();
    return cfg;
}

NetworkSpec resolve_spec(const RunConfig& rc, std::size_t in_c, std::size_t in_h,
                         std::size_t in_w) {
    NetworkSpec spec = NetworkSpec::preset(resolved_arch(rc), in_c, in_h, in_w);
    if (rc.padding) {
        Padding pad;
        if (*rc.padding == "same")
            pad = Padding::kSame;
        else if (*rc.padding == "valid")
            pad = Padding::kValid;
        else
            throw InputError("unknown padding mode '" + *rc.padding + "'");
        for (LayerSpec& l : spec.layers)
            if (l.kind == LayerKind::kConv) l.padding = pad;
    }
    spec.validate();
    return spec;
}

}  // namespace bvar
