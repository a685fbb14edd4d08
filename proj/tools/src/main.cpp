// bvar: variational CNN toolkit driver.
//
// Subcommands: synth | train | eval | predict | triage | bands | embed.
// Values resolve in precedence order: command-line flag, then config file
// (--config, `key = value` lines), then built-in default. Every source of
// randomness is controlled by --seed. Exit codes: 0 success, 1 input /
// dimension / contract errors, 2 numeric / checkpoint errors.

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bvar/checkpoint.hpp"
#include "bvar/config.hpp"
#include "bvar/data.hpp"
#include "bvar/errors.hpp"
#include "bvar/metrics.hpp"
#include "bvar/network.hpp"
#include "bvar/rng.hpp"
#include "bvar/tensor.hpp"
#include "bvar/training.hpp"
#include "bvar/triage.hpp"
#include "bvar/tsne.hpp"
#include "bvar/uncertainty.hpp"

namespace {

using namespace bvar;

RunConfig load_run_config(const std::string& path) {
    if (path.empty()) return RunConfig{};
    return parse_run_config(path);
}

// Flag > config > fallback.
template <typename T, typename U>
T pick(const std::optional<T>& flag, const std::optional<U>& cfg, T fallback) {
    if (flag) return *flag;
    if (cfg) return static_cast<T>(*cfg);
    return fallback;
}

std::string pick_path(const std::optional<std::string>& flag,
                      const std::optional<std::string>& cfg, const char* what) {
    if (flag) return *flag;
    if (cfg) return *cfg;
    throw InputError(std::string("no ") + what +
                     " given (flag or config file entry required)");
}

const std::vector<LabeledImage>& choose_split(const DatasetSplit& splits,
                                              const std::string& name) {
    if (name == "train") return splits.train;
    if (name == "val" || name == "validation") return splits.validation;
    if (name == "test") return splits.test;
    throw InputError("unknown split '" + name + "' (expected train, val or test)");
}

UncertaintyField parse_field(const std::string& name) {
    if (name == "aleatoric") return UncertaintyField::kAleatoric;
    if (name == "epistemic") return UncertaintyField::kEpistemic;
    throw InputError("unknown field '" + name + "' (expected aleatoric or epistemic)");
}

NetworkSpec spec_for_images(const RunConfig& rc, const std::vector<LabeledImage>& images) {
    const Tensor& px = images.front().pixels;
    return resolve_spec(rc, px.dim(0), px.dim(1), px.dim(2));
}

struct LoadedModel {
    Checkpoint ckpt;
    Network net;
};

LoadedModel load_model(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    Network net = restore_network(ckpt);
    return LoadedModel{std::move(ckpt), std::move(net)};
}

// ---------------------------------------------------------------- synth ----

struct SynthArgs {
    std::string config_path;
    std::optional<std::string> out;
    std::optional<std::size_t> n;
    std::optional<std::size_t> size;
    std::optional<std::uint64_t> seed;
    std::optional<double> noise;
};

void run_synth(const SynthArgs& a) {
    const RunConfig rc = load_run_config(a.config_path);
    SynthConfig cfg;
    cfg.n_per_class = a.n.value_or(50);
    cfg.size = a.size.value_or(16);
    cfg.seed = pick(a.seed, rc.seed, std::uint64_t{0});
    cfg.label_noise = a.noise.value_or(0.0);
    const std::string out = pick_path(a.out, rc.data_dir, "output directory");

    const std::vector<LabeledImage> images = synth_generate(cfg);
    synth_export(out, images);
    std::cerr << "wrote " << images.size() << " images under " << out << "\n";
}

// ---------------------------------------------------------------- train ----

struct TrainArgs {
    std::string config_path;
    std::optional<std::string> data;
    std::optional<std::string> arch;
    std::optional<std::string> out;
    std::optional<std::string> trace;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr;
    std::optional<std::size_t> batch;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> mc;
    std::optional<std::size_t> patience;
};

void run_train(const TrainArgs& a) {
    RunConfig rc = load_run_config(a.config_path);
    if (a.arch) rc.arch = *a.arch;
    if (a.seed) rc.seed = *a.seed;
    if (a.lr) rc.learning_rate = *a.lr;
    if (a.batch) rc.batch_size = *a.batch;
    if (a.epochs) rc.epochs = *a.epochs;
    if (a.mc) rc.mc_samples = *a.mc;
    if (a.patience) rc.patience = *a.patience;

    const std::string data = pick_path(a.data, rc.data_dir, "data directory");
    const std::string model_path = pick(a.out, rc.model_path, std::string("model.bvar"));
    const std::string trace_path = pick(a.trace, rc.trace_path, model_path + ".trace.csv");

    const std::vector<LabeledImage> images = load_patches(data);
    const std::uint64_t seed = rc.seed.value_or(0);
    const DatasetSplit splits = split(images, seed);
    const TrainingConfig cfg = resolve_training(rc);
    const NetworkSpec spec = spec_for_images(rc, images);

    Rng init(seed);
    Network net(spec, init);
    TrainResult result = train(std::move(net), splits, cfg);

    save_checkpoint(make_checkpoint(result.network, cfg, seed), model_path);
    write_trace_csv(trace_path, result.trace);

    const TraceRow& best = result.trace[result.best_epoch - 1];
    std::cerr << "trained " << result.trace.size() << " epochs; best epoch "
              << result.best_epoch << " (train acc " << best.train_acc << ", val acc "
              << best.val_acc << "); model -> " << model_path << ", trace -> "
              << trace_path << "\n";
}

// ----------------------------------------------------------------- eval ----

struct EvalArgs {
    std::string config_path;
    std::optional<std::string> model;
    std::optional<std::string> data;
    std::string split_name = "test";
    std::size_t n = 0;
    std::optional<std::uint64_t> seed;
};

void run_eval(const EvalArgs& a) {
    const RunConfig rc = load_run_config(a.config_path);
    const LoadedModel m = load_model(pick_path(a.model, rc.model_path, "model path"));
    const std::string data = pick_path(a.data, rc.data_dir, "data directory");

    const std::vector<LabeledImage> images = load_patches(data);
    const DatasetSplit splits = split(images, m.ckpt.seed);
    const std::vector<LabeledImage>& items = choose_split(splits, a.split_name);
    if (items.empty()) throw InputError("split '" + a.split_name + "' is empty");

    std::vector<std::size_t> preds;
    if (a.n == 0) {
        preds = predict_classes(m.net, items, m.ckpt.config.batch_size);
    } else {
        const Rng base(pick(a.seed, rc.seed, m.ckpt.seed));
        preds.resize(items.size());
        for (std::size_t i = 0; i < items.size(); ++i) {
            const PredictiveSampleSet set =
                predictive_samples(m.net, items[i].pixels, a.n, base.stream(i));
            const auto mean = set.mean.data();
            std::size_t arg = 0;
            for (std::size_t k = 1; k < mean.size(); ++k)
                if (mean[k] > mean[arg]) arg = k;
            preds[i] = arg;
        }
    }

    std::vector<std::size_t> labels(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) labels[i] = items[i].label;
    std::cout << metrics_json(metrics(confusion(preds, labels))) << "\n";
}

// -------------------------------------------------------------- predict ----

struct PredictArgs {
    std::string config_path;
    std::optional<std::string> model;
    std::optional<std::string> data;
    std::optional<std::string> out;
    std::string split_name = "test";
    std::optional<std::size_t> n;
    std::optional<std::uint64_t> seed;
};

void run_predict(const PredictArgs& a) {
    const RunConfig rc = load_run_config(a.config_path);
    const LoadedModel m = load_model(pick_path(a.model, rc.model_path, "model path"));
    const std::string data = pick_path(a.data, rc.data_dir, "data directory");
    const std::string out = pick_path(a.out, rc.out_path, "output path");
    const std::size_t n = pick(a.n, rc.predict_samples, std::size_t{25});
    if (n == 0) throw InputError("--n must be positive for predict");

    const std::vector<LabeledImage> images = load_patches(data);
    const DatasetSplit splits = split(images, m.ckpt.seed);
    const std::vector<LabeledImage>& items = choose_split(splits, a.split_name);
    if (items.empty()) throw InputError("split '" + a.split_name + "' is empty");

    const Rng base(pick(a.seed, rc.seed, m.ckpt.seed));
    std::vector<UncertaintyRecord> records;
    records.reserve(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        const PredictiveSampleSet set =
            predictive_samples(m.net, items[i].pixels, n, base.stream(i));
        records.push_back(make_record(items[i].id, items[i].label, set));
    }
    normalize_epistemic(records);
    write_records_csv(out, records);
    std::cerr << "wrote " << records.size() << " uncertainty records to " << out << "\n";
}

// --------------------------------------------------------------- triage ----

struct TriageArgs {
    std::string config_path;
    std::optional<std::string> records;
    std::optional<std::string> out;
    std::string field_name = "aleatoric";
    std::optional<std::size_t> grid;
};

void run_triage(const TriageArgs& a) {
    const RunConfig rc = load_run_config(a.config_path);
    const std::string records_path = pick_path(a.records, rc.out_path, "records path");
    if (!a.out) throw InputError("no output path given for the curve (--out)");

    const std::vector<UncertaintyRecord> records = read_records_csv(records_path);
    const UncertaintyField field = parse_field(a.field_name);
    const std::size_t points = pick(a.grid, rc.grid, std::size_t{50});
    const TriageCurve curve = sweep(records, default_grid(records, field, points), field);
    write_curve_csv(*a.out, curve);
    std::cerr << "wrote " << curve.size() << " curve rows to " << *a.out << "\n";
}

// ---------------------------------------------------------------- bands ----

struct BandsArgs {
    std::string config_path;
    std::optional<std::string> records;
    std::optional<std::string> out;
    std::optional<double> low;
    std::optional<double> high;
};

void run_bands(const BandsArgs& a) {
    const RunConfig rc = load_run_config(a.config_path);
    const std::string records_path = pick_path(a.records, rc.out_path, "records path");
    const double low = pick(a.low, rc.band_low, 0.01);
    const double high = pick(a.high, rc.band_high, 0.1);

    const std::vector<UncertaintyRecord> records = read_records_csv(records_path);
    const BandPartition parts = band_partition(records, low, high);

    nlohmann::json counts;
    counts["low"] = parts.low.size();
    counts["medium"] = parts.medium.size();
    counts["high"] = parts.high.size();
    std::cout << counts.dump() << "\n";

    if (a.out) {
        std::ofstream f(*a.out);
        if (!f) throw InputError("cannot write bands to '" + *a.out + "'");
        f << "id,band\n";
        for (const auto& r : parts.low) f << r.id << ",low\n";
        for (const auto& r : parts.medium) f << r.id << ",medium\n";
        for (const auto& r : parts.high) f << r.id << ",high\n";
    }
}

// ---------------------------------------------------------------- embed ----

struct EmbedArgs {
    std::string config_path;
    std::optional<std::string> data;
    std::optional<std::string> vectors;
    std::optional<std::string> records;
    std::optional<std::string> out;
    std::optional<double> perplexity;
    std::optional<std::size_t> iterations;
    std::optional<double> lr;
    std::optional<double> exaggeration;
    std::optional<std::uint64_t> seed;
    std::optional<double> low;
    std::optional<double> high;
};

std::string band_of(double e, double low, double high) {
    if (e <= low) return "low";
    if (e <= high) return "medium";
    return "high";
}

void run_embed(const EmbedArgs& a) {
    const RunConfig rc = load_run_config(a.config_path);
    if (a.data && a.vectors)
        throw InputError("--data and --vectors are mutually exclusive");
    const std::string out = pick_path(a.out, rc.out_path, "output path");
    const double low = pick(a.low, rc.band_low, 0.01);
    const double high = pick(a.high, rc.band_high, 0.1);

    Tensor x({1}, 0.0);
    std::vector<EmbeddingPointMeta> meta;
    if (a.vectors) {
        const VectorDataset vd = read_vector_csv(*a.vectors);
        x = vd.x;
        meta.resize(vd.ids.size());
        for (std::size_t i = 0; i < vd.ids.size(); ++i) {
            meta[i].id = vd.ids[i];
            if (vd.has_labels) meta[i].label = std::to_string(vd.labels[i]);
            if (vd.has_e) meta[i].band = band_of(vd.e[i], low, high);
        }
    } else {
        const std::string data = pick_path(a.data, rc.data_dir, "data directory");
        const std::vector<LabeledImage> images = load_patches(data);
        const std::size_t d = images.front().pixels.numel();
        std::vector<double> buf;
        buf.reserve(images.size() * d);
        meta.resize(images.size());
        for (std::size_t i = 0; i < images.size(); ++i) {
            if (images[i].pixels.numel() != d)
                throw DimensionError("image '" + images[i].id + "' differs in size");
            const auto px = images[i].pixels.data();
            buf.insert(buf.end(), px.begin(), px.end());
            meta[i].id = images[i].id;
            meta[i].label = std::to_string(images[i].label);
        }
        x = Tensor({images.size(), d}, std::move(buf));
    }

    if (a.records) {
        std::unordered_map<std::string, double> e_by_id;
        for (const UncertaintyRecord& r : read_records_csv(*a.records))
            e_by_id[r.id] = r.normalized_epistemic;
        for (EmbeddingPointMeta& pt : meta) {
            const auto it = e_by_id.find(pt.id);
            if (it == e_by_id.end())
                throw InputError("no uncertainty record for point '" + pt.id + "'");
            pt.band = band_of(it->second, low, high);
        }
    }

    TsneConfig cfg;
    cfg.perplexity = pick(a.perplexity, rc.perplexity, 30.0);
    cfg.iterations = pick(a.iterations, rc.tsne_iterations, std::size_t{1000});
    cfg.learning_rate = pick(a.lr, rc.tsne_learning_rate, 200.0);
    cfg.exaggeration = pick(a.exaggeration, rc.tsne_exaggeration, 12.0);
    cfg.seed = pick(a.seed, rc.seed, std::uint64_t{0});

    const Embedding emb = tsne_fit(x, cfg);
    write_embedding_csv(out, emb.y, meta);
    std::cerr << "embedded " << emb.y.dim(0) << " points (final KL "
              << emb.kl_trace.back() << ") -> " << out << "\n";
}

void add_config_flag(CLI::App* cmd, std::string& path) {
    cmd->add_option("--config", path, "run configuration file (key = value lines)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"variational CNN toolkit: train, quantify uncertainty, triage, embed"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    SynthArgs synth_args;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic two-class dataset");
    add_config_flag(synth, synth_args.config_path);
    synth->add_option("--out", synth_args.out, "dataset directory to create");
    synth->add_option("--n", synth_args.n, "images per class (default 50)");
    synth->add_option("--size", synth_args.size, "square image side (default 16)");
    synth->add_option("--seed", synth_args.seed, "generator seed (default 0)");
    synth->add_option("--noise", synth_args.noise, "label noise fraction (default 0)");
    synth->callback([&] { run_synth(synth_args); });

    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "train a variational CNN");
    add_config_flag(train, train_args.config_path);
    train->add_option("--data", train_args.data, "dataset directory (subdirs 0/ and 1/)");
    train->add_option("--arch", train_args.arch,
                      "bayesian_cnn or modified_bayesian_cnn (default modified)");
    train->add_option("--out", train_args.out, "checkpoint path (default model.bvar)");
    train->add_option("--trace", train_args.trace,
                      "trace CSV path (default <out>.trace.csv)");
    train->add_option("--seed", train_args.seed, "split/init/training seed (default 0)");
    train->add_option("--lr", train_args.lr, "learning rate override");
    train->add_option("--batch", train_args.batch, "batch size override");
    train->add_option("--epochs", train_args.epochs, "epoch count override");
    train->add_option("--mc", train_args.mc, "MC samples per training step");
    train->add_option("--patience", train_args.patience, "early-stopping patience");
    train->callback([&] { run_train(train_args); });

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "print metrics JSON for a split");
    add_config_flag(eval, eval_args.config_path);
    eval->add_option("--model", eval_args.model, "checkpoint path");
    eval->add_option("--data", eval_args.data, "dataset directory");
    eval->add_option("--split", eval_args.split_name, "train, val or test (default test)");
    eval->add_option("--n", eval_args.n,
                     "MC samples per image; 0 = posterior-mean pass (default 0)");
    eval->add_option("--seed", eval_args.seed,
                     "sampling seed (default: the checkpoint's training seed)");
    eval->callback([&] { run_eval(eval_args); });

    PredictArgs predict_args;
    CLI::App* predict = app.add_subcommand("predict", "write per-image uncertainty records");
    add_config_flag(predict, predict_args.config_path);
    predict->add_option("--model", predict_args.model, "checkpoint path");
    predict->add_option("--data", predict_args.data, "dataset directory");
    predict->add_option("--out", predict_args.out, "records CSV path");
    predict->add_option("--split", predict_args.split_name,
                        "train, val or test (default test)");
    predict->add_option("--n", predict_args.n, "MC samples per image (default 25)");
    predict->add_option("--seed", predict_args.seed,
                        "sampling seed (default: the checkpoint's training seed)");
    predict->callback([&] { run_predict(predict_args); });

    TriageArgs triage_args;
    CLI::App* triage = app.add_subcommand("triage", "threshold sweep over a records CSV");
    add_config_flag(triage, triage_args.config_path);
    triage->add_option("--records", triage_args.records, "uncertainty records CSV");
    triage->add_option("--field", triage_args.field_name,
                       "aleatoric or epistemic (default aleatoric)");
    triage->add_option("--grid", triage_args.grid, "threshold count (default 50)");
    triage->add_option("--out", triage_args.out, "curve CSV path");
    triage->callback([&] { run_triage(triage_args); });

    BandsArgs bands_args;
    CLI::App* bands = app.add_subcommand("bands", "partition records into E bands");
    add_config_flag(bands, bands_args.config_path);
    bands->add_option("--records", bands_args.records, "uncertainty records CSV");
    bands->add_option("--low", bands_args.low, "low/medium cutoff on E (default 0.01)");
    bands->add_option("--high", bands_args.high, "medium/high cutoff on E (default 0.1)");
    bands->add_option("--out", bands_args.out, "optional id,band CSV path");
    bands->callback([&] { run_bands(bands_args); });

    EmbedArgs embed_args;
    CLI::App* embed = app.add_subcommand("embed", "3D t-SNE embedding CSV");
    add_config_flag(embed, embed_args.config_path);
    embed->add_option("--data", embed_args.data, "dataset directory (pixels as features)");
    embed->add_option("--vectors", embed_args.vectors, "feature CSV (id/label/E optional)");
    embed->add_option("--records", embed_args.records,
                      "records CSV supplying E for the band column");
    embed->add_option("--out", embed_args.out, "embedding CSV path");
    embed->add_option("--perplexity", embed_args.perplexity, "perplexity (default 30)");
    embed->add_option("--iters", embed_args.iterations, "iterations (default 1000)");
    embed->add_option("--lr", embed_args.lr, "learning rate (default 200)");
    embed->add_option("--exaggeration", embed_args.exaggeration,
                      "early exaggeration factor (default 12)");
    embed->add_option("--seed", embed_args.seed, "layout seed (default 0)");
    embed->add_option("--low", embed_args.low, "low/medium E cutoff (default 0.01)");
    embed->add_option("--high", embed_args.high, "medium/high E cutoff (default 0.1)");
    embed->callback([&] { run_embed(embed_args); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const bvar::NumericError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const bvar::CheckpointError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const bvar::Error& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
