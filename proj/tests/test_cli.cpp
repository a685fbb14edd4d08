// End-to-end tests of the bvar executable: pipeline smoke runs, exit-code
// mapping, seed-fixed reproducibility, and agreement between eval output and
// the training trace. The binary path comes in through BVAR_CLI_PATH.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

fs::path scratch_root() {
    static const fs::path root = [] {
        fs::path p = fs::temp_directory_path() / "bvar_cli_tests";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

fs::path scratch(const std::string& name) {
    fs::path p = scratch_root() / name;
    fs::create_directories(p);
    return p;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(BVAR_CLI_PATH) + " " + args;
    const int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) out.push_back(line);
    return out;
}

struct TraceRowCsv {
    std::size_t epoch;
    double train_loss, train_acc, val_acc;
};

std::vector<TraceRowCsv> parse_trace(const fs::path& path) {
    const auto rows = lines_of(slurp(path));
    REQUIRE(rows.size() >= 2);
    CHECK(rows[0] == "epoch,train_loss,train_acc,val_acc");
    std::vector<TraceRowCsv> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        TraceRowCsv r{};
        REQUIRE(std::sscanf(rows[i].c_str(), "%zu,%lg,%lg,%lg", &r.epoch, &r.train_loss,
                            &r.train_acc, &r.val_acc) == 4);
        out.push_back(r);
    }
    return out;
}

// Shared tiny dataset + model; built once, read-only afterwards.
struct TrainedFixture {
    fs::path dir;
    fs::path data;
    fs::path model;
    fs::path trace;
};

const TrainedFixture& fixture() {
    static const TrainedFixture fx = [] {
        TrainedFixture f;
        f.dir = scratch("fixture");
        f.data = f.dir / "data";
        f.model = f.dir / "model.bvar";
        f.trace = f.dir / "model.bvar.trace.csv";
        REQUIRE(run_cli("synth --out " + f.data.string() + " --n 12 --size 8 --seed 7") == 0);
        REQUIRE(run_cli("train --data " + f.data.string() +
                        " --arch modified_bayesian_cnn --out " + f.model.string() +
                        " --seed 3 --epochs 2 --batch 8 2> /dev/null") == 0);
        return f;
    }();
    return fx;
}

}  // namespace

TEST_CASE("synth then train writes checkpoint and trace") {
    const TrainedFixture& fx = fixture();
    CHECK(fs::exists(fx.model));
    CHECK(fs::file_size(fx.model) > 1000);
    const auto trace = parse_trace(fx.trace);
    CHECK(trace.size() == 2);
    CHECK(trace[0].epoch == 1);
    CHECK(trace[1].epoch == 2);
    // 24 images, 12 per class directory.
    const fs::path c0 = fx.data / "0";
    const fs::path c1 = fx.data / "1";
    CHECK(std::distance(fs::directory_iterator(c0), fs::directory_iterator{}) == 12);
    CHECK(std::distance(fs::directory_iterator(c1), fs::directory_iterator{}) == 12);
}

TEST_CASE("eval prints metrics JSON with kappa") {
    const TrainedFixture& fx = fixture();
    const fs::path out = scratch("eval") / "metrics.json";
    REQUIRE(run_cli("eval --model " + fx.model.string() + " --data " + fx.data.string() +
                    " > " + out.string()) == 0);
    const nlohmann::json j = nlohmann::json::parse(slurp(out));
    CHECK(j.contains("kappa"));
    CHECK(j.contains("accuracy"));
    CHECK(j.contains("precision"));
    CHECK(j.contains("recall"));
    CHECK(j.contains("f1"));
    const double acc = j["accuracy"].get<double>();
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
    const std::size_t total = j["tp"].get<std::size_t>() + j["fp"].get<std::size_t>() +
                              j["fn"].get<std::size_t>() + j["tn"].get<std::size_t>();
    CHECK(total == 4);  // test split of 24 images
}

TEST_CASE("predict then triage satisfies curve boundary invariants") {
    const TrainedFixture& fx = fixture();
    const fs::path dir = scratch("triage");
    const fs::path unc = dir / "unc.csv";
    const fs::path curve = dir / "curve.csv";
    REQUIRE(run_cli("predict --model " + fx.model.string() + " --data " + fx.data.string() +
                    " --n 25 --out " + unc.string() + " 2> /dev/null") == 0);
    REQUIRE(run_cli("triage --records " + unc.string() +
                    " --field aleatoric --grid 50 --out " + curve.string() +
                    " 2> /dev/null") == 0);

    const auto unc_rows = lines_of(slurp(unc));
    CHECK(unc_rows[0] == "id,pred,label,aleatoric,epistemic,E");
    CHECK(unc_rows.size() == 5);  // header + test split

    const auto rows = lines_of(slurp(curve));
    CHECK(rows[0] == "threshold,retained_frac,retained_acc,fn,fp,referred_frac");
    REQUIRE(rows.size() == 51);
    double prev_thr = -1.0, prev_ret = -1.0;
    double first_ret = -1.0, last_ret = -1.0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        double thr, ret, acc, fn, fp, referred;
        REQUIRE(std::sscanf(rows[i].c_str(), "%lg,%lg,%lg,%lg,%lg,%lg", &thr, &ret, &acc, &fn,
                            &fp, &referred) == 6);
        CHECK(thr > prev_thr);
        CHECK(ret >= prev_ret);  // retained fraction is non-decreasing
        CHECK(ret + referred == 1.0);
        if (i == 1) first_ret = ret;
        last_ret = ret;
        prev_thr = thr;
        prev_ret = ret;
    }
    CHECK(first_ret <= last_ret);
    CHECK(last_ret == 1.0);  // threshold at the observed maximum retains everything

    // Band partition counts cover every record exactly once.
    const fs::path counts_path = dir / "counts.json";
    REQUIRE(run_cli("bands --records " + unc.string() + " > " + counts_path.string()) == 0);
    const nlohmann::json counts = nlohmann::json::parse(slurp(counts_path));
    CHECK(counts["low"].get<std::size_t>() + counts["medium"].get<std::size_t>() +
              counts["high"].get<std::size_t>() ==
          4);
}

TEST_CASE("fixed seeds make the whole pipeline bit-reproducible") {
    auto run_pipeline = [](const fs::path& dir) {
        const std::string data = (dir / "data").string();
        const std::string model = (dir / "model.bvar").string();
        const std::string unc = (dir / "unc.csv").string();
        const std::string curve = (dir / "curve.csv").string();
        REQUIRE(run_cli("synth --out " + data + " --n 10 --size 8 --seed 11") == 0);
        REQUIRE(run_cli("train --data " + data + " --arch bayesian_cnn --out " + model +
                        " --seed 5 --epochs 2 --batch 10 2> /dev/null") == 0);
        REQUIRE(run_cli("predict --model " + model + " --data " + data + " --n 8 --out " +
                        unc + " 2> /dev/null") == 0);
        REQUIRE(run_cli("triage --records " + unc + " --field epistemic --grid 20 --out " +
                        curve + " 2> /dev/null") == 0);
    };
    const fs::path a = scratch("repro_a");
    const fs::path b = scratch("repro_b");
    run_pipeline(a);
    run_pipeline(b);
    for (const char* name : {"model.bvar", "model.bvar.trace.csv", "unc.csv", "curve.csv"}) {
        INFO("file: " << name);
        CHECK(slurp(a / name) == slurp(b / name));
    }
}

TEST_CASE("eval on the training split matches the training trace") {
    const TrainedFixture& fx = fixture();
    const fs::path dir = scratch("trace_match");

    // learning_rate 0 keeps the weights fixed, so every trace row equals the
    // final one and the checkpoint holds exactly the evaluated network.
    const fs::path model = dir / "frozen.bvar";
    const fs::path trace = dir / "frozen.trace.csv";
    REQUIRE(run_cli("train --data " + fx.data.string() +
                    " --arch modified_bayesian_cnn --out " + model.string() + " --trace " +
                    trace.string() + " --seed 9 --epochs 3 --batch 8 --lr 0 2> /dev/null") ==
            0);
    const auto rows = parse_trace(trace);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].train_acc == rows[2].train_acc);
    CHECK(rows[0].val_acc == rows[2].val_acc);

    const fs::path out = dir / "train_metrics.json";
    REQUIRE(run_cli("eval --model " + model.string() + " --data " + fx.data.string() +
                    " --split train > " + out.string()) == 0);
    const nlohmann::json j = nlohmann::json::parse(slurp(out));
    CHECK(j["accuracy"].get<double>() == rows.back().train_acc);

    const fs::path val_out = dir / "val_metrics.json";
    REQUIRE(run_cli("eval --model " + model.string() + " --data " + fx.data.string() +
                    " --split val > " + val_out.string()) == 0);
    const nlohmann::json jv = nlohmann::json::parse(slurp(val_out));
    CHECK(jv["accuracy"].get<double>() == rows.back().val_acc);
}

TEST_CASE("eval is deterministic for a fixed sampling seed") {
    const TrainedFixture& fx = fixture();
    const fs::path dir = scratch("eval_det");
    const std::string cmd = "eval --model " + fx.model.string() + " --data " +
                            fx.data.string() + " --n 6 --seed 21 > ";
    REQUIRE(run_cli(cmd + (dir / "a.json").string()) == 0);
    REQUIRE(run_cli(cmd + (dir / "b.json").string()) == 0);
    CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
    REQUIRE(run_cli("eval --model " + fx.model.string() + " --data " + fx.data.string() +
                    " --n 6 --seed 22 > " + (dir / "c.json").string()) == 0);
    // A different seed may change the numbers but must still be valid JSON.
    CHECK(nlohmann::json::parse(slurp(dir / "c.json")).contains("kappa"));
}

TEST_CASE("embed writes a 3D embedding CSV with band labels") {
    const TrainedFixture& fx = fixture();
    const fs::path dir = scratch("embed");
    const fs::path emb = dir / "emb.csv";
    REQUIRE(run_cli("embed --data " + fx.data.string() + " --out " + emb.string() +
                    " --perplexity 5 --iters 50 --lr 10 --seed 2 2> /dev/null") == 0);
    const auto rows = lines_of(slurp(emb));
    CHECK(rows[0] == "id,y1,y2,y3,label,band");
    CHECK(rows.size() == 25);  // header + 24 images
    for (std::size_t i = 1; i < rows.size(); ++i) {
        char id[64], label[8], band[8] = "";
        double y1, y2, y3;
        REQUIRE(std::sscanf(rows[i].c_str(), "%63[^,],%lg,%lg,%lg,%7[^,],%7s", id, &y1, &y2,
                            &y3, label, band) >= 5);
        CHECK((std::string(label) == "0" || std::string(label) == "1"));
    }

    // Same seed, same embedding bytes.
    const fs::path emb2 = dir / "emb2.csv";
    REQUIRE(run_cli("embed --data " + fx.data.string() + " --out " + emb2.string() +
                    " --perplexity 5 --iters 50 --lr 10 --seed 2 2> /dev/null") == 0);
    CHECK(slurp(emb) == slurp(emb2));
}

TEST_CASE("embed joins bands from a vector E column or a records file") {
    const fs::path dir = scratch("embed_bands");
    const fs::path vectors = dir / "vectors.csv";
    {
        std::ofstream f(vectors);
        f << "id,f1,f2,E\n";
        for (int i = 0; i < 8; ++i)
            f << "p" << i << "," << 0.1 * i << "," << (i % 2) << "," << 0.125 * i << "\n";
    }
    const fs::path emb = dir / "emb.csv";
    REQUIRE(run_cli("embed --vectors " + vectors.string() + " --out " + emb.string() +
                    " --iters 40 --lr 5 --seed 4 --low 0.3 --high 0.7 2> /dev/null") == 0);
    auto band_of_row = [](const std::string& row) {
        return row.substr(row.rfind(',') + 1);
    };
    auto rows = lines_of(slurp(emb));
    REQUIRE(rows.size() == 9);
    // E = 0, .125, .25 <= 0.3; .375, .5, .625 <= 0.7; .75, .875 above.
    for (std::size_t i = 1; i <= 3; ++i) CHECK(band_of_row(rows[i]) == "low");
    for (std::size_t i = 4; i <= 6; ++i) CHECK(band_of_row(rows[i]) == "medium");
    for (std::size_t i = 7; i <= 8; ++i) CHECK(band_of_row(rows[i]) == "high");

    // A records file overrides the E column with its own values.
    const fs::path records = dir / "records.csv";
    {
        std::ofstream f(records);
        f << "id,pred,label,aleatoric,epistemic,E\n";
        for (int i = 0; i < 8; ++i)
            f << "p" << i << ",0,0,0.1,0.1," << (i < 4 ? 0.0 : 1.0) << "\n";
    }
    REQUIRE(run_cli("embed --vectors " + vectors.string() + " --records " +
                    records.string() + " --out " + emb.string() +
                    " --iters 40 --lr 5 --seed 4 --low 0.3 --high 0.7 2> /dev/null") == 0);
    rows = lines_of(slurp(emb));
    REQUIRE(rows.size() == 9);
    for (std::size_t i = 1; i <= 4; ++i) CHECK(band_of_row(rows[i]) == "low");
    for (std::size_t i = 5; i <= 8; ++i) CHECK(band_of_row(rows[i]) == "high");

    // Records that do not cover every embedded id are rejected.
    const fs::path sparse = dir / "sparse.csv";
    {
        std::ofstream f(sparse);
        f << "id,pred,label,aleatoric,epistemic,E\np0,0,0,0.1,0.1,0.5\n";
    }
    CHECK(run_cli("embed --vectors " + vectors.string() + " --records " + sparse.string() +
                  " --out " + emb.string() + " --iters 40 --lr 5 2> /dev/null") == 1);
    CHECK(run_cli("embed --vectors " + vectors.string() + " --data somewhere --out " +
                  emb.string() + " 2> /dev/null") == 1);
}

TEST_CASE("config file values apply and flags take precedence") {
    const TrainedFixture& fx = fixture();
    const fs::path dir = scratch("config");
    const fs::path cfg = dir / "run.cfg";
    {
        std::ofstream f(cfg);
        f << "epochs = 2\nbatch_size = 8\nseed = 3\narch = modified_bayesian_cnn\n";
    }
    const fs::path m1 = dir / "from_cfg.bvar";
    REQUIRE(run_cli("train --data " + fx.data.string() + " --config " + cfg.string() +
                    " --out " + m1.string() + " 2> /dev/null") == 0);
    CHECK(parse_trace(dir / "from_cfg.bvar.trace.csv").size() == 2);
    // Identical settings through config vs flags give the identical artifact.
    CHECK(slurp(m1) == slurp(fx.model));

    const fs::path m2 = dir / "flag_wins.bvar";
    REQUIRE(run_cli("train --data " + fx.data.string() + " --config " + cfg.string() +
                    " --epochs 1 --out " + m2.string() + " 2> /dev/null") == 0);
    CHECK(parse_trace(dir / "flag_wins.bvar.trace.csv").size() == 1);
}

TEST_CASE("exit codes distinguish input errors from numeric/corruption errors") {
    const TrainedFixture& fx = fixture();
    const fs::path dir = scratch("exits");

    CHECK(run_cli("frobnicate 2> /dev/null") == 1);
    CHECK(run_cli("2> /dev/null") == 1);  // missing subcommand
    CHECK(run_cli("eval --model " + (dir / "absent.bvar").string() + " --data " +
                  fx.data.string() + " 2> /dev/null") == 1);
    CHECK(run_cli("train --data " + (dir / "no_such_dir").string() + " 2> /dev/null") == 1);
    CHECK(run_cli("triage --records " + (dir / "none.csv").string() +
                  " --out x.csv 2> /dev/null") == 1);

    // Corrupt checkpoints take the exit-2 path.
    const fs::path broken = dir / "broken.bvar";
    {
        const std::string bytes = slurp(fx.model);
        std::ofstream f(broken, std::ios::binary);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK(run_cli("eval --model " + broken.string() + " --data " + fx.data.string() +
                  " 2> /dev/null") == 2);

    const fs::path cfg = dir / "bad.cfg";
    {
        std::ofstream f(cfg);
        f << "no_such_key = 1\n";
    }
    CHECK(run_cli("train --data " + fx.data.string() + " --config " + cfg.string() +
                  " 2> /dev/null") == 1);

    CHECK(run_cli("--help > /dev/null") == 0);
    CHECK(run_cli("train --help > /dev/null") == 0);
}
