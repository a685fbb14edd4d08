#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "bvar/data.hpp"

using bvar::LabeledImage;
using bvar::Tensor;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::vector<LabeledImage> fake_dataset(std::size_t n0, std::size_t n1) {
    std::vector<LabeledImage> out;
    for (std::size_t cls = 0; cls < 2; ++cls) {
        const std::size_t n = cls == 0 ? n0 : n1;
        for (std::size_t i = 0; i < n; ++i) {
            LabeledImage item;
            item.id = "c" + std::to_string(cls) + "_" + std::to_string(1000 + i);
            item.pixels = Tensor({3, 2, 2}, static_cast<double>(cls));
            item.label = cls;
            out.push_back(std::move(item));
        }
    }
    return out;
}

}  // namespace

TEST_CASE("preprocess complement map") {
    Tensor raw({1, 1, 3}, std::vector<double>{255, 0, 200});
    Tensor p = bvar::preprocess(raw);
    CHECK(p[0] == 0.0);
    CHECK(p[1] == 1.0);
    CHECK(p[2] == doctest::Approx(55.0 / 255.0).epsilon(1e-15));

    CHECK_THROWS_AS(bvar::preprocess(Tensor({1}, std::vector<double>{256})), bvar::InputError);
    CHECK_THROWS_AS(bvar::preprocess(Tensor({1}, std::vector<double>{-1})), bvar::InputError);
}

TEST_CASE("preprocess involution recovers every byte exactly") {
    std::vector<double> raw(256);
    for (std::size_t i = 0; i < 256; ++i) raw[i] = static_cast<double>(i);
    Tensor t({256}, raw);
    Tensor back = bvar::preprocess_inverse(bvar::preprocess(t));
    for (std::size_t i = 0; i < 256; ++i) CHECK(back[i] == raw[i]);
}

TEST_CASE("split proportions and determinism") {
    SUBCASE("100 items split 20/16/64") {
        auto ds = fake_dataset(50, 50);
        auto sp = bvar::split(ds, 5);
        CHECK(sp.test.size() == 20);
        CHECK(sp.validation.size() == 16);
        CHECK(sp.train.size() == 64);
    }
    SUBCASE("same seed, same assignment; different seed differs") {
        auto ds = fake_dataset(30, 30);
        auto a = bvar::split(ds, 9);
        auto b = bvar::split(ds, 9);
        auto c = bvar::split(ds, 10);
        auto ids = [](const std::vector<LabeledImage>& v) {
            std::vector<std::string> out;
            for (const auto& i : v) out.push_back(i.id);
            return out;
        };
        CHECK(ids(a.test) == ids(b.test));
        CHECK(ids(a.train) == ids(b.train));
        CHECK(ids(a.test) != ids(c.test));
    }
    SUBCASE("disjoint and exhaustive") {
        auto ds = fake_dataset(21, 34);
        auto sp = bvar::split(ds, 3);
        std::set<std::string> seen;
        for (const auto* part : {&sp.train, &sp.validation, &sp.test})
            for (const auto& item : *part) CHECK(seen.insert(item.id).second);
        CHECK(seen.size() == ds.size());
    }
    SUBCASE("stratification holds at 30% positives") {
        auto ds = fake_dataset(700, 300);
        auto sp = bvar::split(ds, 11);
        auto positive_frac = [](const std::vector<LabeledImage>& v) {
            std::size_t pos = 0;
            for (const auto& i : v) pos += i.label;
            return static_cast<double>(pos) / static_cast<double>(v.size());
        };
        for (const auto* part : {&sp.train, &sp.validation, &sp.test}) {
            CHECK(positive_frac(*part) >= 0.28);
            CHECK(positive_frac(*part) <= 0.32);
        }
    }
    SUBCASE("too-small datasets rejected") {
        CHECK_THROWS_AS(bvar::split(fake_dataset(2, 2), 0), bvar::InputError);
    }
}

TEST_CASE("png round trip") {
    TempDir tmp("bvar_png_test");
    bvar::png::Image8 img;
    img.width = 5;
    img.height = 4;
    img.rgb.resize(60);
    for (std::size_t i = 0; i < img.rgb.size(); ++i)
        img.rgb[i] = static_cast<std::uint8_t>((i * 37) % 256);
    const std::string path = (tmp.path / "t.png").string();
    bvar::png::write_rgb8(path, img);
    bvar::png::Image8 back = bvar::png::read_rgb8(path);
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    CHECK(back.rgb == img.rgb);
}

TEST_CASE("load_patches") {
    TempDir tmp("bvar_load_test");
    SUBCASE("two one-image classes load with matching pixels") {
        fs::create_directories(tmp.path / "0");
        fs::create_directories(tmp.path / "1");
        bvar::png::Image8 img;
        img.width = img.height = 4;
        img.rgb.assign(48, 0);
        img.rgb[0] = 255;  // R of top-left pixel
        img.rgb[4] = 200;  // G of second pixel
        bvar::png::write_rgb8((tmp.path / "0" / "a.png").string(), img);
        bvar::png::write_rgb8((tmp.path / "1" / "b.png").string(), img);

        std::size_t skipped = 123;
        auto items = bvar::load_patches(tmp.path.string(), &skipped);
        REQUIRE(items.size() == 2);
        CHECK(skipped == 0);
        CHECK(items[0].id == "0/a.png");
        CHECK(items[0].label == 0);
        CHECK(items[1].label == 1);
        // channel-planar layout: R plane first; complement of 255 is 0
        CHECK(items[0].pixels[0] == 0.0);
        // G of pixel (0,1) lives in the G plane at offset 16 + 1
        CHECK(items[0].pixels[17] == doctest::Approx(55.0 / 255.0));
        // everything else is complement of 0
        CHECK(items[0].pixels[2] == 1.0);
    }
    SUBCASE("undecodable files are skipped and counted") {
        fs::create_directories(tmp.path / "0");
        fs::create_directories(tmp.path / "1");
        bvar::png::Image8 img;
        img.width = img.height = 2;
        img.rgb.assign(12, 10);
        bvar::png::write_rgb8((tmp.path / "0" / "ok.png").string(), img);
        bvar::png::write_rgb8((tmp.path / "1" / "ok.png").string(), img);
        std::ofstream bad(tmp.path / "1" / "broken.png");
        bad << "this is not a png";
        bad.close();

        std::size_t skipped = 0;
        auto items = bvar::load_patches(tmp.path.string(), &skipped);
        CHECK(items.size() == 2);
        CHECK(skipped == 1);
    }
    SUBCASE("missing or empty class directories are input errors") {
        CHECK_THROWS_AS(bvar::load_patches((tmp.path / "nowhere").string()), bvar::InputError);
        fs::create_directories(tmp.path / "0");
        fs::create_directories(tmp.path / "1");
        CHECK_THROWS_AS(bvar::load_patches(tmp.path.string()), bvar::InputError);
    }
}

TEST_CASE("synthetic generator") {
    bvar::SynthConfig cfg;
    cfg.n_per_class = 5;
    cfg.size = 16;
    cfg.seed = 7;

    SUBCASE("counts and determinism") {
        auto a = bvar::synth_generate(cfg);
        auto b = bvar::synth_generate(cfg);
        REQUIRE(a.size() == 10);
        std::size_t per_class[2] = {0, 0};
        for (const auto& item : a) ++per_class[item.label];
        CHECK(per_class[0] == 5);
        CHECK(per_class[1] == 5);
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].id == b[i].id);
            for (std::size_t j = 0; j < a[i].pixels.numel(); ++j)
                CHECK(a[i].pixels[j] == b[i].pixels[j]);
        }
        for (const auto& item : a)
            for (double v : item.pixels.data()) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
    }
    SUBCASE("pixel-mean threshold separates the classes") {
        bvar::SynthConfig big = cfg;
        big.n_per_class = 100;
        auto items = bvar::synth_generate(big);
        std::vector<std::pair<double, std::size_t>> means;
        for (const auto& item : items) {
            double s = 0.0;
            for (double v : item.pixels.data()) s += v;
            means.push_back({s / static_cast<double>(item.pixels.numel()), item.label});
        }
        std::sort(means.begin(), means.end());
        // best single threshold over the sorted means
        std::size_t best = 0;
        for (std::size_t cut = 0; cut <= means.size(); ++cut) {
            std::size_t correct = 0;
            for (std::size_t i = 0; i < means.size(); ++i) {
                const std::size_t pred = i < cut ? 0 : 1;
                correct += pred == means[i].second;
            }
            best = std::max(best, correct);
        }
        CHECK(static_cast<double>(best) / static_cast<double>(means.size()) >= 0.85);
    }
    SUBCASE("label noise flips roughly the requested fraction") {
        bvar::SynthConfig noisy = cfg;
        noisy.n_per_class = 200;
        noisy.label_noise = 0.1;
        auto clean = bvar::synth_generate(cfg);
        auto noised = bvar::synth_generate(noisy);
        std::size_t flips = 0;
        for (const auto& item : noised) {
            const std::size_t generated_class = item.id[6] - '0';  // synth_<c>_<i>
            flips += item.label != generated_class;
        }
        CHECK(flips > 10);
        CHECK(flips < 70);
    }
    SUBCASE("export and reload round trip") {
        TempDir tmp("bvar_synth_export");
        auto items = bvar::synth_generate(cfg);
        bvar::synth_export(tmp.path.string(), items);
        auto loaded = bvar::load_patches(tmp.path.string());
        REQUIRE(loaded.size() == items.size());
        for (const auto& orig : items) {
            const std::string want_id = std::to_string(orig.label) + "/" + orig.id + ".png";
            bool found = false;
            for (const auto& got : loaded)
                if (got.id == want_id) {
                    found = true;
                    CHECK(got.label == orig.label);
                    REQUIRE(bvar::same_shape(got.pixels, orig.pixels));
                    for (std::size_t j = 0; j < got.pixels.numel(); ++j)
                        CHECK(got.pixels[j] == orig.pixels[j]);
                }
            CHECK(found);
        }
    }
    SUBCASE("bad parameters rejected") {
        bvar::SynthConfig bad = cfg;
        bad.n_per_class = 0;
        CHECK_THROWS_AS(bvar::synth_generate(bad), bvar::InputError);
        bad = cfg;
        bad.size = 4;
        CHECK_THROWS_AS(bvar::synth_generate(bad), bvar::InputError);
    }
}
