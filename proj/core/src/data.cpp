#include "bvar/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>

namespace bvar {

namespace fs = std::filesystem;

Tensor preprocess(const Tensor& raw) {
    std::vector<double> out(raw.numel());
    const auto d = raw.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(d[i] >= 0.0 && d[i] <= 255.0))
            throw InputError("pixel value " + std::to_string(d[i]) + " outside [0,255]");
        out[i] = (255.0 - d[i]) / 255.0;
    }
    return Tensor(raw.shape(), std::move(out));
}

Tensor preprocess_inverse(const Tensor& pixels) {
    std::vector<double> out(pixels.numel());
    const auto d = pixels.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 255.0 - 255.0 * d[i];
    return Tensor(pixels.shape(), std::move(out));
}

Tensor image_to_raw_tensor(const png::Image8& img) {
    const std::size_t h = img.height, w = img.width;
    std::vector<double> out(3 * h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                out[(c * h + y) * w + x] = static_cast<double>(img.rgb[(y * w + x) * 3 + c]);
    return Tensor({3, h, w}, std::move(out));
}

png::Image8 raw_tensor_to_image(const Tensor& raw) {
    if (raw.rank() != 3 || raw.dim(0) != 3)
        throw DimensionError("raw image tensor must be [3,H,W], got " + raw.shape_str());
    png::Image8 img;
    img.height = raw.dim(1);
    img.width = raw.dim(2);
    img.rgb.resize(3 * img.height * img.width);
    const auto d = raw.data();
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = std::llround(d[(c * img.height + y) * img.width + x]);
                img.rgb[(y * img.width + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
            }
    return img;
}

namespace {

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.below(i)]);
}

}  // namespace

DatasetSplit split(const std::vector<LabeledImage>& dataset, std::uint64_t seed) {
    if (dataset.size() < 5) throw InputError("split needs at least 5 items");

    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return dataset[a].id < dataset[b].id; });

    // Group by label so the 20% / 20%-of-remainder cuts apply per class.
    std::vector<std::vector<std::size_t>> by_class;
    for (std::size_t i : order) {
        if (dataset[i].label >= by_class.size()) by_class.resize(dataset[i].label + 1);
        by_class[dataset[i].label].push_back(i);
    }

    Rng root(seed);
    DatasetSplit out;
    out.split_seed = seed;
    for (std::size_t cls = 0; cls < by_class.size(); ++cls) {
        auto& idx = by_class[cls];
        if (idx.empty()) continue;
        Rng rng = root.stream(cls);
        shuffle_indices(idx, rng);
        const std::size_t n = idx.size();
        const std::size_t n_test = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));
        const std::size_t n_val =
            static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n - n_test)));
        for (std::size_t i = 0; i < n; ++i) {
            const LabeledImage& item = dataset[idx[i]];
            if (i < n_test)
                out.test.push_back(item);
            else if (i < n_test + n_val)
                out.validation.push_back(item);
            else
                out.train.push_back(item);
        }
    }
    if (out.test.empty() || out.validation.empty() || out.train.empty())
        throw InputError("dataset too small: every split needs at least one item");
    return out;
}

std::vector<LabeledImage> load_patches(const std::string& root, std::size_t* skipped) {
    std::size_t skip_count = 0;
    std::vector<LabeledImage> out;
    for (std::size_t cls = 0; cls < 2; ++cls) {
        const fs::path dir = fs::path(root) / std::to_string(cls);
        if (!fs::is_directory(dir))
            throw InputError("missing class directory '" + dir.string() + "'");
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_regular_file() && entry.path().extension() == ".png")
                files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw InputError("class directory '" + dir.string() + "' has no PNGs");
        for (const auto& f : files) {
            try {
                const png::Image8 img = png::read_rgb8(f.string());
                LabeledImage item;
                item.id = std::to_string(cls) + "/" + f.filename().string();
                item.pixels = preprocess(image_to_raw_tensor(img));
                item.label = cls;
                out.push_back(std::move(item));
            } catch (const InputError& e) {
                ++skip_count;
                std::cerr << "warning: skipping undecodable file: " << e.what() << "\n";
            }
        }
    }
    if (skipped) *skipped = skip_count;
    return out;
}

namespace {

// One raw [3,size,size] image in byte range. Class 0 is a bright field with a
// few wide dark blobs; class 1 is darker with dense per-pixel speckle, so the
// positive class reads darker and denser, as in the clinical patches.
Tensor synth_raw_image(std::size_t size, std::size_t label, Rng& rng) {
    const double s = static_cast<double>(size);
    std::vector<double> base(size * size, 0.0);
    if (label == 0) {
        const double bg = rng.uniform(190.0, 235.0);
        for (auto& v : base) v = bg;
        const int blobs = 2 + static_cast<int>(rng.below(3));
        for (int b = 0; b < blobs; ++b) {
            const double cx = rng.uniform(0.15 * s, 0.85 * s);
            const double cy = rng.uniform(0.15 * s, 0.85 * s);
            const double radius = rng.uniform(0.18 * s, 0.35 * s);
            const double depth = rng.uniform(30.0, 70.0);
            for (std::size_t y = 0; y < size; ++y)
                for (std::size_t x = 0; x < size; ++x) {
                    const double dx = (static_cast<double>(x) - cx) / radius;
                    const double dy = (static_cast<double>(y) - cy) / radius;
                    base[y * size + x] -= depth * std::exp(-(dx * dx + dy * dy));
                }
        }
    } else {
        const double bg = rng.uniform(95.0, 140.0);
        for (auto& v : base) {
            v = bg + rng.uniform(-25.0, 25.0);
            if (rng.uniform() < 0.45) v -= rng.uniform(30.0, 80.0);
        }
    }

    std::vector<double> out(3 * size * size);
    const double tint[3] = {rng.uniform(-12.0, 12.0), rng.uniform(-12.0, 12.0),
                            rng.uniform(-12.0, 12.0)};
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < size * size; ++i) {
            const double v = std::llround(base[i] + tint[c]);
            out[c * size * size + i] = std::clamp(v, 0.0, 255.0);
        }
    return Tensor({3, size, size}, std::move(out));
}

}  // namespace

std::vector<LabeledImage> synth_generate(const SynthConfig& cfg) {
    if (cfg.n_per_class < 1) throw InputError("synth needs n >= 1 per class");
    if (cfg.size < 8) throw InputError("synth needs size >= 8");
    if (cfg.label_noise < 0.0 || cfg.label_noise > 1.0)
        throw InputError("label noise fraction must lie in [0,1]");

    Rng root(cfg.seed);
    std::vector<LabeledImage> out;
    out.reserve(2 * cfg.n_per_class);
    for (std::size_t cls = 0; cls < 2; ++cls)
        for (std::size_t i = 0; i < cfg.n_per_class; ++i) {
            Rng rng = root.stream(cls * cfg.n_per_class + i);
            LabeledImage item;
            item.id = "synth_" + std::to_string(cls) + "_" + std::to_string(i);
            item.pixels = preprocess(synth_raw_image(cfg.size, cls, rng));
            item.label = cls;
            out.push_back(std::move(item));
        }

    if (cfg.label_noise > 0.0) {
        Rng noise = root.stream(1u << 20);
        for (auto& item : out)
            if (noise.uniform() < cfg.label_noise) item.label = 1 - item.label;
    }
    return out;
}

void synth_export(const std::string& root, const std::vector<LabeledImage>& images) {
    for (std::size_t cls = 0; cls < 2; ++cls)
        fs::create_directories(fs::path(root) / std::to_string(cls));
    for (const auto& item : images) {
        const png::Image8 img = raw_tensor_to_image(preprocess_inverse(item.pixels));
        const fs::path path = fs::path(root) / std::to_string(item.label) / (item.id + ".png");
        png::write_rgb8(path.string(), img);
    }
}

}  // namespace bvar
