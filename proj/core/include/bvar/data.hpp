#pragma once

// Dataset ingestion and preparation: the complement preprocessing, seeded
// stratified splits, PNG directory loading, and the synthetic two-class
// generator used at desk scale.

#include <cstdint>
#include <string>
#include <vector>

#include "bvar/png_io.hpp"
#include "bvar/rng.hpp"
#include "bvar/tensor.hpp"

namespace bvar {

struct LabeledImage {
    std::string id;
    Tensor pixels;  // [C,H,W], values in [0,1]
    std::size_t label = 0;
};

struct DatasetSplit {
    std::vector<LabeledImage> train;
    std::vector<LabeledImage> validation;
    std::vector<LabeledImage> test;
    std::uint64_t split_seed = 0;
};

// (255 - raw) / 255 per element. raw must hold values in [0,255].
Tensor preprocess(const Tensor& raw);

// Exact inverse of preprocess for integer-valued raw images: 255 - 255*p.
Tensor preprocess_inverse(const Tensor& pixels);

// Planar [3,H,W] tensor of raw byte values from an interleaved RGB image.
Tensor image_to_raw_tensor(const png::Image8& img);
png::Image8 raw_tensor_to_image(const Tensor& raw);

// Seeded stratified shuffle split: 20% test, then 20% of the remainder as
// validation, rounded per class.
DatasetSplit split(const std::vector<LabeledImage>& dataset, std::uint64_t seed);

// Loads `<root>/0/*.png` and `<root>/1/*.png`, preprocessed, sorted by id.
// Undecodable files are skipped with a warning on stderr; *skipped (optional)
// receives the skip count.
std::vector<LabeledImage> load_patches(const std::string& root, std::size_t* skipped = nullptr);

struct SynthConfig {
    std::size_t n_per_class = 50;
    std::size_t size = 16;
    std::uint64_t seed = 0;
    double label_noise = 0.0;  // fraction of flipped labels
};

// Class 0: bright, smooth, blobby; class 1: darker, dense speckle. Returns
// 2*n_per_class preprocessed images, deterministic per seed.
std::vector<LabeledImage> synth_generate(const SynthConfig& cfg);

// Writes images as PNGs in the `<root>/<label>/<id>.png` layout.
void synth_export(const std::string& root, const std::vector<LabeledImage>& images);

}  // namespace bvar
