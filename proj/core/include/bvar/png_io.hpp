#pragma once

// Thin libpng wrapper for 8-bit RGB images. Reads tolerate grayscale,
// palette, 16-bit and alpha variants by converting everything to RGB8.

#include <cstdint>
#include <string>
#include <vector>

namespace bvar::png {

struct Image8 {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> rgb;  // interleaved, row-major, 3 bytes/pixel
};

Image8 read_rgb8(const std::string& path);
void write_rgb8(const std::string& path, const Image8& img);

}  // namespace bvar::png
