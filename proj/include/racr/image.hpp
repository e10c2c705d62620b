#pragma once

#include <cstdint>
#include <vector>

#include "racr/common.hpp"

namespace racr {

// 8-bit raster, row-major, interleaved channels (1 = gray, 3 = RGB).
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<uint8_t> pixels;

    uint8_t at(int y, int x, int c = 0) const {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    uint8_t& at(int y, int x, int c = 0) {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    static Image make(int height, int width, int channels, uint8_t fill = 0);
};

// Thin decode layer: PPM (P5/P6) and 8-bit non-interlaced PNG (gray/RGB/RGBA).
Image read_image(const fs::path& file);
void write_ppm(const Image& image, const fs::path& file);
void write_png(const Image& image, const fs::path& file);

std::vector<uint8_t> to_grayscale(const Image& image);  // BT.601 luma

}  // namespace racr
