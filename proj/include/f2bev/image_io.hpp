#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace f2bev {

// 8-bit raster, row-major, interleaved channels (1 = gray, 3 = RGB).
struct Image8 {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<std::uint8_t> pixels;

    Image8() = default;
    Image8(int w, int h, int c, std::uint8_t fill = 0)
        : width(w), height(h), channels(c),
          pixels(static_cast<std::size_t>(w) * h * c, fill) {}

    std::uint8_t& at(int x, int y, int c = 0) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::uint8_t at(int x, int y, int c = 0) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    bool operator==(const Image8&) const = default;
};

// Binary netpbm: P5 (gray) and P6 (RGB), maxval 255.
Image8 read_pgm(const std::filesystem::path& path);
Image8 read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Image8& image);
void write_ppm(const std::filesystem::path& path, const Image8& image);

}  // namespace f2bev
