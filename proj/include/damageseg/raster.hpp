#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

namespace damageseg {

/// Interleaved 8-bit RGB raster, row-major (HWC).
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

    std::uint8_t& at(int x, int y, int c) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    std::uint8_t at(int x, int y, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    bool operator==(const Image&) const = default;
};

/// Single-channel class-index raster, row-major.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> labels;

    Mask() = default;
    Mask(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), labels(static_cast<std::size_t>(w) * h, fill) {}

    std::uint8_t& at(int x, int y) { return labels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
    bool operator==(const Mask&) const = default;
};

/// Aligned pre image, post image and ground-truth mask.
struct RasterPair {
    Image pre;
    Image post;
    Mask mask;
};

/// Throws ShapeError / ValidationError when the three rasters disagree in size
/// or the mask carries labels outside 0..4.
void validate_pair(const RasterPair& pair);

// PNG I/O. Colour images are converted to 8-bit RGB on read; masks are read as
// 8-bit grayscale.
Image read_png_rgb(const std::filesystem::path& path);
Mask read_png_mask(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
void write_png(const std::filesystem::path& path, const Mask& mask);

/// Reads only the PNG header; returns (width, height).
std::pair<int, int> png_dimensions(const std::filesystem::path& path);

}  // namespace damageseg
