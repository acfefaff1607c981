#include "damageseg/raster.hpp"

#include "damageseg/error.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <string>

namespace damageseg {

void validate_pair(const RasterPair& pair) {
    const auto& m = pair.mask;
    if (pair.pre.width != pair.post.width || pair.pre.height != pair.post.height ||
        pair.pre.width != m.width || pair.pre.height != m.height) {
        throw ShapeError("raster pair dimensions disagree: pre " + std::to_string(pair.pre.width) +
                         "x" + std::to_string(pair.pre.height) + ", post " +
                         std::to_string(pair.post.width) + "x" + std::to_string(pair.post.height) +
                         ", mask " + std::to_string(m.width) + "x" + std::to_string(m.height));
    }
    for (auto v : m.labels) {
        if (v > 4) throw ValidationError("mask label " + std::to_string(v) + " outside 0..4");
    }
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw IoError("cannot open " + path.string());
    return f;
}

[[noreturn]] void png_error_handler(png_structp, png_const_charp msg) {
    throw IoError(std::string("libpng: ") + msg);
}

void png_warning_handler(png_structp, png_const_charp) {}

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    PngReader() {
        png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler,
                                     png_warning_handler);
        if (!png) throw IoError("png_create_read_struct failed");
        info = png_create_info_struct(png);
        if (!info) {
            png_destroy_read_struct(&png, nullptr, nullptr);
            throw IoError("png_create_info_struct failed");
        }
    }
    ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
    PngReader(const PngReader&) = delete;
    PngReader& operator=(const PngReader&) = delete;
};

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    PngWriter() {
        png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler,
                                      png_warning_handler);
        if (!png) throw IoError("png_create_write_struct failed");
        info = png_create_info_struct(png);
        if (!info) {
            png_destroy_write_struct(&png, nullptr);
            throw IoError("png_create_info_struct failed");
        }
    }
    ~PngWriter() { png_destroy_write_struct(&png, &info); }
    PngWriter(const PngWriter&) = delete;
    PngWriter& operator=(const PngWriter&) = delete;
};

// Decodes to 8-bit with the requested channel count (1 or 3).
std::vector<std::uint8_t> read_png(const std::filesystem::path& path, int channels, int& width,
                                   int& height) {
    auto file = open_file(path, "rb");
    PngReader r;
    png_init_io(r.png, file.get());
    png_read_info(r.png, r.info);

    width = static_cast<int>(png_get_image_width(r.png, r.info));
    height = static_cast<int>(png_get_image_height(r.png, r.info));
    const int color = png_get_color_type(r.png, r.info);
    const int depth = png_get_bit_depth(r.png, r.info);

    if (depth == 16) png_set_strip_16(r.png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
    if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(r.png);
    if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(r.png, r.info, PNG_INFO_tRNS)) {
        png_set_strip_alpha(r.png);
    }
    const bool is_gray = color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA;
    if (channels == 3 && is_gray) png_set_gray_to_rgb(r.png);
    if (channels == 1 && !is_gray) {
        throw IoError(path.string() + ": expected a single-channel mask PNG");
    }
    png_read_update_info(r.png, r.info);

    std::vector<std::uint8_t> data(static_cast<std::size_t>(width) * height * channels);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) {
        rows[y] = data.data() + static_cast<std::size_t>(y) * width * channels;
    }
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);
    return data;
}

void write_png_raw(const std::filesystem::path& path, const std::uint8_t* data, int width,
                   int height, int channels) {
    auto file = open_file(path, "wb");
    PngWriter w;
    png_init_io(w.png, file.get());
    png_set_IHDR(w.png, w.info, width, height, 8,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    for (int y = 0; y < height; ++y) {
        png_write_row(w.png, const_cast<png_bytep>(data + static_cast<std::size_t>(y) * width * channels));
    }
    png_write_end(w.png, nullptr);
}

}  // namespace

Image read_png_rgb(const std::filesystem::path& path) {
    Image img;
    img.pixels = read_png(path, 3, img.width, img.height);
    return img;
}

Mask read_png_mask(const std::filesystem::path& path) {
    Mask m;
    m.labels = read_png(path, 1, m.width, m.height);
    return m;
}

void write_png(const std::filesystem::path& path, const Image& image) {
    write_png_raw(path, image.pixels.data(), image.width, image.height, 3);
}

void write_png(const std::filesystem::path& path, const Mask& mask) {
    write_png_raw(path, mask.labels.data(), mask.width, mask.height, 1);
}

std::pair<int, int> png_dimensions(const std::filesystem::path& path) {
    auto file = open_file(path, "rb");
    PngReader r;
    png_init_io(r.png, file.get());
    png_read_info(r.png, r.info);
    return {static_cast<int>(png_get_image_width(r.png, r.info)),
            static_cast<int>(png_get_image_height(r.png, r.info))};
}

}  // namespace damageseg
