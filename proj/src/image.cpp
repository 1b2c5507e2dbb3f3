// SPDX-License-Identifier: Apache-2.0
#include "wbfuse/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace wbf {

void PresetStack::validate() const {
    const std::size_t H = height(), W = width();
    if (H == 0 || W == 0) throw std::invalid_argument("preset stack: empty images");
    for (std::size_t p = 0; p < kPresetCount; ++p) {
        const ImageRGB& img = presets[p];
        if (img.height() != H || img.width() != W) {
            throw std::invalid_argument("preset stack: " + std::string(kPresetNames[p]) + " is " +
                                        std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                                        ", expected " + std::to_string(H) + "x" + std::to_string(W));
        }
        for (double v : img.data()) {
            if (!(v >= 0.0 && v <= 1.0)) {
                throw std::invalid_argument("preset stack: " + std::string(kPresetNames[p]) +
                                            " has values outside [0, 1]");
            }
        }
    }
}

namespace {

using FilePtr = std::unique_ptr<std::FILE, int (*)(std::FILE*)>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode), &std::fclose);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    return f;
}

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
}

void write_rows(const std::filesystem::path& path, std::size_t height, std::size_t width, int color_type,
                const std::vector<std::uint8_t>& bytes, std::size_t channels) {
    FilePtr file = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("libpng: cannot create write struct");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng: failed writing " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t h = 0; h < height; ++h) {
        png_write_row(png, const_cast<png_bytep>(bytes.data() + h * width * channels));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

ImageRGB quantize8(const ImageRGB& image) {
    ImageRGB out(image.height(), image.width());
    for (std::size_t i = 0; i < image.data().size(); ++i) out.data()[i] = to_byte(image.data()[i]) / 255.0;
    return out;
}

void write_png(const std::filesystem::path& path, const ImageRGB& image) {
    std::vector<std::uint8_t> bytes(image.data().size());
    std::transform(image.data().begin(), image.data().end(), bytes.begin(), to_byte);
    write_rows(path, image.height(), image.width(), PNG_COLOR_TYPE_RGB, bytes, 3);
}

void write_png_gray(const std::filesystem::path& path, std::size_t height, std::size_t width,
                    std::span<const double> values) {
    if (values.size() != height * width) throw std::invalid_argument("write_png_gray: size mismatch");
    std::vector<std::uint8_t> bytes(values.size());
    std::transform(values.begin(), values.end(), bytes.begin(), to_byte);
    write_rows(path, height, width, PNG_COLOR_TYPE_GRAY, bytes, 1);
}

ImageRGB read_png(const std::filesystem::path& path) {
    FilePtr file = open_file(path, "rb");
    std::uint8_t sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw std::runtime_error(path.string() + ": not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("libpng: cannot create read struct");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error(path.string() + ": corrupt PNG");
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_byte bit_depth = png_get_bit_depth(png, info);
    const png_byte color_type = png_get_color_type(png, info);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const std::size_t width = png_get_image_width(png, info);
    const std::size_t height = png_get_image_height(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    if (rowbytes != width * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error(path.string() + ": unsupported PNG layout");
    }
    std::vector<std::uint8_t> bytes(height * rowbytes);
    std::vector<png_bytep> rows(height);
    for (std::size_t h = 0; h < height; ++h) rows[h] = bytes.data() + h * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    ImageRGB img(height, width);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.data()[i] = bytes[i] / 255.0;
    return img;
}

}  // namespace wbf
