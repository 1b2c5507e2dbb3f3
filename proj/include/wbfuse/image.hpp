// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace wbf {

/// H x W x 3 image with interleaved channels. Values are sRGB-encoded in [0, 1]
/// unless a function says otherwise.
class ImageRGB {
public:
    ImageRGB() = default;
    ImageRGB(std::size_t height, std::size_t width, double fill = 0.0)
        : height_(height), width_(width), data_(height * width * 3, fill) {}

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t pixel_count() const noexcept { return height_ * width_; }
    bool empty() const noexcept { return data_.empty(); }

    double& at(std::size_t h, std::size_t w, std::size_t c) { return data_[(h * width_ + w) * 3 + c]; }
    double at(std::size_t h, std::size_t w, std::size_t c) const { return data_[(h * width_ + w) * 3 + c]; }

    std::span<double, 3> pixel(std::size_t i) { return std::span<double, 3>(data_.data() + i * 3, 3); }
    std::span<const double, 3> pixel(std::size_t i) const {
        return std::span<const double, 3>(data_.data() + i * 3, 3);
    }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool same_size(const ImageRGB& o) const noexcept { return height_ == o.height_ && width_ == o.width_; }
    bool operator==(const ImageRGB&) const = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> data_;
};

/// White-balance presets in their fixed order.
enum class Preset : std::size_t { Tungsten = 0, Fluorescent, Daylight, Cloudy, Shade };

inline constexpr std::size_t kPresetCount = 5;
inline constexpr std::array<std::string_view, kPresetCount> kPresetNames = {"tungsten", "fluorescent", "daylight",
                                                                             "cloudy", "shade"};

/// The five renders of one scene, one per preset, all the same size.
struct PresetStack {
    std::array<ImageRGB, kPresetCount> presets;

    std::size_t height() const noexcept { return presets[0].height(); }
    std::size_t width() const noexcept { return presets[0].width(); }
    const ImageRGB& operator[](Preset p) const { return presets[static_cast<std::size_t>(p)]; }

    /// Throws std::invalid_argument on size mismatch or values outside [0, 1].
    void validate() const;
};

/// Quantizes to 8 bits per channel (round half up) and writes an RGB PNG.
void write_png(const std::filesystem::path& path, const ImageRGB& image);
/// Writes a single-channel 8-bit PNG from values in [0, 1]; `values` has H*W entries.
void write_png_gray(const std::filesystem::path& path, std::size_t height, std::size_t width,
                    std::span<const double> values);
/// Reads an 8-bit RGB/RGBA/gray PNG into [0, 1]. Throws std::runtime_error with the path on failure.
ImageRGB read_png(const std::filesystem::path& path);

/// 8-bit quantization used by write_png, exposed so in-memory data can match disk round-trips.
ImageRGB quantize8(const ImageRGB& image);

}  // namespace wbf
