// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wbfuse/image.hpp"
#include "wbfuse/linear_fusion.hpp"

namespace wbf {

/// Green-normalized linear-RGB chromaticity of a blackbody-like source at `cct` kelvin.
Rgb cct_to_rgb(double cct);

inline constexpr std::array<double, kPresetCount> kPresetCct = {2850.0, 3800.0, 5500.0, 6500.0, 7500.0};

/// Preset white-balance gains in preset order; green is 1, red falls with temperature.
const std::array<Rgb, kPresetCount>& preset_gains();

struct SceneOptions {
    bool three_illuminants = false;
};

/// Synthetic scene: reflectance lit by a spatially varying mix of two (or three) illuminants.
struct SceneSpec {
    std::uint64_t seed = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> reflectance;  // H * W * 3, in [0.05, 0.95]
    Rgb illuminant_a{1.0, 1.0, 1.0};
    Rgb illuminant_b{1.0, 1.0, 1.0};
    std::vector<double> mixing;       // H * W, weight of illuminant_a, in [0, 1]
    std::optional<Rgb> illuminant_c;  // three-illuminant scenes only
    std::vector<double> mixing_bc;    // weight of illuminant_b against illuminant_c
    double exposure = 1.0;

    /// Illuminant color reaching pixel i.
    Rgb light(std::size_t i) const;
    bool operator==(const SceneSpec&) const = default;
};

/// Deterministic in (seed, H, W, options). Throws std::invalid_argument if H or W < 8.
SceneSpec generate_scene(std::uint64_t seed, std::size_t height, std::size_t width, SceneOptions options = {});

/// Linear sensor image exposure * reflectance * light (unclipped).
ImageRGB render_raw(const SceneSpec& scene);
/// von Kries division by the preset gains, clip to [0, 1], sRGB encode.
ImageRGB render_preset(const SceneSpec& scene, const Rgb& preset);
PresetStack render_presets(const SceneSpec& scene);
/// Per-pixel white balance with the known light (GT before brightness adjustment).
ImageRGB render_ground_truth(const SceneSpec& scene);
/// Gray-world estimate of a linear image, green-normalized.
Rgb gray_world(const ImageRGB& raw);
/// Single global white balance from the gray-world estimate.
ImageRGB render_awb(const SceneSpec& scene);

enum class BrightnessMode { Mean, Luma };

/// Linear-space brightness of an sRGB-encoded pixel.
double pixel_brightness(std::span<const double, 3> srgb, BrightnessMode mode = BrightnessMode::Mean);

struct BrightnessAdjusted {
    ImageRGB image;
    std::size_t clipped_pixels = 0;
    std::vector<std::uint8_t> clipped;  // per pixel, 1 where a channel hit 1.0
};

/// Scales each GT pixel in linear space so its brightness matches the AWB
/// render: gt * (B(awb) + 1e-6) / (B(gt) + 1e-6), then re-encodes.
BrightnessAdjusted adjust_brightness(const ImageRGB& gt, const ImageRGB& awb,
                                     BrightnessMode mode = BrightnessMode::Mean);

struct RenderedScene {
    std::string id;
    std::string split;
    PresetStack presets;
    ImageRGB gt;   // brightness-adjusted
    ImageRGB awb;
    std::size_t clipped_pixels = 0;
};

RenderedScene render_scene(const SceneSpec& scene, BrightnessMode mode = BrightnessMode::Mean);

struct SplitCounts {
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;
    bool operator==(const SplitCounts&) const = default;
};

/// Validation and test sizes are floored; the remainder goes to training.
SplitCounts split_counts(std::size_t n, const std::array<double, 3>& ratios);

struct DatasetOptions {
    std::size_t scenes = 20;
    std::size_t height = 64;
    std::size_t width = 64;
    std::uint64_t seed = 0;
    std::array<double, 3> ratios = {0.65, 0.15, 0.20};
    std::optional<SplitCounts> counts;  // overrides ratios
    SceneOptions scene;
    BrightnessMode brightness = BrightnessMode::Mean;
    std::size_t threads = 1;
};

struct DatasetManifest {
    std::size_t scenes = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::uint64_t seed = 0;
    std::map<std::string, std::vector<std::string>> splits;  // "train", "val", "test"

    const std::vector<std::string>& split(const std::string& name) const;
};

/// Scene i of a dataset built with `seed`.
std::uint64_t scene_seed(std::uint64_t dataset_seed, std::size_t index);
std::string scene_id(std::size_t index);

/// Renders every scene and writes:
///   <out>/manifest.json
///   <out>/<scene id>/{tungsten,fluorescent,daylight,cloudy,shade,gt,awb}.png + meta.json
DatasetManifest build_dataset(const DatasetOptions& options, const std::filesystem::path& out_dir);

DatasetManifest read_manifest(const std::filesystem::path& dataset_dir);

struct LoadedScene {
    std::string id;
    PresetStack presets;
    ImageRGB gt;
    ImageRGB awb;
};

LoadedScene load_scene(const std::filesystem::path& dataset_dir, const std::string& id);

}  // namespace wbf
