// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wbfuse/image.hpp"

namespace wbf {

using Rgb = std::array<double, 3>;

/// Euclidean projection onto the probability simplex (sort and threshold).
std::vector<double> project_to_simplex(std::span<const double> v);

struct PixelFit {
    std::vector<double> weights;
    double residual = 0.0;
    std::size_t iterations = 0;
};

/// Best convex combination of `presets` approximating `target`, found by
/// projected gradient descent with step 1/L, L = 2 * sigma_max(P^T P),
/// warm-started from the best face of the hull (exact for up to 12 presets). Stops when no weight moves by 1e-9 or
/// after 10,000 iterations. Identical presets yield uniform weights.
PixelFit fit_pixel_weights(std::span<const Rgb> presets, const Rgb& target);

/// Per-pixel weight vectors over the presets, row-major [H * W][P].
struct FusionWeights {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t presets = 0;
    std::vector<double> values;

    std::span<const double> row(std::size_t pixel) const {
        return std::span<const double>(values).subspan(pixel * presets, presets);
    }
    std::span<double> row(std::size_t pixel) { return std::span<double>(values).subspan(pixel * presets, presets); }
};

/// Applies a per-pixel weight map to the presets.
ImageRGB blend(const PresetStack& stack, const FusionWeights& weights);

struct BlendResult {
    ImageRGB image;
    FusionWeights weights;
    std::vector<double> residuals;  // per pixel, sRGB units
};

/// Best per-pixel convex blend of the five presets toward `gt`.
BlendResult oracle_blend(const PresetStack& stack, const ImageRGB& gt);

inline constexpr double kDefaultHullTolerance = 1e-3;

struct HullReport {
    std::size_t height = 0;
    std::size_t width = 0;
    double tolerance = kDefaultHullTolerance;
    std::vector<double> distances;  // per pixel, from GT to the preset hull
    double out_of_hull_fraction = 0.0;
    double mean_distance = 0.0;
    double max_distance = 0.0;

    /// Fraction of pixels whose distance exceeds `tol`.
    double fraction_above(double tol) const;
};

/// Distance of every GT pixel from the convex hull of its five preset values,
/// measured in encoded sRGB.
HullReport analyze_hull(const PresetStack& stack, const ImageRGB& gt, double tol = kDefaultHullTolerance);

/// Writes the distance map as 8-bit grayscale; 0.1 sRGB units or more saturate to white.
void write_distance_map(const std::filesystem::path& path, const HullReport& report);

}  // namespace wbf
