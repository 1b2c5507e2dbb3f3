// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "wbfuse/image.hpp"

namespace wbf {

/// IEC 61966-2-1 transfer function, sRGB-encoded value to linear.
double srgb_to_linear(double v);
/// Inverse of srgb_to_linear.
double linear_to_srgb(double v);

struct LabColor {
    double L = 0.0;
    double a = 0.0;
    double b = 0.0;
};

/// Linear sRGB (D65) to CIE XYZ, Y of white = 1.
std::array<double, 3> linear_rgb_to_xyz(std::span<const double, 3> rgb);
/// CIE XYZ to CIELAB relative to the D65 white of the sRGB primaries.
LabColor xyz_to_lab(const std::array<double, 3>& xyz);
/// Encoded sRGB pixel to CIELAB.
LabColor srgb_to_lab(std::span<const double, 3> srgb);

/// CIEDE2000 color difference with kL = kC = kH = 1.
double delta_e_2000(const LabColor& x, const LabColor& y);

/// Mean per-pixel CIEDE2000 between two encoded sRGB images.
double delta_e_2000(const ImageRGB& img, const ImageRGB& gt);
/// Per-pixel CIEDE2000 map (H*W values).
std::vector<double> delta_e_2000_map(const ImageRGB& img, const ImageRGB& gt);
/// Mean squared error on the 0-255 scale.
double mse(const ImageRGB& img, const ImageRGB& gt);
/// Mean angle in degrees between RGB vectors; pixels where either vector has
/// norm below 1e-6 are skipped (0 if every pixel is skipped).
double mae_angular(const ImageRGB& img, const ImageRGB& gt);

struct Summary {
    double mean = 0.0;
    double median = 0.0;
    double trimean = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
};

/// Mean, median and trimean, quartiles interpolated linearly between order
/// statistics at position q * (n - 1). Throws std::invalid_argument on an empty list.
Summary aggregate(std::span<const double> values);

struct ImageMetrics {
    std::string id;
    double delta_e = 0.0;
    double mse = 0.0;
    double mae = 0.0;
};

ImageMetrics evaluate_image(std::string id, const ImageRGB& img, const ImageRGB& gt);

struct MetricsReport {
    std::string split;
    std::vector<ImageMetrics> images;
    Summary delta_e;
    Summary mse;
    Summary mae;

    std::size_t count() const noexcept { return images.size(); }
};

MetricsReport make_report(std::string split, std::vector<ImageMetrics> images);

/// One JSON object per line: an "image" record per image followed by a "summary" record.
std::string report_to_jsonl(const MetricsReport& report);
/// Aligned human-readable table.
std::string report_to_table(const MetricsReport& report);

}  // namespace wbf
