// SPDX-License-Identifier: Apache-2.0
#include "wbfuse/color.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace wbf {

double srgb_to_linear(double v) {
    return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double v) {
    return v <= 0.0031308 ? v * 12.92 : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

namespace {

constexpr double kRgbToXyz[3][3] = {
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
};

// White point from the matrix row sums, so RGB (1, 1, 1) maps to a = b = 0.
constexpr double kWhite[3] = {
    kRgbToXyz[0][0] + kRgbToXyz[0][1] + kRgbToXyz[0][2],
    kRgbToXyz[1][0] + kRgbToXyz[1][1] + kRgbToXyz[1][2],
    kRgbToXyz[2][0] + kRgbToXyz[2][1] + kRgbToXyz[2][2],
};

double lab_f(double t) {
    constexpr double delta = 6.0 / 29.0;
    return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

constexpr double deg(double rad) { return rad * 180.0 / std::numbers::pi; }
constexpr double rad(double degrees) { return degrees * std::numbers::pi / 180.0; }

void require_same_size(const ImageRGB& img, const ImageRGB& gt, const char* metric) {
    if (!img.same_size(gt)) {
        throw std::invalid_argument(std::string(metric) + ": image is " + std::to_string(img.height()) + "x" +
                                    std::to_string(img.width()) + ", reference is " + std::to_string(gt.height()) +
                                    "x" + std::to_string(gt.width()));
    }
}

}  // namespace

std::array<double, 3> linear_rgb_to_xyz(std::span<const double, 3> rgb) {
    std::array<double, 3> xyz{};
    for (int i = 0; i < 3; ++i)
        xyz[i] = kRgbToXyz[i][0] * rgb[0] + kRgbToXyz[i][1] * rgb[1] + kRgbToXyz[i][2] * rgb[2];
    return xyz;
}

LabColor xyz_to_lab(const std::array<double, 3>& xyz) {
    const double fx = lab_f(xyz[0] / kWhite[0]);
    const double fy = lab_f(xyz[1] / kWhite[1]);
    const double fz = lab_f(xyz[2] / kWhite[2]);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

LabColor srgb_to_lab(std::span<const double, 3> srgb) {
    const std::array<double, 3> lin = {srgb_to_linear(srgb[0]), srgb_to_linear(srgb[1]), srgb_to_linear(srgb[2])};
    return xyz_to_lab(linear_rgb_to_xyz(lin));
}

double delta_e_2000(const LabColor& x, const LabColor& y) {
    const double c1 = std::hypot(x.a, x.b);
    const double c2 = std::hypot(y.a, y.b);
    const double c_bar = 0.5 * (c1 + c2);
    const double c_bar7 = std::pow(c_bar, 7.0);
    const double g = 0.5 * (1.0 - std::sqrt(c_bar7 / (c_bar7 + std::pow(25.0, 7.0))));
    const double a1 = (1.0 + g) * x.a;
    const double a2 = (1.0 + g) * y.a;
    const double cp1 = std::hypot(a1, x.b);
    const double cp2 = std::hypot(a2, y.b);

    auto hue = [](double b, double a) {
        if (a == 0.0 && b == 0.0) return 0.0;
        const double h = deg(std::atan2(b, a));
        return h < 0.0 ? h + 360.0 : h;
    };
    const double hp1 = hue(x.b, a1);
    const double hp2 = hue(y.b, a2);

    const double dL = y.L - x.L;
    const double dC = cp2 - cp1;
    double dh = 0.0;
    if (cp1 * cp2 != 0.0) {
        dh = hp2 - hp1;
        if (dh > 180.0) dh -= 360.0;
        else if (dh < -180.0) dh += 360.0;
    }
    const double dH = 2.0 * std::sqrt(cp1 * cp2) * std::sin(rad(dh) / 2.0);

    const double L_bar = 0.5 * (x.L + y.L);
    const double cp_bar = 0.5 * (cp1 + cp2);
    double hp_bar = hp1 + hp2;
    if (cp1 * cp2 != 0.0) {
        if (std::abs(hp1 - hp2) <= 180.0) hp_bar *= 0.5;
        else if (hp1 + hp2 < 360.0) hp_bar = 0.5 * (hp1 + hp2 + 360.0);
        else hp_bar = 0.5 * (hp1 + hp2 - 360.0);
    }

    const double t = 1.0 - 0.17 * std::cos(rad(hp_bar - 30.0)) + 0.24 * std::cos(rad(2.0 * hp_bar)) +
                     0.32 * std::cos(rad(3.0 * hp_bar + 6.0)) - 0.20 * std::cos(rad(4.0 * hp_bar - 63.0));
    const double d_theta = 30.0 * std::exp(-std::pow((hp_bar - 275.0) / 25.0, 2.0));
    const double cp_bar7 = std::pow(cp_bar, 7.0);
    const double rc = 2.0 * std::sqrt(cp_bar7 / (cp_bar7 + std::pow(25.0, 7.0)));
    const double l50 = (L_bar - 50.0) * (L_bar - 50.0);
    const double sl = 1.0 + 0.015 * l50 / std::sqrt(20.0 + l50);
    const double sc = 1.0 + 0.045 * cp_bar;
    const double sh = 1.0 + 0.015 * cp_bar * t;
    const double rt = -std::sin(rad(2.0 * d_theta)) * rc;

    const double tl = dL / sl, tc = dC / sc, th = dH / sh;
    return std::sqrt(std::max(0.0, tl * tl + tc * tc + th * th + rt * tc * th));
}

std::vector<double> delta_e_2000_map(const ImageRGB& img, const ImageRGB& gt) {
    require_same_size(img, gt, "delta_e_2000");
    std::vector<double> out(img.pixel_count());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = delta_e_2000(srgb_to_lab(img.pixel(i)), srgb_to_lab(gt.pixel(i)));
    return out;
}

double delta_e_2000(const ImageRGB& img, const ImageRGB& gt) {
    const auto map = delta_e_2000_map(img, gt);
    if (map.empty()) return 0.0;
    double acc = 0.0;
    for (double v : map) acc += v;
    return acc / static_cast<double>(map.size());
}

double mse(const ImageRGB& img, const ImageRGB& gt) {
    require_same_size(img, gt, "mse");
    if (img.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < img.data().size(); ++i) {
        const double d = (img.data()[i] - gt.data()[i]) * 255.0;
        acc += d * d;
    }
    return acc / static_cast<double>(img.data().size());
}

double mae_angular(const ImageRGB& img, const ImageRGB& gt) {
    require_same_size(img, gt, "mae_angular");
    double acc = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        const auto a = img.pixel(i);
        const auto b = gt.pixel(i);
        const double na = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
        const double nb = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
        if (na < 1e-6 || nb < 1e-6) continue;
        const double cosine = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb);
        acc += deg(std::acos(std::clamp(cosine, -1.0, 1.0)));
        ++used;
    }
    return used ? acc / static_cast<double>(used) : 0.0;
}

Summary aggregate(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("aggregate: empty value list");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(sorted.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
    };
    Summary s;
    double acc = 0.0;
    for (double v : values) acc += v;
    s.mean = acc / static_cast<double>(values.size());
    s.q1 = quantile(0.25);
    s.median = quantile(0.5);
    s.q3 = quantile(0.75);
    s.trimean = (s.q1 + 2.0 * s.median + s.q3) / 4.0;
    return s;
}

ImageMetrics evaluate_image(std::string id, const ImageRGB& img, const ImageRGB& gt) {
    return {std::move(id), delta_e_2000(img, gt), mse(img, gt), mae_angular(img, gt)};
}

MetricsReport make_report(std::string split, std::vector<ImageMetrics> images) {
    MetricsReport r;
    r.split = std::move(split);
    r.images = std::move(images);
    if (r.images.empty()) return r;
    std::vector<double> de, sq, ang;
    for (const auto& m : r.images) {
        de.push_back(m.delta_e);
        sq.push_back(m.mse);
        ang.push_back(m.mae);
    }
    r.delta_e = aggregate(de);
    r.mse = aggregate(sq);
    r.mae = aggregate(ang);
    return r;
}

namespace {

nlohmann::ordered_json summary_json(const Summary& s) {
    return {{"mean", s.mean}, {"median", s.median}, {"trimean", s.trimean}};
}

}  // namespace

std::string report_to_jsonl(const MetricsReport& report) {
    std::ostringstream os;
    for (const auto& m : report.images) {
        nlohmann::ordered_json rec = {{"type", "image"}, {"split", report.split}, {"id", m.id},
                                      {"delta_e2000", m.delta_e}, {"mse", m.mse}, {"mae", m.mae}};
        os << rec.dump() << '\n';
    }
    nlohmann::ordered_json summary = {{"type", "summary"},
                                      {"split", report.split},
                                      {"count", report.count()},
                                      {"delta_e2000", summary_json(report.delta_e)},
                                      {"mse", summary_json(report.mse)},
                                      {"mae", summary_json(report.mae)}};
    os << summary.dump() << '\n';
    return os.str();
}

std::string report_to_table(const MetricsReport& report) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "split: %s   images: %zu\n", report.split.c_str(), report.count());
    os << line;
    std::snprintf(line, sizeof line, "%-10s %10s %10s %10s\n", "metric", "mean", "median", "trimean");
    os << line;
    auto row = [&](const char* name, const Summary& s) {
        std::snprintf(line, sizeof line, "%-10s %10.4f %10.4f %10.4f\n", name, s.mean, s.median, s.trimean);
        os << line;
    };
    row("DeltaE2000", report.delta_e);
    row("MSE", report.mse);
    row("MAE", report.mae);
    return os.str();
}

}  // namespace wbf
