// SPDX-License-Identifier: Apache-2.0
#include "wbfuse/linear_fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace wbf {

std::vector<double> project_to_simplex(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("project_to_simplex: empty vector");
    std::vector<double> u(v.begin(), v.end());
    std::sort(u.begin(), u.end(), std::greater<>());
    double cumulative = 0.0, theta = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
        cumulative += u[j];
        const double t = (cumulative - 1.0) / static_cast<double>(j + 1);
        if (u[j] - t > 0.0) theta = t;
    }
    std::vector<double> w(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) w[i] = std::max(v[i] - theta, 0.0);
    return w;
}

namespace {

double distance(const Rgb& a, const Rgb& b) {
    return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

// Largest eigenvalue of a symmetric positive semidefinite 3x3 matrix.
double largest_eigenvalue(const std::array<std::array<double, 3>, 3>& m) {
    const double p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    const double q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    if (p1 == 0.0) return std::max({m[0][0], m[1][1], m[2][2]});
    const double p2 = (m[0][0] - q) * (m[0][0] - q) + (m[1][1] - q) * (m[1][1] - q) + (m[2][2] - q) * (m[2][2] - q) +
                      2.0 * p1;
    const double p = std::sqrt(p2 / 6.0);
    std::array<std::array<double, 3>, 3> b{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) b[i][j] = (m[i][j] - (i == j ? q : 0.0)) / p;
    const double det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) -
                       b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0]) +
                       b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    const double r = std::clamp(det / 2.0, -1.0, 1.0);
    return q + 2.0 * p * std::cos(std::acos(r) / 3.0);
}

Rgb combine(std::span<const Rgb> presets, std::span<const double> w) {
    Rgb out{0.0, 0.0, 0.0};
    for (std::size_t p = 0; p < presets.size(); ++p)
        for (int c = 0; c < 3; ++c) out[c] += w[p] * presets[p][c];
    return out;
}

// Solves the k x k system a x = b in place; false if (near) singular.
bool solve_small(std::array<std::array<double, 3>, 3> a, std::array<double, 3> b, std::size_t k,
                 std::array<double, 3>& x) {
    double scale = 0.0;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) scale = std::max(scale, std::abs(a[i][j]));
    if (scale == 0.0) return false;
    for (std::size_t col = 0; col < k; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < k; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        if (std::abs(a[piv][col]) < 1e-12 * scale) return false;
        std::swap(a[piv], a[col]);
        std::swap(b[piv], b[col]);
        for (std::size_t r = col + 1; r < k; ++r) {
            const double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c < k; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    for (std::size_t i = k; i-- > 0;) {
        double s = b[i];
        for (std::size_t j = i + 1; j < k; ++j) s -= a[i][j] * x[j];
        x[i] = s / a[i][i];
    }
    return true;
}

// Closest hull point by enumerating faces spanned by up to four presets.
std::vector<double> face_enumeration_start(std::span<const Rgb> presets, const Rgb& target) {
    const std::size_t P = presets.size();
    std::vector<double> best(P, 0.0), w(P);
    double best_dist = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> idx;
    for (std::uint32_t mask = 1; mask < (1u << P); ++mask) {
        idx.clear();
        for (std::size_t p = 0; p < P; ++p)
            if (mask & (1u << p)) idx.push_back(p);
        if (idx.size() > 4) continue;
        const Rgb& x0 = presets[idx[0]];
        const std::size_t k = idx.size() - 1;
        std::array<double, 3> alpha{};
        if (k > 0) {
            std::array<Rgb, 3> d{};
            for (std::size_t j = 0; j < k; ++j)
                for (int c = 0; c < 3; ++c) d[j][c] = presets[idx[j + 1]][c] - x0[c];
            std::array<std::array<double, 3>, 3> a{};
            std::array<double, 3> b{};
            for (std::size_t i = 0; i < k; ++i) {
                for (std::size_t j = 0; j < k; ++j) a[i][j] = d[i][0] * d[j][0] + d[i][1] * d[j][1] + d[i][2] * d[j][2];
                for (int c = 0; c < 3; ++c) b[i] += d[i][c] * (target[c] - x0[c]);
            }
            if (!solve_small(a, b, k, alpha)) continue;
        }
        std::fill(w.begin(), w.end(), 0.0);
        double rest = 1.0;
        bool feasible = true;
        for (std::size_t j = 0; j < k; ++j) {
            if (alpha[j] < 0.0) feasible = false;
            w[idx[j + 1]] = alpha[j];
            rest -= alpha[j];
        }
        if (!feasible || rest < 0.0) continue;
        w[idx[0]] = rest;
        const double dist = distance(combine(presets, w), target);
        if (dist < best_dist) {
            best_dist = dist;
            best = w;
        }
    }
    return best;
}

}  // namespace

PixelFit fit_pixel_weights(std::span<const Rgb> presets, const Rgb& target) {
    const std::size_t P = presets.size();
    if (P == 0) throw std::invalid_argument("fit_pixel_weights: no presets");
    PixelFit fit;

    // P^T P has the same nonzero spectrum as the 3x3 matrix sum_p x_p x_p^T.
    std::array<std::array<double, 3>, 3> gram{};
    for (const Rgb& x : presets)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) gram[i][j] += x[i] * x[j];
    const bool identical =
        std::all_of(presets.begin(), presets.end(), [&](const Rgb& x) { return x == presets.front(); });
    const double lipschitz = 2.0 * largest_eigenvalue(gram);
    if (identical || !(lipschitz > 0.0)) {
        fit.weights.assign(P, 1.0 / static_cast<double>(P));
        fit.residual = distance(combine(presets, fit.weights), target);
        return fit;
    }

    std::vector<double> w, step(P);
    if (P <= 12) {
        w = face_enumeration_start(presets, target);
    } else {
        std::size_t best = 0;
        for (std::size_t p = 1; p < P; ++p)
            if (distance(presets[p], target) < distance(presets[best], target)) best = p;
        w.assign(P, 0.0);
        w[best] = 1.0;
    }

    const double lr = 1.0 / lipschitz;
    constexpr std::size_t kMaxIterations = 10000;
    constexpr double kTolerance = 1e-9;
    for (fit.iterations = 0; fit.iterations < kMaxIterations;) {
        const Rgb current = combine(presets, w);
        const Rgb err{current[0] - target[0], current[1] - target[1], current[2] - target[2]};
        for (std::size_t p = 0; p < P; ++p) {
            const double grad = 2.0 * (presets[p][0] * err[0] + presets[p][1] * err[1] + presets[p][2] * err[2]);
            step[p] = w[p] - lr * grad;
        }
        std::vector<double> next = project_to_simplex(step);
        double change = 0.0;
        for (std::size_t p = 0; p < P; ++p) change = std::max(change, std::abs(next[p] - w[p]));
        w = std::move(next);
        ++fit.iterations;
        if (change < kTolerance) break;
    }
    fit.residual = distance(combine(presets, w), target);
    fit.weights = std::move(w);
    return fit;
}

namespace {

std::array<Rgb, kPresetCount> pixel_presets(const PresetStack& stack, std::size_t i) {
    std::array<Rgb, kPresetCount> px{};
    for (std::size_t p = 0; p < kPresetCount; ++p) {
        const auto v = stack.presets[p].pixel(i);
        px[p] = {v[0], v[1], v[2]};
    }
    return px;
}

void require_gt(const PresetStack& stack, const ImageRGB& gt, const char* op) {
    stack.validate();
    if (gt.height() != stack.height() || gt.width() != stack.width()) {
        throw std::invalid_argument(std::string(op) + ": ground truth size does not match the presets");
    }
}

}  // namespace

ImageRGB blend(const PresetStack& stack, const FusionWeights& weights) {
    if (weights.presets != kPresetCount || weights.height != stack.height() || weights.width != stack.width()) {
        throw std::invalid_argument("blend: weight map does not match the preset stack");
    }
    ImageRGB out(stack.height(), stack.width());
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
        const auto px = pixel_presets(stack, i);
        const Rgb v = combine(px, weights.row(i));
        for (int c = 0; c < 3; ++c) out.pixel(i)[c] = v[c];
    }
    return out;
}

BlendResult oracle_blend(const PresetStack& stack, const ImageRGB& gt) {
    require_gt(stack, gt, "oracle_blend");
    BlendResult r;
    r.weights = {stack.height(), stack.width(), kPresetCount, std::vector<double>(gt.pixel_count() * kPresetCount)};
    r.residuals.resize(gt.pixel_count());
    for (std::size_t i = 0; i < gt.pixel_count(); ++i) {
        const auto px = pixel_presets(stack, i);
        const auto t = gt.pixel(i);
        PixelFit fit = fit_pixel_weights(px, Rgb{t[0], t[1], t[2]});
        std::copy(fit.weights.begin(), fit.weights.end(), r.weights.row(i).begin());
        r.residuals[i] = fit.residual;
    }
    r.image = blend(stack, r.weights);
    return r;
}

double HullReport::fraction_above(double tol) const {
    if (distances.empty()) return 0.0;
    const auto n = std::count_if(distances.begin(), distances.end(), [&](double d) { return d > tol; });
    return static_cast<double>(n) / static_cast<double>(distances.size());
}

HullReport analyze_hull(const PresetStack& stack, const ImageRGB& gt, double tol) {
    require_gt(stack, gt, "analyze_hull");
    HullReport r;
    r.height = gt.height();
    r.width = gt.width();
    r.tolerance = tol;
    r.distances.resize(gt.pixel_count());
    double acc = 0.0;
    for (std::size_t i = 0; i < gt.pixel_count(); ++i) {
        const auto px = pixel_presets(stack, i);
        const auto t = gt.pixel(i);
        r.distances[i] = fit_pixel_weights(px, Rgb{t[0], t[1], t[2]}).residual;
        acc += r.distances[i];
        r.max_distance = std::max(r.max_distance, r.distances[i]);
    }
    r.mean_distance = r.distances.empty() ? 0.0 : acc / static_cast<double>(r.distances.size());
    r.out_of_hull_fraction = r.fraction_above(tol);
    return r;
}

void write_distance_map(const std::filesystem::path& path, const HullReport& report) {
    std::vector<double> scaled(report.distances.size());
    std::transform(report.distances.begin(), report.distances.end(), scaled.begin(),
                   [](double d) { return std::min(1.0, d * 10.0); });
    write_png_gray(path, report.height, report.width, scaled);
}

}  // namespace wbf
