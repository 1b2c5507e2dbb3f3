// SPDX-License-Identifier: Apache-2.0
// Brute-force reference implementations shared by the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <vector>

#include "wbfuse/linear_fusion.hpp"
#include "wbfuse/random.hpp"
#include "wbfuse/tape.hpp"
#include "wbfuse/tensor.hpp"

namespace wbf::testing {

template <class T>
Tensor<T> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(shape);
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

// Nested-loop zero-padded convolution, kernel [k, k, Cin, Cout].
inline std::vector<double> loop_conv2d(const std::vector<double>& x, std::size_t H, std::size_t W, std::size_t Cin,
                                       const std::vector<double>& k, std::size_t ks, std::size_t Cout,
                                       const std::vector<double>& b) {
    std::vector<double> y(H * W * Cout);
    const long r = static_cast<long>(ks / 2);
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
            for (std::size_t co = 0; co < Cout; ++co) {
                double acc = b[co];
                for (long dy = -r; dy <= r; ++dy)
                    for (long dx = -r; dx <= r; ++dx) {
                        const long yy = static_cast<long>(h) + dy, xx = static_cast<long>(w) + dx;
                        if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                        for (std::size_t ci = 0; ci < Cin; ++ci) {
                            const std::size_t ki = ((static_cast<std::size_t>(dy + r) * ks + static_cast<std::size_t>(dx + r)) * Cin + ci) * Cout + co;
                            acc += x[(static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)) * Cin + ci] * k[ki];
                        }
                    }
                y[(h * W + w) * Cout + co] = acc;
            }
    return y;
}

// Per-channel 3x3 loop, kernel [3, 3, C].
inline std::vector<double> loop_depthwise(const std::vector<double>& x, std::size_t H, std::size_t W, std::size_t C,
                                          const std::vector<double>& k, const std::vector<double>& b) {
    std::vector<double> y(H * W * C);
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
            for (std::size_t c = 0; c < C; ++c) {
                double acc = b[c];
                for (long dy = -1; dy <= 1; ++dy)
                    for (long dx = -1; dx <= 1; ++dx) {
                        const long yy = static_cast<long>(h) + dy, xx = static_cast<long>(w) + dx;
                        if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                        acc += x[(static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)) * C + c] *
                               k[(static_cast<std::size_t>(dy + 1) * 3 + static_cast<std::size_t>(dx + 1)) * C + c];
                    }
                y[(h * W + w) * C + c] = acc;
            }
    return y;
}

template <class T>
std::vector<double> as_double(const Tensor<T>& t) {
    return std::vector<double>(t.values().begin(), t.values().end());
}

/// Builds the op under test on a tape from leaf handles and returns its output.
template <class T>
using GraphBuilder = std::function<Var(Tape<T>&, const std::vector<Var>&)>;

struct GradCheck {
    double max_rel_error = 0.0;  // worst over inputs of |a - n|_2 / max(|a|_2, |n|_2)
    std::size_t inputs_checked = 0;
};

enum class Stencil { ThreePoint, FivePoint, SevenPoint };

/// Central finite differences of L = sum(out * R) for fixed random R,
/// evaluated in double from the op's output, against the tape gradient.
/// Inputs flagged false in `differentiable` are held constant. The wider
/// stencils cancel the h^2 (and h^4) terms, so a larger h can be used to
/// keep 32-bit rounding noise out of deep graphs. With `max_coords` set,
/// larger inputs are checked on that many coordinates drawn without replacement.
template <class T>
GradCheck gradient_check(const std::vector<Tensor<T>>& inputs, const GraphBuilder<T>& build, double h,
                         std::uint64_t seed, const std::vector<bool>& differentiable = {},
                         Stencil stencil = Stencil::ThreePoint, std::size_t max_coords = 0) {
    auto active = [&](std::size_t i) { return differentiable.empty() || differentiable[i]; };
    auto forward_value = [&](const std::vector<Tensor<T>>& xs) {
        Tape<T> tape;
        std::vector<Var> vars;
        for (const auto& x : xs) vars.push_back(tape.leaf(x, false));
        return tape.value(build(tape, vars));
    };
    const Tensor<T> out0 = forward_value(inputs);
    Rng rng(seed);
    const Tensor<T> R = random_tensor<T>(out0.shape(), rng);
    auto objective = [&](const std::vector<Tensor<T>>& xs) {
        const Tensor<T> y = forward_value(xs);
        double acc = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) acc += static_cast<double>(y[i]) * static_cast<double>(R[i]);
        return acc;
    };

    Tape<T> tape;
    std::vector<Var> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(tape.leaf(inputs[i], active(i)));
    const Var out = build(tape, vars);
    const Var loss = tape.sum(tape.mul(out, tape.leaf(R)));
    tape.backward(loss);

    GradCheck result;
    std::vector<Tensor<T>> xs = inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!active(i)) continue;
        const Tensor<T>& analytic = tape.grad(vars[i]);
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        std::vector<std::size_t> coords(inputs[i].size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (max_coords > 0 && coords.size() > max_coords) {
            Rng pick(seed * 1000003 + i);
            for (std::size_t k = 0; k < max_coords; ++k) std::swap(coords[k], coords[k + pick.index(coords.size() - k)]);
            coords.resize(max_coords);
        }
        for (std::size_t j : coords) {
            const T orig = xs[i][j];
            // Evaluate at the offsets actually representable in T.
            auto at = [&](double offset, double& actual) {
                xs[i][j] = static_cast<T>(orig + offset);
                actual = static_cast<double>(xs[i][j]) - static_cast<double>(orig);
                const double f = objective(xs);
                xs[i][j] = orig;
                return f;
            };
            double numeric;
            double up_h, down_h;
            const double up = at(h, up_h), down = at(-h, down_h);
            if (stencil == Stencil::ThreePoint) {
                numeric = (up - down) / (up_h - down_h);
            } else {
                // Richardson combinations of central differences at h, 2h and 3h.
                double up_2h, down_2h;
                const double up2 = at(2.0 * h, up_2h), down2 = at(-2.0 * h, down_2h);
                const double d1 = (up - down) / (up_h - down_h);
                const double d2 = (up2 - down2) / (up_2h - down_2h);
                if (stencil == Stencil::FivePoint) {
                    numeric = (4.0 * d1 - d2) / 3.0;
                } else {
                    double up_3h, down_3h;
                    const double up3 = at(3.0 * h, up_3h), down3 = at(-3.0 * h, down_3h);
                    const double d3 = (up3 - down3) / (up_3h - down_3h);
                    numeric = 1.5 * d1 - 0.6 * d2 + 0.1 * d3;
                }
            }
            const double a = static_cast<double>(analytic[j]);
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
        result.max_rel_error = std::max(result.max_rel_error, std::sqrt(diff2) / denom);
        ++result.inputs_checked;
    }
    return result;
}

/// Exhaustive search over a simplex grid with the given step.
inline double grid_hull_distance(std::span<const Rgb> presets, const Rgb& target, double step = 0.01) {
    const int n = static_cast<int>(std::lround(1.0 / step));
    const std::size_t P = presets.size();
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> counts(P, 0);
    std::function<void(std::size_t, int)> rec = [&](std::size_t p, int left) {
        if (p + 1 == P) {
            counts[p] = left;
            Rgb v{0.0, 0.0, 0.0};
            for (std::size_t q = 0; q < P; ++q)
                for (int c = 0; c < 3; ++c) v[c] += counts[q] * step * presets[q][c];
            const double d = std::sqrt((v[0] - target[0]) * (v[0] - target[0]) + (v[1] - target[1]) * (v[1] - target[1]) +
                                       (v[2] - target[2]) * (v[2] - target[2]));
            best = std::min(best, d);
            return;
        }
        for (int k = 0; k <= left; ++k) {
            counts[p] = k;
            rec(p + 1, left - k);
        }
    };
    rec(0, n);
    return best;
}

/// Uniform sample from the probability simplex.
inline std::vector<double> random_simplex_point(std::size_t P, Rng& rng) {
    std::vector<double> w(P);
    double s = 0.0;
    for (auto& v : w) {
        v = -std::log(1.0 - rng.uniform());
        s += v;
    }
    for (auto& v : w) v /= s;
    return w;
}

struct De2000Case {
    double L1, a1, b1, L2, a2, b2, expected;
};

// Published CIEDE2000 test pairs (Sharma, Wu and Dalal).
inline constexpr std::array<De2000Case, 34> kDe2000Cases = {{
    {50.0000, 2.6772, -79.7751, 50.0000, 0.0000, -82.7485, 2.0425},
    {50.0000, 3.1571, -77.2803, 50.0000, 0.0000, -82.7485, 2.8615},
    {50.0000, 2.8361, -74.0200, 50.0000, 0.0000, -82.7485, 3.4412},
    {50.0000, -1.3802, -84.2814, 50.0000, 0.0000, -82.7485, 1.0000},
    {50.0000, -1.1848, -84.8006, 50.0000, 0.0000, -82.7485, 1.0000},
    {50.0000, -0.9009, -85.5211, 50.0000, 0.0000, -82.7485, 1.0000},
    {50.0000, 0.0000, 0.0000, 50.0000, -1.0000, 2.0000, 2.3669},
    {50.0000, -1.0000, 2.0000, 50.0000, 0.0000, 0.0000, 2.3669},
    {50.0000, 2.4900, -0.0010, 50.0000, -2.4900, 0.0009, 7.1792},
    {50.0000, 2.4900, -0.0010, 50.0000, -2.4900, 0.0010, 7.1792},
    {50.0000, 2.4900, -0.0010, 50.0000, -2.4900, 0.0011, 7.2195},
    {50.0000, 2.4900, -0.0010, 50.0000, -2.4900, 0.0012, 7.2195},
    {50.0000, -0.0010, 2.4900, 50.0000, 0.0009, -2.4900, 4.8045},
    {50.0000, -0.0010, 2.4900, 50.0000, 0.0010, -2.4900, 4.8045},
    {50.0000, -0.0010, 2.4900, 50.0000, 0.0011, -2.4900, 4.7461},
    {50.0000, 2.5000, 0.0000, 50.0000, 0.0000, -2.5000, 4.3065},
    {50.0000, 2.5000, 0.0000, 73.0000, 25.0000, -18.0000, 27.1492},
    {50.0000, 2.5000, 0.0000, 61.0000, -5.0000, 29.0000, 22.8977},
    {50.0000, 2.5000, 0.0000, 56.0000, -27.0000, -3.0000, 31.9030},
    {50.0000, 2.5000, 0.0000, 58.0000, 24.0000, 15.0000, 19.4535},
    {50.0000, 2.5000, 0.0000, 50.0000, 3.1736, 0.5854, 1.0000},
    {50.0000, 2.5000, 0.0000, 50.0000, 3.2972, 0.0000, 1.0000},
    {50.0000, 2.5000, 0.0000, 50.0000, 1.8634, 0.5757, 1.0000},
    {50.0000, 2.5000, 0.0000, 50.0000, 3.2592, 0.3350, 1.0000},
    {60.2574, -34.0099, 36.2677, 60.4626, -34.1751, 39.4387, 1.2644},
    {63.0109, -31.0961, -5.8663, 62.8187, -29.7946, -4.0864, 1.2630},
    {61.2901, 3.7196, -5.3901, 61.4292, 2.2480, -4.9620, 1.8731},
    {35.0831, -44.1164, 3.7933, 35.0232, -40.0716, 1.5901, 1.8645},
    {22.7233, 20.0904, -46.6940, 23.0331, 14.9730, -42.5619, 2.0373},
    {36.4612, 47.8580, 18.3852, 36.2715, 50.5065, 21.2231, 1.4146},
    {90.8027, -2.0831, 1.4410, 91.1528, -1.6435, 0.0447, 1.4441},
    {90.9257, -0.5406, -0.9208, 88.6381, -0.8985, -0.7239, 1.5381},
    {6.7747, -0.2908, -2.4247, 5.8714, -0.0985, -2.2286, 0.6377},
    {2.0776, 0.0795, -1.1350, 0.9033, -0.0636, -0.5514, 0.9082},
}};

}  // namespace wbf::testing
