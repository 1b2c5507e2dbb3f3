// SPDX-License-Identifier: Apache-2.0
#include "wbfuse/kernels.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace wbf {

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace kernels {
namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

template <class T>
void require_feature_map(const Tensor<T>& x, const char* op) {
    require(x.rank() == 3, std::string(op) + ": input must be [H, W, C], got " + shape_string(x.shape()));
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                        shape_string(b.shape()));
}

template <class T>
Tensor<T>& ensure_like(Tensor<T>& g, const Shape& shape) {
    if (g.shape() != shape) g = Tensor<T>(shape);
    return g;
}

}  // namespace

namespace {

constexpr std::size_t kLanes = 8;

std::size_t round_up_lanes(std::size_t n) { return (n + kLanes - 1) / kLanes * kLanes; }

// Fixed-order lane-blocked dot product; `n` is a multiple of kLanes. The
// summation order is independent of the target's vector width.
template <class T>
T lane_dot(const T* a, const T* b, std::size_t n) {
    T lanes[kLanes] = {};
    for (std::size_t j = 0; j < n; j += kLanes)
        for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += a[j + l] * b[j + l];
    return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
}

// Four lane_dot calls sharing `a`, each with exactly lane_dot's order.
template <class T>
void lane_dot4(const T* a, const T* b, std::size_t stride, std::size_t n, T* out) {
    T lanes[4][kLanes] = {};
    for (std::size_t j = 0; j < n; j += kLanes)
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t l = 0; l < kLanes; ++l) lanes[r][l] += a[j + l] * b[r * stride + j + l];
    for (std::size_t r = 0; r < 4; ++r) {
        const T* s = lanes[r];
        out[r] = ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]));
    }
}

// dst[j] += s * src[j] for j < n, n a multiple of kLanes.
template <class T>
void lane_axpy(T* dst, T s, const T* src, std::size_t n) {
    for (std::size_t j = 0; j < n; j += kLanes)
        for (std::size_t l = 0; l < kLanes; ++l) dst[j + l] += s * src[j + l];
}

struct ConvGeometry {
    std::size_t H, W, cin, cout, ks, patch, padded;
    long r;
};

template <class T>
ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& k) {
    ConvGeometry g{};
    g.H = x.dim(0);
    g.W = x.dim(1);
    g.cin = x.dim(2);
    g.ks = k.dim(0);
    g.cout = k.dim(3);
    g.patch = g.ks * g.ks * g.cin;
    g.padded = round_up_lanes(g.patch);
    g.r = static_cast<long>(g.ks / 2);
    return g;
}

// Kernel as [Cout][padded patch], zero-filled past the patch length.
template <class T>
std::vector<T> transpose_kernel(const Tensor<T>& k, const ConvGeometry& g) {
    std::vector<T> kt(g.cout * g.padded, T(0));
    for (std::size_t j = 0; j < g.patch; ++j)
        for (std::size_t co = 0; co < g.cout; ++co) kt[co * g.padded + j] = k[j * g.cout + co];
    return kt;
}

// Zero-padded receptive field of output pixel (h, w), laid out as [K, K, Cin].
template <class T>
void gather_patch(const Tensor<T>& x, const ConvGeometry& g, std::size_t h, std::size_t w, T* patch) {
    // Interior patches overwrite every tap; only the lane padding stays zero.
    const auto r = static_cast<std::size_t>(g.r);
    const bool interior = h >= r && h + r < g.H && w >= r && w + r < g.W;
    std::fill(interior ? patch + g.patch : patch, patch + g.padded, T(0));
    for (std::size_t dy = 0; dy < g.ks; ++dy) {
        const long sh = static_cast<long>(h) + static_cast<long>(dy) - g.r;
        if (sh < 0 || sh >= static_cast<long>(g.H)) continue;
        for (std::size_t dx = 0; dx < g.ks; ++dx) {
            const long sw = static_cast<long>(w) + static_cast<long>(dx) - g.r;
            if (sw < 0 || sw >= static_cast<long>(g.W)) continue;
            const T* src = x.data() + (static_cast<std::size_t>(sh) * g.W + static_cast<std::size_t>(sw)) * g.cin;
            std::copy_n(src, g.cin, patch + (dy * g.ks + dx) * g.cin);
        }
    }
}

template <class T>
void scatter_patch(Tensor<T>& gx, const ConvGeometry& g, std::size_t h, std::size_t w, const T* patch) {
    for (std::size_t dy = 0; dy < g.ks; ++dy) {
        const long sh = static_cast<long>(h) + static_cast<long>(dy) - g.r;
        if (sh < 0 || sh >= static_cast<long>(g.H)) continue;
        for (std::size_t dx = 0; dx < g.ks; ++dx) {
            const long sw = static_cast<long>(w) + static_cast<long>(dx) - g.r;
            if (sw < 0 || sw >= static_cast<long>(g.W)) continue;
            T* dst = gx.data() + (static_cast<std::size_t>(sh) * g.W + static_cast<std::size_t>(sw)) * g.cin;
            const T* src = patch + (dy * g.ks + dx) * g.cin;
            for (std::size_t ci = 0; ci < g.cin; ++ci) dst[ci] += src[ci];
        }
    }
}

}  // namespace

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b) {
    require_feature_map(x, "conv2d");
    require(k.rank() == 4, "conv2d: kernel must be [K, K, Cin, Cout], got " + shape_string(k.shape()));
    require(k.dim(0) == k.dim(1) && k.dim(0) % 2 == 1, "conv2d: kernel size must be odd and square, got " +
                                                           shape_string(k.shape()));
    require(k.dim(2) == x.dim(2), "conv2d: kernel input channels (dim 2) = " + std::to_string(k.dim(2)) +
                                      " but input has " + std::to_string(x.dim(2)) + " channels");
    require(b.rank() == 1 && b.dim(0) == k.dim(3), "conv2d: bias must be [" + std::to_string(k.dim(3)) +
                                                       "], got " + shape_string(b.shape()));
    const ConvGeometry g = conv_geometry(x, k);
    Tensor<T> y({g.H, g.W, g.cout});
    std::vector<T> patch(g.padded);
    const std::vector<T> kt = transpose_kernel(k, g);
    for (std::size_t h = 0; h < g.H; ++h) {
        for (std::size_t w = 0; w < g.W; ++w) {
            gather_patch(x, g, h, w, patch.data());
            T* out = y.data() + (h * g.W + w) * g.cout;
            std::size_t co = 0;
            for (; co + 4 <= g.cout; co += 4) {
                T dots[4];
                lane_dot4(patch.data(), kt.data() + co * g.padded, g.padded, g.padded, dots);
                for (std::size_t r = 0; r < 4; ++r) out[co + r] = b[co + r] + dots[r];
            }
            for (; co < g.cout; ++co)
                out[co] = b[co] + lane_dot(patch.data(), kt.data() + co * g.padded, g.padded);
        }
    }
    return y;
}

template <class T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* gk,
                     Tensor<T>* gb) {
    const ConvGeometry g = conv_geometry(x, k);
    const std::vector<T> kt = transpose_kernel(k, g);
    std::vector<T> patch(g.padded), gpatch(g.padded);
    std::vector<T> gkt(gk ? g.cout * g.padded : 0, T(0));
    if (gx) ensure_like(*gx, x.shape());
    if (gb) ensure_like(*gb, Shape{g.cout});

    for (std::size_t h = 0; h < g.H; ++h) {
        for (std::size_t w = 0; w < g.W; ++w) {
            const T* go = gy.data() + (h * g.W + w) * g.cout;
            if (gb) {
                for (std::size_t co = 0; co < g.cout; ++co) (*gb)[co] += go[co];
            }
            if (gk) {
                gather_patch(x, g, h, w, patch.data());
                for (std::size_t co = 0; co < g.cout; ++co)
                    lane_axpy(gkt.data() + co * g.padded, go[co], patch.data(), g.padded);
            }
            if (gx) {
                std::fill(gpatch.begin(), gpatch.end(), T(0));
                for (std::size_t co = 0; co < g.cout; ++co)
                    lane_axpy(gpatch.data(), go[co], kt.data() + co * g.padded, g.padded);
                scatter_patch(*gx, g, h, w, gpatch.data());
            }
        }
    }
    if (gk) {
        ensure_like(*gk, k.shape());
        for (std::size_t j = 0; j < g.patch; ++j)
            for (std::size_t co = 0; co < g.cout; ++co) (*gk)[j * g.cout + co] += gkt[co * g.padded + j];
    }
}

template <class T>
Tensor<T> depthwise_conv3x3(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b) {
    require_feature_map(x, "depthwise_conv3x3");
    const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
    require(k.shape() == Shape{3, 3, C}, "depthwise_conv3x3: kernel must be [3, 3, " + std::to_string(C) +
                                             "], got " + shape_string(k.shape()));
    require(b.shape() == Shape{C}, "depthwise_conv3x3: bias must be [" + std::to_string(C) + "], got " +
                                       shape_string(b.shape()));
    Tensor<T> y({H, W, C});
    for (std::size_t p = 0; p < H * W; ++p) std::copy_n(b.data(), C, y.data() + p * C);
    // Taps outermost so each inner sweep runs over a contiguous row segment.
    for (std::size_t h = 0; h < H; ++h) {
        T* out_row = y.data() + h * W * C;
        for (std::size_t dy = 0; dy < 3; ++dy) {
            const long sh = static_cast<long>(h + dy) - 1;
            if (sh < 0 || sh >= static_cast<long>(H)) continue;
            const T* in_row = x.data() + static_cast<std::size_t>(sh) * W * C;
            for (std::size_t dx = 0; dx < 3; ++dx) {
                const T* kp = k.data() + (dy * 3 + dx) * C;
                const std::size_t w0 = dx == 0 ? 1 : 0;
                const std::size_t w1 = dx == 2 ? W - 1 : W;
                for (std::size_t w = w0; w < w1; ++w) {
                    T* out = out_row + w * C;
                    const T* in = in_row + (w + dx - 1) * C;
                    for (std::size_t c = 0; c < C; ++c) out[c] += in[c] * kp[c];
                }
            }
        }
    }
    return y;
}

template <class T>
void depthwise_conv3x3_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& gy, Tensor<T>* gx,
                                Tensor<T>* gk, Tensor<T>* gb) {
    const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
    if (gx) ensure_like(*gx, x.shape());
    if (gk) ensure_like(*gk, k.shape());
    if (gb) {
        ensure_like(*gb, Shape{C});
        for (std::size_t p = 0; p < H * W; ++p)
            for (std::size_t c = 0; c < C; ++c) (*gb)[c] += gy[p * C + c];
    }
    for (std::size_t h = 0; h < H; ++h) {
        const T* g_row = gy.data() + h * W * C;
        for (std::size_t dy = 0; dy < 3; ++dy) {
            const long sh = static_cast<long>(h + dy) - 1;
            if (sh < 0 || sh >= static_cast<long>(H)) continue;
            const std::size_t src_row = static_cast<std::size_t>(sh) * W * C;
            for (std::size_t dx = 0; dx < 3; ++dx) {
                const std::size_t tap = (dy * 3 + dx) * C;
                const std::size_t w0 = dx == 0 ? 1 : 0;
                const std::size_t w1 = dx == 2 ? W - 1 : W;
                for (std::size_t w = w0; w < w1; ++w) {
                    const T* g = g_row + w * C;
                    const std::size_t src = src_row + (w + dx - 1) * C;
                    if (gk) {
                        T* gkp = gk->data() + tap;
                        const T* xp = x.data() + src;
                        for (std::size_t c = 0; c < C; ++c) gkp[c] += xp[c] * g[c];
                    }
                    if (gx) {
                        T* gxp = gx->data() + src;
                        const T* kp = k.data() + tap;
                        for (std::size_t c = 0; c < C; ++c) gxp[c] += kp[c] * g[c];
                    }
                }
            }
        }
    }
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
    require_feature_map(x, "layer_norm");
    const std::size_t C = x.dim(2);
    require(gamma.shape() == Shape{C} && beta.shape() == Shape{C},
            "layer_norm: affine parameters must be [" + std::to_string(C) + "]");
    const std::size_t n = x.dim(0) * x.dim(1);
    Tensor<T> y(x.shape());
    for (std::size_t p = 0; p < n; ++p) {
        const T* xp = x.data() + p * C;
        T* yp = y.data() + p * C;
        double mean = 0.0;
        for (std::size_t c = 0; c < C; ++c) mean += xp[c];
        mean /= static_cast<double>(C);
        double var = 0.0;
        for (std::size_t c = 0; c < C; ++c) var += (xp[c] - mean) * (xp[c] - mean);
        var /= static_cast<double>(C);
        const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
        for (std::size_t c = 0; c < C; ++c)
            yp[c] = static_cast<T>((xp[c] - mean) * rstd * gamma[c] + beta[c]);
    }
    return y;
}

template <class T>
void layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& gy, Tensor<T>* gx,
                         Tensor<T>* ggamma, Tensor<T>* gbeta) {
    const std::size_t C = x.dim(2);
    const std::size_t n = x.dim(0) * x.dim(1);
    if (gx) ensure_like(*gx, x.shape());
    if (ggamma) ensure_like(*ggamma, gamma.shape());
    if (gbeta) ensure_like(*gbeta, gamma.shape());
    std::vector<double> xhat(C), dxhat(C);
    for (std::size_t p = 0; p < n; ++p) {
        const T* xp = x.data() + p * C;
        const T* g = gy.data() + p * C;
        double mean = 0.0;
        for (std::size_t c = 0; c < C; ++c) mean += xp[c];
        mean /= static_cast<double>(C);
        double var = 0.0;
        for (std::size_t c = 0; c < C; ++c) var += (xp[c] - mean) * (xp[c] - mean);
        var /= static_cast<double>(C);
        const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
        double mean_d = 0.0, mean_dx = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            xhat[c] = (xp[c] - mean) * rstd;
            dxhat[c] = static_cast<double>(g[c]) * gamma[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xhat[c];
            if (ggamma) (*ggamma)[c] += static_cast<T>(g[c] * xhat[c]);
            if (gbeta) (*gbeta)[c] += g[c];
        }
        if (!gx) continue;
        mean_d /= static_cast<double>(C);
        mean_dx /= static_cast<double>(C);
        T* gxp = gx->data() + p * C;
        for (std::size_t c = 0; c < C; ++c)
            gxp[c] += static_cast<T>(rstd * (dxhat[c] - mean_d - xhat[c] * mean_dx));
    }
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    const T half_sqrt2 = static_cast<T>(0.5 * std::numbers::sqrt2);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T v = x[i];
        y[i] = T(0.5) * v * (T(1) + std::erf(v * half_sqrt2));
    }
    return y;
}

template <class T>
void gelu_backward(const Tensor<T>& x, const Tensor<T>& gy, Tensor<T>& gx) {
    ensure_like(gx, x.shape());
    const T inv_sqrt_2pi = static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
    const T half_sqrt2 = static_cast<T>(0.5 * std::numbers::sqrt2);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T v = x[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * half_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        gx[i] += gy[i] * (cdf + v * pdf);
    }
}

namespace {

struct AxisLayout {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
        throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " out of range for shape " +
                                    shape_string(shape));
    }
    AxisLayout l;
    for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
    l.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
    return l;
}

}  // namespace

template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    const AxisLayout l = axis_layout(x.shape(), axis);
    Tensor<T> y(x.shape());
    for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t in = 0; in < l.inner; ++in) {
            const std::size_t base = o * l.extent * l.inner + in;
            T peak = x[base];
            for (std::size_t e = 1; e < l.extent; ++e) peak = std::max(peak, x[base + e * l.inner]);
            double total = 0.0;
            for (std::size_t e = 0; e < l.extent; ++e) {
                const double v = std::exp(static_cast<double>(x[base + e * l.inner] - peak));
                y[base + e * l.inner] = static_cast<T>(v);
                total += v;
            }
            for (std::size_t e = 0; e < l.extent; ++e)
                y[base + e * l.inner] = static_cast<T>(y[base + e * l.inner] / total);
        }
    }
    return y;
}

template <class T>
void softmax_backward(const Tensor<T>& y, const Tensor<T>& gy, std::size_t axis, Tensor<T>& gx) {
    const AxisLayout l = axis_layout(y.shape(), axis);
    ensure_like(gx, y.shape());
    for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t in = 0; in < l.inner; ++in) {
            const std::size_t base = o * l.extent * l.inner + in;
            double dot = 0.0;
            for (std::size_t e = 0; e < l.extent; ++e)
                dot += static_cast<double>(gy[base + e * l.inner]) * y[base + e * l.inner];
            for (std::size_t e = 0; e < l.extent; ++e) {
                const std::size_t i = base + e * l.inner;
                gx[i] += static_cast<T>(y[i] * (gy[i] - dot));
            }
        }
    }
}

namespace {

template <class T>
std::vector<double> spatial_norms(const Tensor<T>& x) {
    const std::size_t C = x.dim(2);
    const std::size_t n = x.dim(0) * x.dim(1);
    std::vector<double> norms(C, 0.0);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t c = 0; c < C; ++c) {
            const double v = x[p * C + c];
            norms[c] += v * v;
        }
    for (double& v : norms) v = std::max(std::sqrt(v), kNormalizeEps);
    return norms;
}

}  // namespace

template <class T>
Tensor<T> normalize_spatial(const Tensor<T>& x) {
    require_feature_map(x, "normalize_spatial");
    const std::size_t C = x.dim(2);
    const std::size_t n = x.dim(0) * x.dim(1);
    const std::vector<double> norms = spatial_norms(x);
    Tensor<T> y(x.shape());
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t c = 0; c < C; ++c) y[p * C + c] = static_cast<T>(x[p * C + c] / norms[c]);
    return y;
}

template <class T>
void normalize_spatial_backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& gy, Tensor<T>& gx) {
    const std::size_t C = x.dim(2);
    const std::size_t n = x.dim(0) * x.dim(1);
    ensure_like(gx, x.shape());
    const std::vector<double> norms = spatial_norms(x);
    std::vector<double> dots(C, 0.0);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t c = 0; c < C; ++c) dots[c] += static_cast<double>(gy[p * C + c]) * y[p * C + c];
    for (std::size_t c = 0; c < C; ++c) {
        // Below the clamp the norm is a constant, so only the direct term remains.
        if (norms[c] <= kNormalizeEps) dots[c] = 0.0;
    }
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t i = p * C + c;
            gx[i] += static_cast<T>((gy[i] - y[i] * dots[c]) / norms[c]);
        }
}

template <class T>
Tensor<T> channel_gram(const Tensor<T>& k, const Tensor<T>& q) {
    require_feature_map(k, "channel_gram");
    require_same_shape(k, q, "channel_gram");
    const std::size_t c = k.dim(2);
    const std::size_t n = k.dim(0) * k.dim(1);
    std::vector<double> acc(c * c, 0.0);
    for (std::size_t p = 0; p < n; ++p) {
        const T* kp = k.data() + p * c;
        const T* qp = q.data() + p * c;
        for (std::size_t i = 0; i < c; ++i) {
            const double kv = kp[i];
            for (std::size_t j = 0; j < c; ++j) acc[i * c + j] += kv * qp[j];
        }
    }
    return Tensor<T>({c, c}, std::vector<T>(acc.begin(), acc.end()));
}

template <class T>
void channel_gram_backward(const Tensor<T>& k, const Tensor<T>& q, const Tensor<T>& gs, Tensor<T>* gk, Tensor<T>* gq) {
    const std::size_t c = k.dim(2);
    const std::size_t n = k.dim(0) * k.dim(1);
    if (gk) ensure_like(*gk, k.shape());
    if (gq) ensure_like(*gq, q.shape());
    for (std::size_t p = 0; p < n; ++p) {
        const T* kp = k.data() + p * c;
        const T* qp = q.data() + p * c;
        for (std::size_t i = 0; i < c; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                const T g = gs[i * c + j];
                if (gk) (*gk)[p * c + i] += g * qp[j];
                if (gq) (*gq)[p * c + j] += g * kp[i];
            }
        }
    }
}

template <class T>
Tensor<T> mix_channels(const Tensor<T>& v, const Tensor<T>& a) {
    require_feature_map(v, "mix_channels");
    const std::size_t c = v.dim(2);
    require(a.shape() == Shape{c, c}, "mix_channels: mixing matrix must be [" + std::to_string(c) + ", " +
                                          std::to_string(c) + "], got " + shape_string(a.shape()));
    const std::size_t n = v.dim(0) * v.dim(1);
    Tensor<T> y(v.shape());
    for (std::size_t p = 0; p < n; ++p) {
        const T* vp = v.data() + p * c;
        T* yp = y.data() + p * c;
        for (std::size_t i = 0; i < c; ++i) {
            T acc = 0;
            for (std::size_t j = 0; j < c; ++j) acc += a[i * c + j] * vp[j];
            yp[i] = acc;
        }
    }
    return y;
}

template <class T>
void mix_channels_backward(const Tensor<T>& v, const Tensor<T>& a, const Tensor<T>& gy, Tensor<T>* gv, Tensor<T>* ga) {
    const std::size_t c = v.dim(2);
    const std::size_t n = v.dim(0) * v.dim(1);
    if (gv) ensure_like(*gv, v.shape());
    std::vector<double> acc(c * c, 0.0);
    for (std::size_t p = 0; p < n; ++p) {
        const T* vp = v.data() + p * c;
        const T* g = gy.data() + p * c;
        for (std::size_t i = 0; i < c; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                if (gv) (*gv)[p * c + j] += a[i * c + j] * g[i];
                acc[i * c + j] += static_cast<double>(g[i]) * vp[j];
            }
        }
    }
    if (ga) {
        ensure_like(*ga, a.shape());
        for (std::size_t i = 0; i < c * c; ++i) (*ga)[i] += static_cast<T>(acc[i]);
    }
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t count) {
    require_feature_map(x, "slice_channels");
    const std::size_t C = x.dim(2);
    require(begin + count <= C && count > 0, "slice_channels: range [" + std::to_string(begin) + ", " +
                                                 std::to_string(begin + count) + ") exceeds " +
                                                 std::to_string(C) + " channels");
    const std::size_t n = x.dim(0) * x.dim(1);
    Tensor<T> y({x.dim(0), x.dim(1), count});
    for (std::size_t p = 0; p < n; ++p)
        std::copy_n(x.data() + p * C + begin, count, y.data() + p * count);
    return y;
}

template <class T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts) {
    require(!parts.empty(), "concat_channels: no inputs");
    const std::size_t H = parts.front()->dim(0), W = parts.front()->dim(1);
    std::size_t C = 0;
    for (const Tensor<T>* t : parts) {
        require_feature_map(*t, "concat_channels");
        require(t->dim(0) == H && t->dim(1) == W, "concat_channels: spatial size mismatch " +
                                                      shape_string(t->shape()) + " vs " +
                                                      shape_string(parts.front()->shape()));
        C += t->dim(2);
    }
    Tensor<T> y({H, W, C});
    for (std::size_t p = 0; p < H * W; ++p) {
        T* out = y.data() + p * C;
        for (const Tensor<T>* t : parts) {
            const std::size_t c = t->dim(2);
            out = std::copy_n(t->data() + p * c, c, out);
        }
    }
    return y;
}

#define WBF_INSTANTIATE_KERNELS(T)                                                                               \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                             \
    template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*,  \
                                  Tensor<T>*);                                                                   \
    template Tensor<T> depthwise_conv3x3(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                  \
    template void depthwise_conv3x3_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*,   \
                                             Tensor<T>*, Tensor<T>*);                                            \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                         \
    template void layer_norm_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*,          \
                                      Tensor<T>*, Tensor<T>*);                                                   \
    template Tensor<T> gelu(const Tensor<T>&);                                                                   \
    template void gelu_backward(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);                                 \
    template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                                   \
    template void softmax_backward(const Tensor<T>&, const Tensor<T>&, std::size_t, Tensor<T>&);                 \
    template Tensor<T> normalize_spatial(const Tensor<T>&);                                                      \
    template void normalize_spatial_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&);  \
    template Tensor<T> channel_gram(const Tensor<T>&, const Tensor<T>&);                                         \
    template void channel_gram_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*,        \
                                        Tensor<T>*);                                                             \
    template Tensor<T> mix_channels(const Tensor<T>&, const Tensor<T>&);                                         \
    template void mix_channels_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*,        \
                                        Tensor<T>*);                                                             \
    template Tensor<T> slice_channels(const Tensor<T>&, std::size_t, std::size_t);                               \
    template Tensor<T> concat_channels(std::span<const Tensor<T>* const>);

WBF_INSTANTIATE_KERNELS(float)
WBF_INSTANTIATE_KERNELS(double)

#undef WBF_INSTANTIATE_KERNELS

}  // namespace kernels
}  // namespace wbf
