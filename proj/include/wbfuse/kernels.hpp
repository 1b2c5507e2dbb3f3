// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "wbfuse/tensor.hpp"

// Forward and backward kernels shared by the autodiff tape and the
// tape-free inference path. Backward functions accumulate into the
// gradient buffers they are given; a null pointer skips that gradient.
namespace wbf::kernels {

inline constexpr double kLayerNormEps = 1e-6;
inline constexpr double kNormalizeEps = 1e-12;

/// Zero-padded "same" convolution. x: [H,W,Cin], k: [K,K,Cin,Cout], b: [Cout].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b);
template <class T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* gk,
                     Tensor<T>* gb);

/// Per-channel 3x3 convolution. x: [H,W,C], k: [3,3,C], b: [C].
template <class T>
Tensor<T> depthwise_conv3x3(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b);
template <class T>
void depthwise_conv3x3_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& gy, Tensor<T>* gx,
                                Tensor<T>* gk, Tensor<T>* gb);

/// Normalizes each pixel over its channels (population variance), then
/// applies gamma/beta.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta);
template <class T>
void layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& gy, Tensor<T>* gx,
                         Tensor<T>* ggamma, Tensor<T>* gbeta);

/// Exact (erf) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x);
template <class T>
void gelu_backward(const Tensor<T>& x, const Tensor<T>& gy, Tensor<T>& gx);

/// Max-subtracted softmax along `axis`.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
template <class T>
void softmax_backward(const Tensor<T>& y, const Tensor<T>& gy, std::size_t axis, Tensor<T>& gx);

/// Divides each channel of an [H,W,C] map by its L2 norm over all pixels.
template <class T>
Tensor<T> normalize_spatial(const Tensor<T>& x);
template <class T>
void normalize_spatial_backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& gy, Tensor<T>& gx);

/// Channel Gram matrix of two [H,W,c] maps: S[i][j] = sum_p k[p,i] * q[p,j].
template <class T>
Tensor<T> channel_gram(const Tensor<T>& k, const Tensor<T>& q);
template <class T>
void channel_gram_backward(const Tensor<T>& k, const Tensor<T>& q, const Tensor<T>& gs, Tensor<T>* gk, Tensor<T>* gq);

/// Applies a [c,c] channel-mixing matrix to every pixel: y[p,i] = sum_j a[i][j] * v[p,j].
template <class T>
Tensor<T> mix_channels(const Tensor<T>& v, const Tensor<T>& a);
template <class T>
void mix_channels_backward(const Tensor<T>& v, const Tensor<T>& a, const Tensor<T>& gy, Tensor<T>* gv, Tensor<T>* ga);

template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t count);
template <class T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts);

}  // namespace wbf::kernels
