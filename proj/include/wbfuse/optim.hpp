// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace wbf {

/// Moment buffers and hyperparameters of the bias-corrected Adam update.
template <class T>
struct AdamState {
    std::uint64_t step = 0;
    std::vector<T> m;
    std::vector<T> v;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    AdamState() = default;
    explicit AdamState(std::size_t n) : m(n, T(0)), v(n, T(0)) {}
};

/// One Adam update of `params` in place. Throws std::invalid_argument if the
/// parameter, gradient and moment lengths disagree.
template <class T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, double lr);

/// Cosine decay from lr_start to lr_end over total_steps.
struct CosineSchedule {
    double lr_start = 1e-3;
    double lr_end = 1e-5;
    std::size_t total_steps = 1;

    /// Steps past total_steps hold at lr_end.
    double lr(std::size_t step) const;
};

}  // namespace wbf
