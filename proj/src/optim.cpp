// SPDX-License-Identifier: Apache-2.0
#include "wbfuse/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace wbf {

template <class T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, double lr) {
    const std::size_t n = params.size();
    if (grads.size() != n) {
        throw std::invalid_argument("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                                    std::to_string(n) + " parameters");
    }
    if (state.m.empty() && state.v.empty() && state.step == 0) {
        state.m.assign(n, T(0));
        state.v.assign(n, T(0));
    }
    if (state.m.size() != n || state.v.size() != n) {
        throw std::invalid_argument("adam_step: moment buffers hold " + std::to_string(state.m.size()) +
                                    " entries for " + std::to_string(n) + " parameters");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < n; ++i) {
        const double g = grads[i];
        const double m = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        const double v = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        state.m[i] = static_cast<T>(m);
        state.v[i] = static_cast<T>(v);
        const double mhat = m / c1;
        const double vhat = v / c2;
        params[i] = static_cast<T>(params[i] - lr * mhat / (std::sqrt(vhat) + state.epsilon));
    }
}

double CosineSchedule::lr(std::size_t step) const {
    if (total_steps == 0) throw std::invalid_argument("CosineSchedule: total_steps must be positive");
    const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(std::numbers::pi * progress));
}

template void adam_step(std::span<float>, std::span<const float>, AdamState<float>&, double);
template void adam_step(std::span<double>, std::span<const double>, AdamState<double>&, double);

}  // namespace wbf
