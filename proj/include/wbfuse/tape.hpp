// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "wbfuse/tensor.hpp"

namespace wbf {

/// Handle to a value recorded on a Tape.
struct Var {
    static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
    std::size_t id = kNone;

    bool valid() const noexcept { return id != kNone; }
    bool operator==(const Var&) const = default;
};

/// Reverse-mode autodiff tape. Every operation appends its output node and a
/// backward rule; since outputs are appended after their inputs, replaying the
/// rules in reverse is a valid topological traversal.
template <class T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) noexcept = default;
    Tape& operator=(Tape&&) noexcept = default;

    Var leaf(Tensor<T> value, bool requires_grad = false);

    const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
    /// Gradient of the last backward() target; zeros if the node was unreachable.
    const Tensor<T>& grad(Var v) const;
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

    std::size_t node_count() const noexcept { return nodes_.size(); }
    std::size_t op_count() const noexcept { return ops_.size(); }

    Var conv2d(Var x, Var kernel, Var bias);
    Var depthwise_conv3x3(Var x, Var kernel, Var bias);
    Var layer_norm(Var x, Var gamma, Var beta);
    Var gelu(Var x);
    Var softmax(Var x, std::size_t axis);
    Var normalize_spatial(Var x);
    Var channel_gram(Var k, Var q);
    Var mix_channels(Var v, Var a);
    Var slice_channels(Var x, std::size_t begin, std::size_t count);
    Var concat_channels(std::span<const Var> parts);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    /// Multiplies every element of x by the single element of `s` (shape [1]).
    Var scale(Var x, Var s);
    /// Element `index` of x as a [1] tensor.
    Var pick(Var x, std::size_t index);
    Var sum(Var x);
    Var mean(Var x);

    /// Fills grad() for every requires_grad node reachable from `loss`.
    void backward(Var loss);

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
    };
    struct Op {
        std::size_t output;
        std::function<void(Tape&)> backward;
    };

    Var push(Tensor<T> value, bool requires_grad);
    Var record(Tensor<T> value, std::initializer_list<Var> inputs, std::function<void(Tape&)> backward);
    Tensor<T>& grad_buffer(std::size_t id);
    bool needs(Var v) const { return nodes_[v.id].requires_grad; }

    std::vector<Node> nodes_;
    std::vector<Op> ops_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace wbf
