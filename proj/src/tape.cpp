// SPDX-License-Identifier: Apache-2.0
#include "wbfuse/tape.hpp"

#include <stdexcept>

#include "wbfuse/kernels.hpp"

namespace wbf {

template <class T>
Var Tape<T>::push(Tensor<T> value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Tensor<T>{}, requires_grad});
    return Var{nodes_.size() - 1};
}

template <class T>
Var Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
    return push(std::move(value), requires_grad);
}

template <class T>
Var Tape<T>::record(Tensor<T> value, std::initializer_list<Var> inputs, std::function<void(Tape&)> backward) {
    bool rg = false;
    for (Var in : inputs) rg = rg || needs(in);
    const Var out = push(std::move(value), rg);
    if (rg) ops_.push_back(Op{out.id, std::move(backward)});
    return out;
}

template <class T>
Tensor<T>& Tape<T>::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
}

template <class T>
const Tensor<T>& Tape<T>::grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.shape() != n.value.shape()) {
        throw std::logic_error("Tape::grad: node " + std::to_string(v.id) + " has no gradient");
    }
    return n.grad;
}

template <class T>
void Tape<T>::backward(Var loss) {
    const Tensor<T>& lv = nodes_.at(loss.id).value;
    if (lv.size() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_string(lv.shape()));
    }
    for (Node& n : nodes_) {
        if (n.requires_grad) n.grad = Tensor<T>(n.value.shape());
    }
    if (!nodes_[loss.id].requires_grad) return;
    grad_buffer(loss.id)[0] = T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        if (it->output > loss.id) continue;
        it->backward(*this);
    }
}

template <class T>
Var Tape<T>::conv2d(Var x, Var kernel, Var bias) {
    auto y = kernels::conv2d(value(x), value(kernel), value(bias));
    const std::size_t out = nodes_.size();
    return record(std::move(y), {x, kernel, bias}, [=](Tape& t) {
        kernels::conv2d_backward(t.value(x), t.value(kernel), t.nodes_[out].grad,
                                 t.needs(x) ? &t.grad_buffer(x.id) : nullptr,
                                 t.needs(kernel) ? &t.grad_buffer(kernel.id) : nullptr,
                                 t.needs(bias) ? &t.grad_buffer(bias.id) : nullptr);
    });
}

template <class T>
Var Tape<T>::depthwise_conv3x3(Var x, Var kernel, Var bias) {
    auto y = kernels::depthwise_conv3x3(value(x), value(kernel), value(bias));
    const std::size_t out = nodes_.size();
    return record(std::move(y), {x, kernel, bias}, [=](Tape& t) {
        kernels::depthwise_conv3x3_backward(t.value(x), t.value(kernel), t.nodes_[out].grad,
                                            t.needs(x) ? &t.grad_buffer(x.id) : nullptr,
                                            t.needs(kernel) ? &t.grad_buffer(kernel.id) : nullptr,
                                            t.needs(bias) ? &t.grad_buffer(bias.id) : nullptr);
    });
}

template <class T>
Var Tape<T>::layer_norm(Var x, Var gamma, Var beta) {
    auto y = kernels::layer_norm(value(x), value(gamma), value(beta));
    const std::size_t out = nodes_.size();
    return record(std::move(y), {x, gamma, beta}, [=](Tape& t) {
        kernels::layer_norm_backward(t.value(x), t.value(gamma), t.nodes_[out].grad,
                                     t.needs(x) ? &t.grad_buffer(x.id) : nullptr,
                                     t.needs(gamma) ? &t.grad_buffer(gamma.id) : nullptr,
                                     t.needs(beta) ? &t.grad_buffer(beta.id) : nullptr);
    });
}

template <class T>
Var Tape<T>::gelu(Var x) {
    auto y = kernels::gelu(value(x));
    const std::size_t out = nodes_.size();
    return record(std::move(y), {x}, [=](Tape& t) {
        kernels::gelu_backward(t.value(x), t.nodes_[out].grad, t.grad_buffer(x.id));
    });
}

template <class T>
Var Tape<T>::softmax(Var x, std::size_t axis) {
    auto y = kernels::softmax(value(x), axis);
    const std::size_t out = nodes_.size();
    return record(std::move(y), {x}, [=](Tape& t) {
        kernels::softmax_backward(t.nodes_[out].value, t.nodes_[out].grad, axis, t.grad_buffer(x.id));
    });
}

template <class T>
Var Tape<T>::normalize_spatial(Var x) {
    auto y = kernels::normalize_spatial(value(x));
    const std::size_t out = nodes_.size();
    return record(std::move(y), {x}, [=](Tape& t) {
        kernels::normalize_spatial_backward(t.value(x), t.nodes_[out].value, t.nodes_[out].grad,
                                            t.grad_buffer(x.id));
    });
}

template <class T>
Var Tape<T>::channel_gram(Var k, Var q) {
    auto y = kernels::channel_gram(value(k), value(q));
    const std::size_t out = nodes_.size();
    return record(std::move(y), {k, q}, [=](Tape& t) {
        kernels::channel_gram_backward(t.value(k), t.value(q), t.nodes_[out].grad,
                                       t.needs(k) ? &t.grad_buffer(k.id) : nullptr,
                                       t.needs(q) ? &t.grad_buffer(q.id) : nullptr);
    });
}

template <class T>
Var Tape<T>::mix_channels(Var v, Var a) {
    auto y = kernels::mix_channels(value(v), value(a));
    const std::size_t out = nodes_.size();
    return record(std::move(y), {v, a}, [=](Tape& t) {
        kernels::mix_channels_backward(t.value(v), t.value(a), t.nodes_[out].grad,
                                       t.needs(v) ? &t.grad_buffer(v.id) : nullptr,
                                       t.needs(a) ? &t.grad_buffer(a.id) : nullptr);
    });
}

template <class T>
Var Tape<T>::slice_channels(Var x, std::size_t begin, std::size_t count) {
    auto y = kernels::slice_channels(value(x), begin, count);
    const std::size_t out = nodes_.size();
    return record(std::move(y), {x}, [=](Tape& t) {
        const Tensor<T>& g = t.nodes_[out].grad;
        Tensor<T>& gx = t.grad_buffer(x.id);
        const std::size_t C = gx.dim(2);
        const std::size_t n = gx.dim(0) * gx.dim(1);
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t c = 0; c < count; ++c) gx[p * C + begin + c] += g[p * count + c];
    });
}

template <class T>
Var Tape<T>::concat_channels(std::span<const Var> parts) {
    std::vector<const Tensor<T>*> values;
    bool rg = false;
    for (Var p : parts) {
        values.push_back(&value(p));
        rg = rg || needs(p);
    }
    auto y = kernels::concat_channels<T>(values);
    const Var out = push(std::move(y), rg);
    if (rg) {
        std::vector<Var> inputs(parts.begin(), parts.end());
        ops_.push_back(Op{out.id, [inputs, out](Tape& t) {
                              const Tensor<T>& g = t.nodes_[out.id].grad;
                              const std::size_t C = g.dim(2);
                              const std::size_t n = g.dim(0) * g.dim(1);
                              std::size_t offset = 0;
                              for (Var in : inputs) {
                                  const std::size_t c = t.value(in).dim(2);
                                  if (t.needs(in)) {
                                      Tensor<T>& gi = t.grad_buffer(in.id);
                                      for (std::size_t p = 0; p < n; ++p)
                                          for (std::size_t k = 0; k < c; ++k) gi[p * c + k] += g[p * C + offset + k];
                                  }
                                  offset += c;
                              }
                          }});
    }
    return out;
}

namespace {

template <class T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                    shape_string(b.shape()));
    }
}

}  // namespace

template <class T>
Var Tape<T>::add(Var a, Var b) {
    require_same(value(a), value(b), "add");
    Tensor<T> y = value(a);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += value(b)[i];
    const std::size_t out = nodes_.size();
    return record(std::move(y), {a, b}, [=](Tape& t) {
        const Tensor<T>& g = t.nodes_[out].grad;
        for (Var in : {a, b}) {
            if (!t.needs(in)) continue;
            Tensor<T>& gi = t.grad_buffer(in.id);
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
    });
}

template <class T>
Var Tape<T>::sub(Var a, Var b) {
    require_same(value(a), value(b), "sub");
    Tensor<T> y = value(a);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= value(b)[i];
    const std::size_t out = nodes_.size();
    return record(std::move(y), {a, b}, [=](Tape& t) {
        const Tensor<T>& g = t.nodes_[out].grad;
        if (t.needs(a)) {
            Tensor<T>& ga = t.grad_buffer(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.needs(b)) {
            Tensor<T>& gb = t.grad_buffer(b.id);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

template <class T>
Var Tape<T>::mul(Var a, Var b) {
    require_same(value(a), value(b), "mul");
    Tensor<T> y = value(a);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= value(b)[i];
    const std::size_t out = nodes_.size();
    return record(std::move(y), {a, b}, [=](Tape& t) {
        const Tensor<T>& g = t.nodes_[out].grad;
        // Read both operands before writing: a and b may be the same node.
        if (t.needs(a)) {
            Tensor<T>& ga = t.grad_buffer(a.id);
            const Tensor<T>& vb = t.value(b);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
        }
        if (t.needs(b)) {
            Tensor<T>& gb = t.grad_buffer(b.id);
            const Tensor<T>& va = t.value(a);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
        }
    });
}

template <class T>
Var Tape<T>::scale(Var x, Var s) {
    if (value(s).size() != 1) {
        throw std::invalid_argument("scale: factor must hold one element, got " + shape_string(value(s).shape()));
    }
    const T factor = value(s)[0];
    Tensor<T> y = value(x);
    for (T& v : y.values()) v *= factor;
    const std::size_t out = nodes_.size();
    return record(std::move(y), {x, s}, [=](Tape& t) {
        const Tensor<T>& g = t.nodes_[out].grad;
        const Tensor<T>& xv = t.value(x);
        if (t.needs(s)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += static_cast<double>(g[i]) * xv[i];
            t.grad_buffer(s.id)[0] += static_cast<T>(acc);
        }
        if (t.needs(x)) {
            Tensor<T>& gx = t.grad_buffer(x.id);
            const T f = t.value(s)[0];
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * f;
        }
    });
}

template <class T>
Var Tape<T>::pick(Var x, std::size_t index) {
    if (index >= value(x).size()) {
        throw std::invalid_argument("pick: index " + std::to_string(index) + " out of range for shape " +
                                    shape_string(value(x).shape()));
    }
    const std::size_t out = nodes_.size();
    return record(Tensor<T>({1}, std::vector<T>{value(x)[index]}), {x},
                  [=](Tape& t) { t.grad_buffer(x.id)[index] += t.nodes_[out].grad[0]; });
}

template <class T>
Var Tape<T>::sum(Var x) {
    double acc = 0.0;
    for (T v : value(x).values()) acc += v;
    const std::size_t out = nodes_.size();
    return record(Tensor<T>({1}, std::vector<T>{static_cast<T>(acc)}), {x}, [=](Tape& t) {
        const T g = t.nodes_[out].grad[0];
        for (T& v : t.grad_buffer(x.id).values()) v += g;
    });
}

template <class T>
Var Tape<T>::mean(Var x) {
    const std::size_t n = value(x).size();
    double acc = 0.0;
    for (T v : value(x).values()) acc += v;
    const std::size_t out = nodes_.size();
    return record(Tensor<T>({1}, std::vector<T>{static_cast<T>(acc / static_cast<double>(n))}), {x},
                  [=](Tape& t) {
                      const T g = static_cast<T>(t.nodes_[out].grad[0] / static_cast<double>(n));
                      for (T& v : t.grad_buffer(x.id).values()) v += g;
                  });
}

template class Tape<float>;
template class Tape<double>;

}  // namespace wbf
