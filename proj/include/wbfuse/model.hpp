// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wbfuse/image.hpp"
#include "wbfuse/tape.hpp"
#include "wbfuse/tensor.hpp"

namespace wbf {

struct ModelConfig {
    std::uint32_t preset_count = 5;
    std::uint32_t feature_channels = 15;
    std::uint32_t attention_heads = 3;
    float ffn_expansion = 2.0f;

    std::size_t head_channels() const { return feature_channels / attention_heads; }
    std::size_t ffn_hidden() const { return static_cast<std::size_t>(feature_channels * ffn_expansion); }

    /// Throws std::invalid_argument when the configuration is unusable.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

/// Presets fed to a model with `preset_count` inputs, in canonical order.
/// 5 uses all presets, 3 uses daylight/shade/tungsten, 1 uses daylight; other
/// counts extend the daylight, shade, tungsten, fluorescent, cloudy priority.
std::vector<Preset> input_presets(std::size_t preset_count);

namespace param {
enum Index : std::size_t {
    ConvInW, ConvInB,
    Norm1G, Norm1B,
    QkvW, QkvB,
    QkvDwW, QkvDwB,
    Temperature,
    ProjW, ProjB,
    Norm2G, Norm2B,
    FfnInW, FfnInB,
    FfnDwW, FfnDwB,
    FfnOutW, FfnOutB,
    ConvOutW, ConvOutB,
    kCount
};
}  // namespace param

/// Trainable weights, held as named tensors in a fixed order:
///   conv_in.weight [3,3,3P,C]  conv_in.bias [C]
///   norm1.gamma [C]  norm1.beta [C]
///   attn.qkv.weight [1,1,C,3C]  attn.qkv.bias [3C]
///   attn.qkv_dw.weight [3,3,3C]  attn.qkv_dw.bias [3C]
///   attn.temperature [heads]
///   attn.proj.weight [1,1,C,C]  attn.proj.bias [C]
///   norm2.gamma [C]  norm2.beta [C]
///   ffn.in.weight [1,1,C,2F]  ffn.in.bias [2F]
///   ffn.dw.weight [3,3,2F]  ffn.dw.bias [2F]
///   ffn.out.weight [1,1,F,C]  ffn.out.bias [C]
///   conv_out.weight [3,3,C,3]  conv_out.bias [3]
/// where F = floor(C * ffn_expansion).
template <class T>
struct ModelParams {
    using Index = param::Index;
    static constexpr std::size_t kCount = param::kCount;

    std::vector<Tensor<T>> tensors;

    static std::vector<std::string> names();
    static std::vector<Shape> shapes(const ModelConfig& config);

    /// Fan-in uniform kernels (bound 1/sqrt(fan_in)), zero biases, unit
    /// layer-norm gains, unit temperatures.
    static ModelParams init(const ModelConfig& config, std::uint64_t seed);
    static ModelParams zeros(const ModelConfig& config);

    const Tensor<T>& operator[](Index i) const { return tensors[i]; }
    Tensor<T>& operator[](Index i) { return tensors[i]; }

    std::size_t count() const;
    std::vector<T> flatten() const;
    void unflatten(std::span<const T> flat);
    /// Throws std::invalid_argument if any tensor shape disagrees with `config`.
    void check(const ModelConfig& config) const;

    template <class U>
    ModelParams<U> cast() const {
        ModelParams<U> out;
        for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
        return out;
    }
};

/// Exact number of trainable scalars for `config`.
std::size_t param_count(const ModelConfig& config);

/// Model parameters bound to tape leaves.
struct ParamVars {
    std::vector<Var> vars;
    Var operator[](std::size_t i) const { return vars[i]; }
};

template <class T>
ParamVars bind_params(Tape<T>& tape, const ModelParams<T>& params, bool requires_grad = true);

/// Gradients of bound parameters, flattened in parameter order.
template <class T>
std::vector<T> gather_grads(const Tape<T>& tape, const ParamVars& vars);

/// Concatenates the presets chosen by input_presets(config.preset_count) into [H, W, 3P].
template <class T>
Tensor<T> make_input(const PresetStack& stack, const ModelConfig& config);

/// Per-head attention internals of one forward pass.
template <class T>
struct AttentionState {
    std::vector<Tensor<T>> q, k, v;  // [H, W, C/heads] each
    std::vector<Tensor<T>> maps;     // [C/heads, C/heads] each, row-stochastic
};

// Differentiable building blocks, recorded on a tape.
template <class T>
Var transposed_attention(Tape<T>& tape, Var features, const ParamVars& p, const ModelConfig& config);
template <class T>
Var gated_ffn(Tape<T>& tape, Var features, const ParamVars& p, const ModelConfig& config);
/// Unclamped network output [H, W, 3] for training.
template <class T>
Var forward(Tape<T>& tape, Var input, const ParamVars& p, const ModelConfig& config);

// Tape-free equivalents used for inference; bit-identical to the tape path.
template <class T>
Tensor<T> transposed_attention(const Tensor<T>& features, const ModelParams<T>& p, const ModelConfig& config,
                               AttentionState<T>* state = nullptr);
template <class T>
Tensor<T> gated_ffn(const Tensor<T>& features, const ModelParams<T>& p, const ModelConfig& config);
template <class T>
Tensor<T> forward(const Tensor<T>& input, const ModelParams<T>& p, const ModelConfig& config);

/// Inference entry point: fuses a preset stack into a clamped sRGB image.
ImageRGB fuse(const PresetStack& stack, const ModelParams<float>& params, const ModelConfig& config);

/// Checkpoint layout (all little-endian):
///   "WBF1" | u32 P | u32 C | u32 heads | f32 expansion |
///   per tensor in parameter order: u32 rank | u32 dims[rank] | f32 values
std::vector<std::uint8_t> encode_checkpoint(const ModelConfig& config, const ModelParams<float>& params);
void decode_checkpoint(std::span<const std::uint8_t> bytes, ModelConfig& config, ModelParams<float>& params);
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams<float>& params);
void load_checkpoint(const std::filesystem::path& path, ModelConfig& config, ModelParams<float>& params);

}  // namespace wbf
