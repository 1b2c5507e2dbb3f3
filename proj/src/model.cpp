// SPDX-License-Identifier: Apache-2.0
#include "wbfuse/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "wbfuse/kernels.hpp"
#include "wbfuse/random.hpp"

namespace wbf {

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
    if (preset_count < 1 || preset_count > kPresetCount) fail("preset_count must be in [1, 5]");
    if (feature_channels < 1) fail("feature_channels must be positive");
    if (attention_heads < 1) fail("attention_heads must be positive");
    if (feature_channels % attention_heads != 0) {
        fail("feature_channels (" + std::to_string(feature_channels) + ") not divisible by attention_heads (" +
             std::to_string(attention_heads) + ")");
    }
    if (!(ffn_expansion > 0.0f) || ffn_hidden() < 1) fail("ffn_expansion must give at least one hidden channel");
}

std::vector<Preset> input_presets(std::size_t preset_count) {
    static constexpr Preset kPriority[] = {Preset::Daylight, Preset::Shade, Preset::Tungsten, Preset::Fluorescent,
                                           Preset::Cloudy};
    if (preset_count < 1 || preset_count > kPresetCount) {
        throw std::invalid_argument("input_presets: preset count must be in [1, 5]");
    }
    std::vector<Preset> chosen(std::begin(kPriority), std::begin(kPriority) + preset_count);
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

template <class T>
std::vector<std::string> ModelParams<T>::names() {
    return {"conv_in.weight", "conv_in.bias",     "norm1.gamma",     "norm1.beta",    "attn.qkv.weight",
            "attn.qkv.bias",  "attn.qkv_dw.weight", "attn.qkv_dw.bias", "attn.temperature", "attn.proj.weight",
            "attn.proj.bias", "norm2.gamma",      "norm2.beta",      "ffn.in.weight", "ffn.in.bias",
            "ffn.dw.weight",  "ffn.dw.bias",      "ffn.out.weight",  "ffn.out.bias",  "conv_out.weight",
            "conv_out.bias"};
}

template <class T>
std::vector<Shape> ModelParams<T>::shapes(const ModelConfig& config) {
    config.validate();
    const std::size_t P = config.preset_count, C = config.feature_channels, F = config.ffn_hidden();
    return {
        {3, 3, 3 * P, C}, {C},               // conv_in
        {C}, {C},                            // norm1
        {1, 1, C, 3 * C}, {3 * C},           // qkv
        {3, 3, 3 * C}, {3 * C},              // qkv depthwise
        {config.attention_heads},            // temperature
        {1, 1, C, C}, {C},                   // proj
        {C}, {C},                            // norm2
        {1, 1, C, 2 * F}, {2 * F},           // ffn in
        {3, 3, 2 * F}, {2 * F},              // ffn depthwise
        {1, 1, F, C}, {C},                   // ffn out
        {3, 3, C, 3}, {3},                   // conv_out
    };
}

template <class T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& config) {
    ModelParams p;
    for (const Shape& s : shapes(config)) p.tensors.emplace_back(s);
    return p;
}

template <class T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& config, std::uint64_t seed) {
    ModelParams p = zeros(config);
    Rng rng(seed);
    for (std::size_t i = 0; i < kCount; ++i) {
        Tensor<T>& t = p.tensors[i];
        switch (i) {
            case param::Norm1G:
            case param::Norm2G:
            case param::Temperature:
                t.fill(T(1));
                break;
            case param::ConvInW:
            case param::QkvW:
            case param::ProjW:
            case param::FfnInW:
            case param::FfnOutW:
            case param::ConvOutW:
            case param::QkvDwW:
            case param::FfnDwW: {
                // Depthwise kernels are [3, 3, C]: fan-in is the 9 taps.
                const std::size_t fan_in = t.rank() == 4 ? t.dim(0) * t.dim(1) * t.dim(2) : 9;
                const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
                for (T& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
                break;
            }
            default:
                break;
        }
    }
    return p;
}

template <class T>
std::size_t ModelParams<T>::count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

template <class T>
std::vector<T> ModelParams<T>::flatten() const {
    std::vector<T> flat;
    flat.reserve(count());
    for (const auto& t : tensors) flat.insert(flat.end(), t.values().begin(), t.values().end());
    return flat;
}

template <class T>
void ModelParams<T>::unflatten(std::span<const T> flat) {
    if (flat.size() != count()) {
        throw std::invalid_argument("unflatten: expected " + std::to_string(count()) + " values, got " +
                                    std::to_string(flat.size()));
    }
    std::size_t offset = 0;
    for (auto& t : tensors) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), t.size(), t.data());
        offset += t.size();
    }
}

template <class T>
void ModelParams<T>::check(const ModelConfig& config) const {
    const auto expected = shapes(config);
    if (tensors.size() != expected.size()) {
        throw std::invalid_argument("model params: expected " + std::to_string(expected.size()) + " tensors, got " +
                                    std::to_string(tensors.size()));
    }
    const auto labels = names();
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (tensors[i].shape() != expected[i]) {
            throw std::invalid_argument("model params: " + labels[i] + " has shape " +
                                        shape_string(tensors[i].shape()) + ", config requires " +
                                        shape_string(expected[i]));
        }
    }
}

std::size_t param_count(const ModelConfig& config) {
    std::size_t n = 0;
    for (const Shape& s : ModelParams<float>::shapes(config)) n += shape_size(s);
    return n;
}

template <class T>
ParamVars bind_params(Tape<T>& tape, const ModelParams<T>& params, bool requires_grad) {
    ParamVars pv;
    for (const auto& t : params.tensors) pv.vars.push_back(tape.leaf(t, requires_grad));
    return pv;
}

template <class T>
std::vector<T> gather_grads(const Tape<T>& tape, const ParamVars& vars) {
    std::vector<T> flat;
    for (Var v : vars.vars) {
        const auto& g = tape.grad(v);
        flat.insert(flat.end(), g.values().begin(), g.values().end());
    }
    return flat;
}

template <class T>
Tensor<T> make_input(const PresetStack& stack, const ModelConfig& config) {
    stack.validate();
    const auto chosen = input_presets(config.preset_count);
    const std::size_t H = stack.height(), W = stack.width(), P = chosen.size();
    Tensor<T> input({H, W, 3 * P});
    for (std::size_t i = 0; i < H * W; ++i) {
        for (std::size_t p = 0; p < P; ++p) {
            const auto px = stack[chosen[p]].pixel(i);
            for (std::size_t c = 0; c < 3; ++c) input[i * 3 * P + 3 * p + c] = static_cast<T>(px[c]);
        }
    }
    return input;
}

namespace {

namespace PI = param;

void check_input(const Shape& input, const ModelConfig& config) {
    if (input.size() != 3 || input[2] != 3 * config.preset_count) {
        throw std::invalid_argument("forward: input " + shape_string(input) + " does not match " +
                                    std::to_string(config.preset_count) + " presets (expected 3P = " +
                                    std::to_string(3 * config.preset_count) + " channels)");
    }
}

template <class T>
void check_bound(const Tape<T>& tape, const ParamVars& p, const ModelConfig& config) {
    const auto shapes = ModelParams<T>::shapes(config);
    if (p.vars.size() != shapes.size()) throw std::invalid_argument("forward: parameter count mismatch");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (tape.value(p[i]).shape() != shapes[i]) {
            throw std::invalid_argument("forward: parameter " + ModelParams<T>::names()[i] +
                                        " does not match the model config");
        }
    }
}

}  // namespace

template <class T>
Var transposed_attention(Tape<T>& tape, Var features, const ParamVars& p, const ModelConfig& config) {
    const std::size_t C = config.feature_channels, c = config.head_channels();
    Var qkv = tape.conv2d(features, p[PI::QkvW], p[PI::QkvB]);
    qkv = tape.depthwise_conv3x3(qkv, p[PI::QkvDwW], p[PI::QkvDwB]);
    std::vector<Var> heads;
    for (std::size_t h = 0; h < config.attention_heads; ++h) {
        Var q = tape.normalize_spatial(tape.slice_channels(qkv, h * c, c));
        Var k = tape.normalize_spatial(tape.slice_channels(qkv, C + h * c, c));
        Var v = tape.slice_channels(qkv, 2 * C + h * c, c);
        Var scores = tape.scale(tape.channel_gram(k, q), tape.pick(p[PI::Temperature], h));
        Var attn = tape.softmax(scores, 1);
        heads.push_back(tape.mix_channels(v, attn));
    }
    Var merged = heads.size() == 1 ? heads.front() : tape.concat_channels(heads);
    return tape.conv2d(merged, p[PI::ProjW], p[PI::ProjB]);
}

template <class T>
Var gated_ffn(Tape<T>& tape, Var features, const ParamVars& p, const ModelConfig& config) {
    const std::size_t F = config.ffn_hidden();
    Var hidden = tape.conv2d(features, p[PI::FfnInW], p[PI::FfnInB]);
    hidden = tape.depthwise_conv3x3(hidden, p[PI::FfnDwW], p[PI::FfnDwB]);
    Var gate = tape.gelu(tape.slice_channels(hidden, 0, F));
    Var gated = tape.mul(gate, tape.slice_channels(hidden, F, F));
    return tape.conv2d(gated, p[PI::FfnOutW], p[PI::FfnOutB]);
}

template <class T>
Var forward(Tape<T>& tape, Var input, const ParamVars& p, const ModelConfig& config) {
    config.validate();
    check_input(tape.value(input).shape(), config);
    check_bound(tape, p, config);
    Var x = tape.conv2d(input, p[PI::ConvInW], p[PI::ConvInB]);
    x = tape.add(x, transposed_attention(tape, tape.layer_norm(x, p[PI::Norm1G], p[PI::Norm1B]), p, config));
    x = tape.add(x, gated_ffn(tape, tape.layer_norm(x, p[PI::Norm2G], p[PI::Norm2B]), p, config));
    return tape.conv2d(x, p[PI::ConvOutW], p[PI::ConvOutB]);
}

namespace {

template <class T>
void add_into(Tensor<T>& acc, const Tensor<T>& other) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += other[i];
}

}  // namespace

template <class T>
Tensor<T> transposed_attention(const Tensor<T>& features, const ModelParams<T>& p, const ModelConfig& config,
                               AttentionState<T>* state) {
    namespace k = kernels;
    const std::size_t C = config.feature_channels, c = config.head_channels();
    Tensor<T> qkv = k::depthwise_conv3x3(k::conv2d(features, p[PI::QkvW], p[PI::QkvB]), p[PI::QkvDwW],
                                         p[PI::QkvDwB]);
    std::vector<Tensor<T>> heads;
    for (std::size_t h = 0; h < config.attention_heads; ++h) {
        Tensor<T> q = k::normalize_spatial(k::slice_channels(qkv, h * c, c));
        Tensor<T> key = k::normalize_spatial(k::slice_channels(qkv, C + h * c, c));
        Tensor<T> v = k::slice_channels(qkv, 2 * C + h * c, c);
        Tensor<T> scores = k::channel_gram(key, q);
        const T tau = p[PI::Temperature][h];
        for (T& s : scores.values()) s *= tau;
        Tensor<T> attn = k::softmax(scores, 1);
        heads.push_back(k::mix_channels(v, attn));
        if (state) {
            state->q.push_back(std::move(q));
            state->k.push_back(std::move(key));
            state->v.push_back(std::move(v));
            state->maps.push_back(std::move(attn));
        }
    }
    qkv = Tensor<T>();
    std::vector<const Tensor<T>*> parts;
    for (const auto& t : heads) parts.push_back(&t);
    Tensor<T> merged = heads.size() == 1 ? std::move(heads.front()) : k::concat_channels<T>(parts);
    heads.clear();
    return k::conv2d(merged, p[PI::ProjW], p[PI::ProjB]);
}

template <class T>
Tensor<T> gated_ffn(const Tensor<T>& features, const ModelParams<T>& p, const ModelConfig& config) {
    namespace k = kernels;
    const std::size_t F = config.ffn_hidden();
    Tensor<T> gated;
    {
        Tensor<T> hidden = k::depthwise_conv3x3(k::conv2d(features, p[PI::FfnInW], p[PI::FfnInB]), p[PI::FfnDwW],
                                                p[PI::FfnDwB]);
        gated = k::gelu(k::slice_channels(hidden, 0, F));
        const Tensor<T> other = k::slice_channels(hidden, F, F);
        for (std::size_t i = 0; i < gated.size(); ++i) gated[i] *= other[i];
    }
    return k::conv2d(gated, p[PI::FfnOutW], p[PI::FfnOutB]);
}

template <class T>
Tensor<T> forward(const Tensor<T>& input, const ModelParams<T>& p, const ModelConfig& config) {
    config.validate();
    check_input(input.shape(), config);
    p.check(config);
    namespace k = kernels;
    Tensor<T> x = k::conv2d(input, p[PI::ConvInW], p[PI::ConvInB]);
    add_into(x, transposed_attention(k::layer_norm(x, p[PI::Norm1G], p[PI::Norm1B]), p, config));
    add_into(x, gated_ffn(k::layer_norm(x, p[PI::Norm2G], p[PI::Norm2B]), p, config));
    return k::conv2d(x, p[PI::ConvOutW], p[PI::ConvOutB]);
}

ImageRGB fuse(const PresetStack& stack, const ModelParams<float>& params, const ModelConfig& config) {
    const Tensor<float> out = forward(make_input<float>(stack, config), params, config);
    ImageRGB img(stack.height(), stack.width());
    for (std::size_t i = 0; i < out.size(); ++i) img.data()[i] = std::clamp(static_cast<double>(out[i]), 0.0, 1.0);
    return img;
}

namespace {

constexpr char kMagic[4] = {'W', 'B', 'F', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        if (pos_ + 4 > bytes_.size()) throw std::runtime_error("checkpoint: truncated at byte " + std::to_string(pos_));
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    bool done() const { return pos_ == bytes_.size(); }
    std::span<const std::uint8_t> take(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint: truncated");
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelConfig& config, const ModelParams<float>& params) {
    params.check(config);
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, config.preset_count);
    put_u32(out, config.feature_channels);
    put_u32(out, config.attention_heads);
    put_f32(out, config.ffn_expansion);
    for (const auto& t : params.tensors) {
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        for (float v : t.values()) put_f32(out, v);
    }
    return out;
}

void decode_checkpoint(std::span<const std::uint8_t> bytes, ModelConfig& config, ModelParams<float>& params) {
    Reader in(bytes);
    const auto magic = in.take(4);
    if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) {
        throw std::runtime_error("checkpoint: bad magic (expected WBF1)");
    }
    ModelConfig cfg;
    cfg.preset_count = in.u32();
    cfg.feature_channels = in.u32();
    cfg.attention_heads = in.u32();
    cfg.ffn_expansion = in.f32();
    cfg.validate();
    ModelParams<float> p = ModelParams<float>::zeros(cfg);
    const auto labels = ModelParams<float>::names();
    for (std::size_t i = 0; i < p.tensors.size(); ++i) {
        Shape shape(in.u32());
        for (auto& d : shape) d = in.u32();
        if (shape != p.tensors[i].shape()) {
            throw std::runtime_error("checkpoint: " + labels[i] + " has shape " + shape_string(shape) +
                                     ", config requires " + shape_string(p.tensors[i].shape()));
        }
        for (float& v : p.tensors[i].values()) v = in.f32();
    }
    if (!in.done()) throw std::runtime_error("checkpoint: trailing bytes");
    config = cfg;
    params = std::move(p);
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams<float>& params) {
    const auto bytes = encode_checkpoint(config, params);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, ModelConfig& config, ModelParams<float>& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    decode_checkpoint(bytes, config, params);
}

#define WBF_INSTANTIATE_MODEL(T)                                                                             \
    template struct ModelParams<T>;                                                                          \
    template ParamVars bind_params(Tape<T>&, const ModelParams<T>&, bool);                                   \
    template std::vector<T> gather_grads(const Tape<T>&, const ParamVars&);                                  \
    template Tensor<T> make_input(const PresetStack&, const ModelConfig&);                                   \
    template Var transposed_attention(Tape<T>&, Var, const ParamVars&, const ModelConfig&);                  \
    template Var gated_ffn(Tape<T>&, Var, const ParamVars&, const ModelConfig&);                             \
    template Var forward(Tape<T>&, Var, const ParamVars&, const ModelConfig&);                               \
    template Tensor<T> transposed_attention(const Tensor<T>&, const ModelParams<T>&, const ModelConfig&,     \
                                            AttentionState<T>*);                                             \
    template Tensor<T> gated_ffn(const Tensor<T>&, const ModelParams<T>&, const ModelConfig&);               \
    template Tensor<T> forward(const Tensor<T>&, const ModelParams<T>&, const ModelConfig&);

WBF_INSTANTIATE_MODEL(float)
WBF_INSTANTIATE_MODEL(double)

#undef WBF_INSTANTIATE_MODEL

}  // namespace wbf
