// SPDX-License-Identifier: Apache-2.0
#include "wbfuse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "wbfuse/color.hpp"
#include "wbfuse/parallel.hpp"
#include "wbfuse/random.hpp"

namespace wbf {

Rgb cct_to_rgb(double cct) {
    if (cct < 1667.0 || cct > 25000.0) throw std::invalid_argument("cct_to_rgb: CCT outside [1667, 25000] K");
    // Planckian locus approximation (Kim et al.), xy chromaticity.
    const double t = cct, t2 = t * t, t3 = t2 * t;
    const double x = t <= 4000.0 ? -0.2661239e9 / t3 - 0.2343589e6 / t2 + 0.8776956e3 / t + 0.179910
                                 : -3.0258469e9 / t3 + 2.1070379e6 / t2 + 0.2226347e3 / t + 0.240390;
    const double x2 = x * x, x3 = x2 * x;
    double y;
    if (t <= 2222.0) y = -1.1063814 * x3 - 1.34811020 * x2 + 2.18555832 * x - 0.20219683;
    else if (t <= 4000.0) y = -0.9549476 * x3 - 1.37418593 * x2 + 2.09137015 * x - 0.16748867;
    else y = 3.0817580 * x3 - 5.87338670 * x2 + 3.75112997 * x - 0.37001483;

    const double X = x / y, Y = 1.0, Z = (1.0 - x - y) / y;
    // XYZ to linear sRGB (D65).
    const double r = 3.2404542 * X - 1.5371385 * Y - 0.4985314 * Z;
    const double g = -0.9692660 * X + 1.8760108 * Y + 0.0415560 * Z;
    const double b = 0.0556434 * X - 0.2040259 * Y + 1.0572252 * Z;
    return {r / g, 1.0, b / g};
}

const std::array<Rgb, kPresetCount>& preset_gains() {
    static const std::array<Rgb, kPresetCount> gains = [] {
        std::array<Rgb, kPresetCount> g{};
        for (std::size_t i = 0; i < kPresetCount; ++i) g[i] = cct_to_rgb(kPresetCct[i]);
        return g;
    }();
    return gains;
}

Rgb SceneSpec::light(std::size_t i) const {
    Rgb second = illuminant_b;
    if (illuminant_c) {
        const double mb = mixing_bc[i];
        for (int c = 0; c < 3; ++c) second[c] = (*illuminant_c)[c] + mb * (illuminant_b[c] - (*illuminant_c)[c]);
    }
    // Written as an offset so equal illuminants give that illuminant exactly.
    const double m = mixing[i];
    Rgb out{};
    for (int c = 0; c < 3; ++c) out[c] = second[c] + m * (illuminant_a[c] - second[c]);
    return out;
}

namespace {

Rgb jittered_illuminant(Rgb base, Rng& rng) {
    base[0] *= 1.0 + rng.uniform(-0.15, 0.15);
    base[2] *= 1.0 + rng.uniform(-0.15, 0.15);
    return base;
}

std::vector<double> sigmoid_ramp(std::size_t H, std::size_t W, Rng& rng) {
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double offset = rng.uniform(-0.25, 0.25);
    const double softness = rng.uniform(0.05, 0.25);
    const double dx = std::cos(angle), dy = std::sin(angle);
    std::vector<double> m(H * W);
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
            const double u = (static_cast<double>(w) + 0.5) / static_cast<double>(W) - 0.5;
            const double v = (static_cast<double>(h) + 0.5) / static_cast<double>(H) - 0.5;
            m[h * W + w] = 1.0 / (1.0 + std::exp(-(u * dx + v * dy - offset) / softness));
        }
    }
    return m;
}

}  // namespace

SceneSpec generate_scene(std::uint64_t seed, std::size_t height, std::size_t width, SceneOptions options) {
    if (height < 8 || width < 8) {
        throw std::invalid_argument("generate_scene: size " + std::to_string(height) + "x" + std::to_string(width) +
                                    " is below the 8x8 minimum");
    }
    Rng rng(seed);
    SceneSpec s;
    s.seed = seed;
    s.height = height;
    s.width = width;

    // Reflectance: per-channel base plus a few low-frequency cosine bumps.
    struct Bump {
        double fx, fy, phase;
        Rgb amp;
    };
    const std::size_t bump_count = 3 + rng.index(6);
    Rgb base{};
    for (double& b : base) b = rng.uniform(0.2, 0.8);
    std::vector<Bump> bumps(bump_count);
    for (Bump& b : bumps) {
        b.fx = rng.uniform(-4.0, 4.0);
        b.fy = rng.uniform(-4.0, 4.0);
        b.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (double& a : b.amp) a = rng.uniform(-0.3, 0.3);
    }
    s.reflectance.resize(height * width * 3);
    for (std::size_t h = 0; h < height; ++h) {
        for (std::size_t w = 0; w < width; ++w) {
            const double u = static_cast<double>(w) / static_cast<double>(width);
            const double v = static_cast<double>(h) / static_cast<double>(height);
            for (std::size_t c = 0; c < 3; ++c) {
                double r = base[c];
                for (const Bump& b : bumps) r += b.amp[c] * std::cos(2.0 * std::numbers::pi * (b.fx * u + b.fy * v) + b.phase);
                s.reflectance[(h * width + w) * 3 + c] = std::clamp(r, 0.05, 0.95);
            }
        }
    }

    // Two distinct preset temperatures, each jittered off its preset.
    const auto& gains = preset_gains();
    const std::size_t ia = rng.index(kPresetCount);
    std::size_t ib = rng.index(kPresetCount - 1);
    if (ib >= ia) ++ib;
    s.illuminant_a = jittered_illuminant(gains[ia], rng);
    s.illuminant_b = jittered_illuminant(gains[ib], rng);
    s.mixing = sigmoid_ramp(height, width, rng);
    s.exposure = rng.uniform(0.5, 0.9);
    if (options.three_illuminants) {
        std::size_t ic = rng.index(kPresetCount);
        s.illuminant_c = jittered_illuminant(gains[ic], rng);
        s.mixing_bc = sigmoid_ramp(height, width, rng);
    }
    return s;
}

ImageRGB render_raw(const SceneSpec& scene) {
    ImageRGB raw(scene.height, scene.width);
    for (std::size_t i = 0; i < raw.pixel_count(); ++i) {
        const Rgb l = scene.light(i);
        for (std::size_t c = 0; c < 3; ++c) raw.pixel(i)[c] = scene.exposure * scene.reflectance[i * 3 + c] * l[c];
    }
    return raw;
}

namespace {

ImageRGB encode_clipped(const ImageRGB& linear) {
    ImageRGB out(linear.height(), linear.width());
    for (std::size_t i = 0; i < linear.data().size(); ++i)
        out.data()[i] = linear_to_srgb(std::clamp(linear.data()[i], 0.0, 1.0));
    return out;
}

ImageRGB divide_by(const ImageRGB& raw, const Rgb& gains) {
    ImageRGB out = raw;
    for (std::size_t i = 0; i < out.pixel_count(); ++i)
        for (std::size_t c = 0; c < 3; ++c) out.pixel(i)[c] /= gains[c];
    return out;
}

}  // namespace

ImageRGB render_preset(const SceneSpec& scene, const Rgb& preset) {
    return encode_clipped(divide_by(render_raw(scene), preset));
}

PresetStack render_presets(const SceneSpec& scene) {
    const ImageRGB raw = render_raw(scene);
    PresetStack stack;
    for (std::size_t p = 0; p < kPresetCount; ++p) stack.presets[p] = encode_clipped(divide_by(raw, preset_gains()[p]));
    return stack;
}

ImageRGB render_ground_truth(const SceneSpec& scene) {
    ImageRGB balanced = render_raw(scene);
    for (std::size_t i = 0; i < balanced.pixel_count(); ++i) {
        const Rgb l = scene.light(i);
        for (std::size_t c = 0; c < 3; ++c) balanced.pixel(i)[c] /= l[c];
    }
    return encode_clipped(balanced);
}

Rgb gray_world(const ImageRGB& raw) {
    Rgb mean{0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < raw.pixel_count(); ++i)
        for (std::size_t c = 0; c < 3; ++c) mean[c] += raw.pixel(i)[c];
    if (!(mean[1] > 0.0)) return {1.0, 1.0, 1.0};
    return {mean[0] / mean[1], 1.0, mean[2] / mean[1]};
}

ImageRGB render_awb(const SceneSpec& scene) {
    const ImageRGB raw = render_raw(scene);
    return encode_clipped(divide_by(raw, gray_world(raw)));
}

double pixel_brightness(std::span<const double, 3> srgb, BrightnessMode mode) {
    const double r = srgb_to_linear(srgb[0]), g = srgb_to_linear(srgb[1]), b = srgb_to_linear(srgb[2]);
    if (mode == BrightnessMode::Luma) return 0.2126 * r + 0.7152 * g + 0.0722 * b;
    return (r + g + b) / 3.0;
}

BrightnessAdjusted adjust_brightness(const ImageRGB& gt, const ImageRGB& awb, BrightnessMode mode) {
    if (!gt.same_size(awb)) {
        throw std::invalid_argument("adjust_brightness: GT is " + std::to_string(gt.height()) + "x" +
                                    std::to_string(gt.width()) + ", AWB is " + std::to_string(awb.height()) + "x" +
                                    std::to_string(awb.width()));
    }
    constexpr double eps = 1e-6;
    BrightnessAdjusted out{ImageRGB(gt.height(), gt.width()), 0, std::vector<std::uint8_t>(gt.pixel_count(), 0)};
    for (std::size_t i = 0; i < gt.pixel_count(); ++i) {
        const double scale = (pixel_brightness(awb.pixel(i), mode) + eps) / (pixel_brightness(gt.pixel(i), mode) + eps);
        bool clipped = false;
        for (std::size_t c = 0; c < 3; ++c) {
            double v = srgb_to_linear(gt.pixel(i)[c]) * scale;
            if (v > 1.0) {
                v = 1.0;
                clipped = true;
            }
            out.image.pixel(i)[c] = linear_to_srgb(v);
        }
        if (clipped) {
            ++out.clipped_pixels;
            out.clipped[i] = 1;
        }
    }
    return out;
}

RenderedScene render_scene(const SceneSpec& scene, BrightnessMode mode) {
    RenderedScene r;
    r.presets = render_presets(scene);
    r.awb = render_awb(scene);
    BrightnessAdjusted adj = adjust_brightness(render_ground_truth(scene), r.awb, mode);
    r.gt = std::move(adj.image);
    r.clipped_pixels = adj.clipped_pixels;
    return r;
}

SplitCounts split_counts(std::size_t n, const std::array<double, 3>& ratios) {
    for (double r : ratios)
        if (!(r >= 0.0)) throw std::invalid_argument("split ratios must be non-negative");
    SplitCounts c;
    c.val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[1]));
    c.test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[2]));
    if (c.val + c.test > n) throw std::invalid_argument("split ratios exceed the scene count");
    c.train = n - c.val - c.test;
    return c;
}

const std::vector<std::string>& DatasetManifest::split(const std::string& name) const {
    static const std::vector<std::string> empty;
    auto it = splits.find(name);
    return it == splits.end() ? empty : it->second;
}

std::uint64_t scene_seed(std::uint64_t dataset_seed, std::size_t index) {
    return Rng::mix(Rng::mix(dataset_seed) + static_cast<std::uint64_t>(index));
}

std::string scene_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%04zu", index);
    return buf;
}

namespace {

nlohmann::ordered_json rgb_json(const Rgb& v) { return {v[0], v[1], v[2]}; }

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
}

}  // namespace

DatasetManifest build_dataset(const DatasetOptions& options, const std::filesystem::path& out_dir) {
    if (options.scenes == 0) throw std::invalid_argument("build_dataset: scene count must be positive");
    const SplitCounts counts = options.counts ? *options.counts : split_counts(options.scenes, options.ratios);
    if (counts.train + counts.val + counts.test != options.scenes) {
        throw std::invalid_argument("build_dataset: split counts do not add up to the scene count");
    }

    // Scene-disjoint assignment from a seeded shuffle.
    std::vector<std::size_t> order(options.scenes);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(Rng::mix(options.seed) ^ 0x5eed5eedULL);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.index(i)]);
    std::vector<std::string> split_of(options.scenes);
    for (std::size_t k = 0; k < order.size(); ++k) {
        split_of[order[k]] = k < counts.train ? "train" : k < counts.train + counts.val ? "val" : "test";
    }

    std::filesystem::create_directories(out_dir);
    DatasetManifest manifest{options.scenes, options.height, options.width, options.seed, {}};
    manifest.splits["train"];
    manifest.splits["val"];
    manifest.splits["test"];
    parallel_for(options.scenes, options.threads, [&](std::size_t i) {
        const std::uint64_t seed = scene_seed(options.seed, i);
        const SceneSpec spec = generate_scene(seed, options.height, options.width, options.scene);
        RenderedScene scene = render_scene(spec, options.brightness);
        const std::string id = scene_id(i);
        const auto dir = out_dir / id;
        std::filesystem::create_directories(dir);
        for (std::size_t p = 0; p < kPresetCount; ++p)
            write_png(dir / (std::string(kPresetNames[p]) + ".png"), scene.presets.presets[p]);
        write_png(dir / "gt.png", scene.gt);
        write_png(dir / "awb.png", scene.awb);

        nlohmann::ordered_json meta = {{"id", id},
                                       {"seed", seed},
                                       {"height", options.height},
                                       {"width", options.width},
                                       {"split", split_of[i]},
                                       {"illuminant_a", rgb_json(spec.illuminant_a)},
                                       {"illuminant_b", rgb_json(spec.illuminant_b)},
                                       {"exposure", spec.exposure},
                                       {"clipped_pixels", scene.clipped_pixels}};
        if (spec.illuminant_c) meta["illuminant_c"] = rgb_json(*spec.illuminant_c);
        write_text(dir / "meta.json", meta.dump(2) + "\n");
    });
    for (std::size_t i = 0; i < options.scenes; ++i) manifest.splits[split_of[i]].push_back(scene_id(i));

    nlohmann::ordered_json mj = {{"format", "wbfuse-dataset-1"},
                                 {"scenes", manifest.scenes},
                                 {"height", manifest.height},
                                 {"width", manifest.width},
                                 {"seed", manifest.seed},
                                 {"presets", std::vector<std::string>(kPresetNames.begin(), kPresetNames.end())},
                                 {"splits",
                                  {{"train", manifest.splits["train"]},
                                   {"val", manifest.splits["val"]},
                                   {"test", manifest.splits["test"]}}}};
    write_text(out_dir / "manifest.json", mj.dump(2) + "\n");
    return manifest;
}

DatasetManifest read_manifest(const std::filesystem::path& dataset_dir) {
    const auto path = dataset_dir / "manifest.json";
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open dataset manifest " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
    DatasetManifest m;
    m.scenes = j.at("scenes").get<std::size_t>();
    m.height = j.at("height").get<std::size_t>();
    m.width = j.at("width").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const char* name : {"train", "val", "test"}) m.splits[name] = j.at("splits").value(name, std::vector<std::string>{});
    return m;
}

LoadedScene load_scene(const std::filesystem::path& dataset_dir, const std::string& id) {
    LoadedScene s;
    s.id = id;
    const auto dir = dataset_dir / id;
    for (std::size_t p = 0; p < kPresetCount; ++p)
        s.presets.presets[p] = read_png(dir / (std::string(kPresetNames[p]) + ".png"));
    s.gt = read_png(dir / "gt.png");
    s.awb = read_png(dir / "awb.png");
    s.presets.validate();
    return s;
}

}  // namespace wbf
