// SPDX-License-Identifier: Apache-2.0
#include "wbfuse/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "wbfuse/optim.hpp"
#include "wbfuse/random.hpp"

namespace wbf {

using ojson = nlohmann::ordered_json;

void TrainConfig::validate() const {
    if (total_steps < 1) throw ConfigError("total_steps must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (val_interval < 1) throw ConfigError("val_interval must be at least 1");
    if (!(lr_start > 0.0) || !(lr_end >= 0.0)) throw ConfigError("learning rates must be positive");
    if (threads < 1) throw ConfigError("threads must be at least 1");
    if (!std::filesystem::is_directory(dataset)) throw ConfigError("dataset directory not found: " + dataset.string());
    if (out_dir.empty()) throw ConfigError("output directory is required");
    try {
        model.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

namespace {

nlohmann::json parse_overrides(const std::string& text) {
    try {
        nlohmann::json j = nlohmann::json::parse(text);
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

template <class V>
void take(const nlohmann::json& j, const char* key, V& dst) {
    try {
        dst = j.get<V>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config: bad value for '") + key + "'");
    }
}

ojson model_json(const ModelConfig& m) {
    return {{"preset_count", m.preset_count},
            {"feature_channels", m.feature_channels},
            {"attention_heads", m.attention_heads},
            {"ffn_expansion", m.ffn_expansion}};
}

}  // namespace

void apply_overrides(TrainConfig& c, const std::string& json_text) {
    const nlohmann::json j = parse_overrides(json_text);
    for (const auto& [key, value] : j.items()) {
        if (key == "dataset") {
            std::string s;
            take(value, "dataset", s);
            c.dataset = s;
        } else if (key == "out_dir") {
            std::string s;
            take(value, "out_dir", s);
            c.out_dir = s;
        } else if (key == "total_steps") take(value, "total_steps", c.total_steps);
        else if (key == "batch_size") take(value, "batch_size", c.batch_size);
        else if (key == "seed") take(value, "seed", c.seed);
        else if (key == "lr_start") take(value, "lr_start", c.lr_start);
        else if (key == "lr_end") take(value, "lr_end", c.lr_end);
        else if (key == "val_interval") take(value, "val_interval", c.val_interval);
        else if (key == "train_split") take(value, "train_split", c.train_split);
        else if (key == "val_split") take(value, "val_split", c.val_split);
        else if (key == "max_train_scenes") take(value, "max_train_scenes", c.max_train_scenes);
        else if (key == "threads") take(value, "threads", c.threads);
        else if (key == "model") {
            if (!value.is_object()) throw ConfigError("config: 'model' must be an object");
            for (const auto& [mk, mv] : value.items()) {
                if (mk == "preset_count") take(mv, "preset_count", c.model.preset_count);
                else if (mk == "feature_channels") take(mv, "feature_channels", c.model.feature_channels);
                else if (mk == "attention_heads") take(mv, "attention_heads", c.model.attention_heads);
                else if (mk == "ffn_expansion") take(mv, "ffn_expansion", c.model.ffn_expansion);
                else throw ConfigError("config: unknown model key '" + mk + "'");
            }
        } else {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
}

void apply_overrides(DatasetOptions& o, const std::string& json_text) {
    const nlohmann::json j = parse_overrides(json_text);
    for (const auto& [key, value] : j.items()) {
        if (key == "scenes") take(value, "scenes", o.scenes);
        else if (key == "size") {
            take(value, "size", o.height);
            o.width = o.height;
        } else if (key == "height") take(value, "height", o.height);
        else if (key == "width") take(value, "width", o.width);
        else if (key == "seed") take(value, "seed", o.seed);
        else if (key == "ratios") take(value, "ratios", o.ratios);
        else if (key == "counts") {
            SplitCounts c;
            if (!value.is_object()) throw ConfigError("config: 'counts' must be an object");
            take(value.value("train", nlohmann::json(0)), "counts.train", c.train);
            take(value.value("val", nlohmann::json(0)), "counts.val", c.val);
            take(value.value("test", nlohmann::json(0)), "counts.test", c.test);
            o.counts = c;
        } else if (key == "three_illuminants") take(value, "three_illuminants", o.scene.three_illuminants);
        else if (key == "brightness") {
            std::string s;
            take(value, "brightness", s);
            if (s == "mean") o.brightness = BrightnessMode::Mean;
            else if (s == "luma") o.brightness = BrightnessMode::Luma;
            else throw ConfigError("config: brightness must be 'mean' or 'luma'");
        } else {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
}

std::string RunManifest::to_json() const {
    ojson validation_json = ojson::array();
    for (const auto& v : validation) validation_json.push_back({{"step", v.step}, {"val_delta_e2000", v.delta_e}});
    const ojson j = {{"version", version},
                     {"config",
                      {{"dataset", config.dataset.string()},
                       {"model", model_json(config.model)},
                       {"total_steps", config.total_steps},
                       {"batch_size", config.batch_size},
                       {"seed", config.seed},
                       {"lr_start", config.lr_start},
                       {"lr_end", config.lr_end},
                       {"lr_schedule", "cosine"},
                       {"loss", "l2_srgb"},
                       {"val_interval", config.val_interval},
                       {"train_split", config.train_split},
                       {"val_split", config.val_split},
                       {"max_train_scenes", config.max_train_scenes}}},
                     {"parameter_count", parameter_count},
                     {"validation", validation_json},
                     {"selected_step", selected_step},
                     {"selected_val_delta_e2000", selected_delta_e}};
    return j.dump(2) + "\n";
}

std::vector<LoadedScene> load_split(const std::filesystem::path& dataset, const std::string& split) {
    const DatasetManifest m = read_manifest(dataset);
    if (!m.splits.contains(split)) throw ConfigError("unknown split '" + split + "'");
    const auto& ids = m.split(split);
    std::vector<LoadedScene> scenes;
    scenes.reserve(ids.size());
    for (const auto& id : ids) scenes.push_back(load_scene(dataset, id));
    return scenes;
}

double mean_delta_e(const std::vector<LoadedScene>& scenes, const ModelParams<float>& params,
                    const ModelConfig& config, std::size_t threads) {
    if (scenes.empty()) throw ConfigError("mean_delta_e: no scenes");
    std::vector<double> de(scenes.size());
    parallel_for(scenes.size(), threads,
                 [&](std::size_t i) { de[i] = delta_e_2000(fuse(scenes[i].presets, params, config), scenes[i].gt); });
    double acc = 0.0;
    for (double v : de) acc += v;
    return acc / static_cast<double>(de.size());
}

namespace {

Tensor<float> image_tensor(const ImageRGB& img) {
    std::vector<float> data(img.data().size());
    std::transform(img.data().begin(), img.data().end(), data.begin(), [](double v) { return static_cast<float>(v); });
    return Tensor<float>({img.height(), img.width(), 3}, std::move(data));
}

struct Sample {
    Tensor<float> input;
    Tensor<float> target;
};

// Loss and flat gradient for one image.
double image_gradient(const Sample& s, const ModelParams<float>& params, const ModelConfig& cfg,
                      std::vector<float>& grad) {
    Tape<float> tape;
    const ParamVars vars = bind_params(tape, params);
    const Var x = tape.leaf(s.input);
    const Var y = forward(tape, x, vars, cfg);
    const Var d = tape.sub(y, tape.leaf(s.target));
    const Var loss = tape.mean(tape.mul(d, d));
    tape.backward(loss);
    grad = gather_grads(tape, vars);
    return static_cast<double>(tape.value(loss)[0]);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
}

}  // namespace

TrainResult train(const TrainConfig& config, std::ostream* log) {
    config.validate();
    const DatasetManifest manifest = read_manifest(config.dataset);
    if (manifest.split(config.train_split).empty()) throw ConfigError("training split '" + config.train_split + "' is empty");
    if (manifest.split(config.val_split).empty()) throw ConfigError("validation split '" + config.val_split + "' is empty");

    std::vector<LoadedScene> train_scenes = load_split(config.dataset, config.train_split);
    if (config.max_train_scenes > 0 && train_scenes.size() > config.max_train_scenes)
        train_scenes.resize(config.max_train_scenes);
    const std::vector<LoadedScene> val_scenes = load_split(config.dataset, config.val_split);

    const ModelConfig& cfg = config.model;
    std::vector<Sample> samples;
    samples.reserve(train_scenes.size());
    for (const auto& s : train_scenes) samples.push_back({make_input<float>(s.presets, cfg), image_tensor(s.gt)});

    ModelParams<float> params = ModelParams<float>::init(cfg, config.seed);
    std::vector<float> flat = params.flatten();
    AdamState<float> adam(flat.size());
    const CosineSchedule schedule{config.lr_start, config.lr_end, config.total_steps};
    Rng sampler(Rng::mix(config.seed) ^ 0xba7c4ULL);

    TrainResult result;
    RunManifest& run = result.manifest;
    run.config = config;
    run.version = WBF_VERSION;
    run.parameter_count = flat.size();
    run.selected_delta_e = std::numeric_limits<double>::infinity();
    result.best = params;

    std::vector<std::size_t> batch(config.batch_size);
    std::vector<std::vector<float>> grads(config.batch_size);
    std::vector<double> losses(config.batch_size);
    std::vector<float> total(flat.size());
    for (std::size_t step = 0; step < config.total_steps; ++step) {
        for (auto& b : batch) b = sampler.index(samples.size());
        parallel_for(batch.size(), config.threads,
                     [&](std::size_t k) { losses[k] = image_gradient(samples[batch[k]], params, cfg, grads[k]); });

        double loss = 0.0;
        std::fill(total.begin(), total.end(), 0.0f);
        for (std::size_t k = 0; k < batch.size(); ++k) {
            loss += losses[k];
            for (std::size_t i = 0; i < total.size(); ++i) total[i] += grads[k][i];
        }
        loss /= static_cast<double>(batch.size());
        const float inv = 1.0f / static_cast<float>(batch.size());
        for (float& g : total) g *= inv;

        const double lr = schedule.lr(step);
        if (!std::isfinite(loss)) {
            std::ostringstream msg;
            msg << "training diverged: loss is " << loss << " at step " << step << " (lr " << lr << ")";
            throw std::runtime_error(msg.str());
        }
        run.losses.push_back(loss);
        adam_step<float>(flat, total, adam, lr);
        params.unflatten(flat);

        const std::size_t done = step + 1;
        if (done % config.val_interval == 0 || done == config.total_steps) {
            const double val = mean_delta_e(val_scenes, params, cfg, config.threads);
            run.validation.push_back({done, val});
            if (val < run.selected_delta_e) {
                run.selected_delta_e = val;
                run.selected_step = done;
                result.best = params;
            }
            if (log) *log << "step " << done << "  loss " << loss << "  lr " << lr << "  val_delta_e2000 " << val << std::endl;
        }
    }

    std::filesystem::create_directories(config.out_dir);
    save_checkpoint(config.out_dir / "model.wbf", cfg, result.best);
    write_file(config.out_dir / "run.json", run.to_json());
    std::ostringstream lines;
    for (std::size_t i = 0; i < run.losses.size(); ++i) {
        lines << ojson{{"step", i + 1}, {"loss", run.losses[i]}, {"lr", schedule.lr(i)}}.dump() << '\n';
    }
    write_file(config.out_dir / "train_log.jsonl", lines.str());
    return result;
}

std::vector<std::string> baseline_methods() {
    std::vector<std::string> m = {"model"};
    for (auto name : kPresetNames) m.emplace_back(name);
    m.emplace_back("awb");
    m.emplace_back("oracle");
    return m;
}

MetricsReport evaluate(const EvalRequest& req) {
    const auto methods = baseline_methods();
    if (std::find(methods.begin(), methods.end(), req.method) == methods.end())
        throw ConfigError("unknown method '" + req.method + "'");
    const std::vector<LoadedScene> scenes = load_split(req.dataset, req.split);

    ModelConfig cfg;
    ModelParams<float> params;
    if (req.method == "model") load_checkpoint(req.checkpoint, cfg, params);

    std::vector<ImageMetrics> rows(scenes.size());
    parallel_for(scenes.size(), req.threads, [&](std::size_t i) {
        const LoadedScene& s = scenes[i];
        ImageRGB pred;
        if (req.method == "model") pred = fuse(s.presets, params, cfg);
        else if (req.method == "awb") pred = s.awb;
        else if (req.method == "oracle") pred = oracle_blend(s.presets, s.gt).image;
        else {
            const auto it = std::find(kPresetNames.begin(), kPresetNames.end(), req.method);
            pred = s.presets.presets[static_cast<std::size_t>(it - kPresetNames.begin())];
        }
        rows[i] = evaluate_image(s.id, pred, s.gt);
    });
    return make_report(req.split, std::move(rows));
}

void write_report(const MetricsReport& report, const std::filesystem::path& dir, const std::string& stem) {
    std::filesystem::create_directories(dir);
    write_file(dir / (stem + ".jsonl"), report_to_jsonl(report));
    write_file(dir / (stem + ".txt"), report_to_table(report));
}

ImageRGB fuse_files(const std::filesystem::path& checkpoint,
                    const std::array<std::filesystem::path, kPresetCount>& presets,
                    const std::filesystem::path& out) {
    ModelConfig cfg;
    ModelParams<float> params;
    load_checkpoint(checkpoint, cfg, params);
    PresetStack stack;
    for (std::size_t p = 0; p < kPresetCount; ++p) {
        stack.presets[p] = read_png(presets[p]);
        const ImageRGB& first = stack.presets[0];
        if (!stack.presets[p].same_size(first)) {
            throw std::invalid_argument(presets[p].string() + " is " + std::to_string(stack.presets[p].height()) + "x" +
                                        std::to_string(stack.presets[p].width()) + ", expected " +
                                        std::to_string(first.height()) + "x" + std::to_string(first.width()));
        }
    }
    ImageRGB result = fuse(stack, params, cfg);
    write_png(out, result);
    return result;
}

std::string DatasetHull::to_jsonl() const {
    std::ostringstream os;
    for (const auto& s : scenes) {
        os << ojson{{"type", "scene"},
                    {"split", split},
                    {"id", s.id},
                    {"tolerance", tolerance},
                    {"out_of_hull_fraction", s.report.out_of_hull_fraction},
                    {"mean_distance", s.report.mean_distance},
                    {"max_distance", s.report.max_distance}}
                  .dump()
           << '\n';
    }
    os << ojson{{"type", "summary"},
                {"split", split},
                {"scenes", scenes.size()},
                {"tolerance", tolerance},
                {"out_of_hull_fraction", out_of_hull_fraction},
                {"mean_distance", mean_distance},
                {"max_distance", max_distance}}
              .dump()
       << '\n';
    return os.str();
}

std::string DatasetHull::to_table() const {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "split: %s   scenes: %zu   tol: %g\n", split.c_str(), scenes.size(), tolerance);
    os << line;
    std::snprintf(line, sizeof line, "%-14s %12s %12s %12s\n", "scene", "out_frac", "mean_dist", "max_dist");
    os << line;
    auto row = [&](const std::string& name, double f, double m, double x) {
        std::snprintf(line, sizeof line, "%-14s %12.6f %12.6f %12.6f\n", name.c_str(), f, m, x);
        os << line;
    };
    for (const auto& s : scenes)
        row(s.id, s.report.out_of_hull_fraction, s.report.mean_distance, s.report.max_distance);
    row("all", out_of_hull_fraction, mean_distance, max_distance);
    return os.str();
}

DatasetHull analyze_dataset_hull(const std::filesystem::path& dataset, const std::string& split, double tol,
                                 const std::optional<std::filesystem::path>& map_dir, std::size_t threads) {
    if (!(tol >= 0.0)) throw ConfigError("hull tolerance must be non-negative");
    const std::vector<LoadedScene> scenes = load_split(dataset, split);
    DatasetHull out;
    out.split = split;
    out.tolerance = tol;
    out.scenes.resize(scenes.size());
    if (map_dir) std::filesystem::create_directories(*map_dir);
    parallel_for(scenes.size(), threads, [&](std::size_t i) {
        out.scenes[i] = {scenes[i].id, analyze_hull(scenes[i].presets, scenes[i].gt, tol)};
        if (map_dir) write_distance_map(*map_dir / (scenes[i].id + "_distance.png"), out.scenes[i].report);
    });
    std::size_t pixels = 0, outside = 0;
    double dist = 0.0;
    for (const auto& s : out.scenes) {
        for (double d : s.report.distances) {
            dist += d;
            if (d > tol) ++outside;
        }
        pixels += s.report.distances.size();
        out.max_distance = std::max(out.max_distance, s.report.max_distance);
    }
    if (pixels) {
        out.out_of_hull_fraction = static_cast<double>(outside) / static_cast<double>(pixels);
        out.mean_distance = dist / static_cast<double>(pixels);
    }
    return out;
}

}  // namespace wbf
