// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "wbfuse/color.hpp"
#include "wbfuse/linear_fusion.hpp"
#include "wbfuse/model.hpp"
#include "wbfuse/parallel.hpp"
#include "wbfuse/synth.hpp"

namespace wbf {

/// Bad flags, config keys or dataset layout; the CLI maps it to exit code 2.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
    std::filesystem::path dataset;
    std::filesystem::path out_dir;
    ModelConfig model;
    std::size_t total_steps = 5000;
    std::size_t batch_size = 2;
    std::uint64_t seed = 0;
    double lr_start = 1e-3;
    double lr_end = 1e-5;
    std::size_t val_interval = 100;
    std::string train_split = "train";
    std::string val_split = "val";
    std::size_t max_train_scenes = 0;  // 0 = whole split
    std::size_t threads = 1;

    void validate() const;
};

/// Applies JSON overrides, e.g. {"total_steps": 500, "model": {"preset_count": 3}}.
/// Unknown keys and wrong types throw ConfigError.
void apply_overrides(TrainConfig& config, const std::string& json_text);
void apply_overrides(DatasetOptions& options, const std::string& json_text);

struct ValidationPoint {
    std::size_t step = 0;  // optimizer steps completed
    double delta_e = 0.0;
};

struct RunManifest {
    TrainConfig config;
    std::string version;
    std::size_t parameter_count = 0;
    std::vector<ValidationPoint> validation;
    std::size_t selected_step = 0;
    double selected_delta_e = 0.0;
    std::vector<double> losses;  // mean batch loss per step

    std::string to_json() const;
};

struct TrainResult {
    RunManifest manifest;
    ModelParams<float> best;
};

/// Trains on the dataset and writes <out>/model.wbf, <out>/run.json and
/// <out>/train_log.jsonl. Progress lines go to `log` when non-null.
TrainResult train(const TrainConfig& config, std::ostream* log = nullptr);

/// Loads a split into memory (presets and GT as 8-bit PNG values).
std::vector<LoadedScene> load_split(const std::filesystem::path& dataset, const std::string& split);

/// Mean ΔE2000 of clamped model outputs over `scenes`.
double mean_delta_e(const std::vector<LoadedScene>& scenes, const ModelParams<float>& params,
                    const ModelConfig& config, std::size_t threads = 1);

/// Prediction methods accepted by evaluate(): "model", a preset name, "awb" or "oracle".
std::vector<std::string> baseline_methods();

struct EvalRequest {
    std::filesystem::path dataset;
    std::string split = "test";
    std::string method = "model";
    std::filesystem::path checkpoint;  // method "model" only
    std::size_t threads = 1;
};

MetricsReport evaluate(const EvalRequest& request);

/// Writes <dir>/<stem>.jsonl and <dir>/<stem>.txt.
void write_report(const MetricsReport& report, const std::filesystem::path& dir, const std::string& stem);

/// Reads five PNGs in preset order, fuses them and writes a clamped PNG.
/// Mismatched sizes throw std::invalid_argument naming the file.
ImageRGB fuse_files(const std::filesystem::path& checkpoint,
                    const std::array<std::filesystem::path, kPresetCount>& presets,
                    const std::filesystem::path& out);

struct SceneHull {
    std::string id;
    HullReport report;
};

struct DatasetHull {
    std::string split;
    double tolerance = kDefaultHullTolerance;
    std::vector<SceneHull> scenes;
    double out_of_hull_fraction = 0.0;  // over all pixels
    double mean_distance = 0.0;
    double max_distance = 0.0;

    std::string to_jsonl() const;
    std::string to_table() const;
};

/// Hull statistics per scene; distance maps go to `map_dir` when given.
DatasetHull analyze_dataset_hull(const std::filesystem::path& dataset, const std::string& split, double tol,
                                 const std::optional<std::filesystem::path>& map_dir, std::size_t threads = 1);

}  // namespace wbf
