// SPDX-License-Identifier: Apache-2.0
// Training, evaluation, fusion and hull orchestration, plus the CLI contract.
#include <gtest/gtest.h>

#include <json.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "wbfuse/harness.hpp"

using namespace wbf;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("wbf_harness_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(WBF_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string run_cli_stderr(const std::string& args) {
    const std::string cmd = std::string(WBF_CLI_PATH) + " " + args + " 2>&1 >/dev/null";
    std::string out;
    if (FILE* f = popen(cmd.c_str(), "r")) {
        char buf[256];
        while (std::fgets(buf, sizeof buf, f)) out += buf;
        pclose(f);
    }
    return out;
}

// Shared small dataset: 16x16 keeps training steps in the millisecond range.
const fs::path& small_dataset() {
    static const fs::path dir = [] {
        const fs::path d = scratch("ds");
        DatasetOptions o;
        o.scenes = 12;
        o.height = o.width = 16;
        o.seed = 5;
        o.counts = SplitCounts{6, 3, 3};
        build_dataset(o, d);
        return d;
    }();
    return dir;
}

TrainConfig small_config(const std::string& out, std::size_t steps = 40) {
    TrainConfig c;
    c.dataset = small_dataset();
    c.out_dir = scratch(out);
    c.total_steps = steps;
    c.val_interval = 10;
    c.seed = 3;
    return c;
}

}  // namespace

TEST(Config, OverridesApply) {
    TrainConfig c;
    apply_overrides(c, R"({"total_steps": 123, "batch_size": 4, "lr_start": 0.002,
                           "model": {"preset_count": 3, "feature_channels": 12}})");
    EXPECT_EQ(c.total_steps, 123u);
    EXPECT_EQ(c.batch_size, 4u);
    EXPECT_DOUBLE_EQ(c.lr_start, 0.002);
    EXPECT_EQ(c.model.preset_count, 3u);
    EXPECT_EQ(c.model.feature_channels, 12u);

    DatasetOptions o;
    apply_overrides(o, R"({"scenes": 9, "size": 32, "counts": {"train": 5, "val": 2, "test": 2}})");
    EXPECT_EQ(o.scenes, 9u);
    EXPECT_EQ(o.height, 32u);
    EXPECT_EQ(o.width, 32u);
    ASSERT_TRUE(o.counts.has_value());
    EXPECT_EQ(*o.counts, (SplitCounts{5, 2, 2}));
}

TEST(Config, RejectsUnknownKeysAndBadTypes) {
    TrainConfig c;
    EXPECT_THROW(apply_overrides(c, R"({"steps": 5})"), ConfigError);
    EXPECT_THROW(apply_overrides(c, R"({"total_steps": "many"})"), ConfigError);
    EXPECT_THROW(apply_overrides(c, R"({"model": {"depth": 2}})"), ConfigError);
    EXPECT_THROW(apply_overrides(c, "{not json"), ConfigError);
    DatasetOptions o;
    EXPECT_THROW(apply_overrides(o, R"({"brightness": "max"})"), ConfigError);
}

TEST(Config, ValidateCatchesBadValues) {
    TrainConfig c = small_config("validate");
    EXPECT_NO_THROW(c.validate());
    c.total_steps = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = small_config("validate");
    c.dataset = "/nonexistent/wbf";
    EXPECT_THROW(c.validate(), ConfigError);
    c = small_config("validate");
    c.model.preset_count = 6;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, EmptyValidationSplitIsConfigError) {
    const fs::path d = scratch("noval");
    DatasetOptions o;
    o.scenes = 4;
    o.height = o.width = 8;
    o.counts = SplitCounts{3, 0, 1};
    build_dataset(o, d);
    TrainConfig c;
    c.dataset = d;
    c.out_dir = scratch("noval_out");
    c.total_steps = 5;
    EXPECT_THROW(train(c), ConfigError);
    EXPECT_FALSE(fs::exists(c.out_dir / "model.wbf"));
}

TEST(Train, ManifestSelectsArgminAndWritesFiles) {
    const TrainConfig c = small_config("run", 45);
    const TrainResult r = train(c);
    const RunManifest& m = r.manifest;
    // Every 10 steps plus the final step.
    ASSERT_EQ(m.validation.size(), 5u);
    EXPECT_EQ(m.validation.back().step, 45u);
    const auto best = std::min_element(m.validation.begin(), m.validation.end(),
                                       [](const auto& a, const auto& b) { return a.delta_e < b.delta_e; });
    EXPECT_EQ(m.selected_step, best->step);
    EXPECT_EQ(m.selected_delta_e, best->delta_e);
    EXPECT_EQ(m.losses.size(), 45u);
    EXPECT_EQ(m.parameter_count, param_count(c.model));

    for (const char* f : {"model.wbf", "run.json", "train_log.jsonl"}) EXPECT_TRUE(fs::exists(c.out_dir / f)) << f;
    const auto j = nlohmann::json::parse(slurp(c.out_dir / "run.json"));
    EXPECT_EQ(j["selected_step"], m.selected_step);
    EXPECT_EQ(j["config"]["total_steps"], 45);
    EXPECT_EQ(j["version"], WBF_VERSION);

    // The written checkpoint is the selected one and scores what the manifest says.
    ModelConfig cfg;
    ModelParams<float> p;
    load_checkpoint(c.out_dir / "model.wbf", cfg, p);
    EXPECT_EQ(encode_checkpoint(cfg, p), encode_checkpoint(c.model, r.best));
    EXPECT_EQ(mean_delta_e(load_split(c.dataset, "val"), p, cfg), m.selected_delta_e);
}

TEST(Train, IdenticalRunsGiveIdenticalCheckpoints) {
    TrainConfig a = small_config("det_a", 30), b = small_config("det_b", 30);
    b.threads = 2;
    train(a);
    train(b);
    EXPECT_EQ(slurp(a.out_dir / "model.wbf"), slurp(b.out_dir / "model.wbf"));
    EXPECT_EQ(slurp(a.out_dir / "train_log.jsonl"), slurp(b.out_dir / "train_log.jsonl"));
}

TEST(Train, LossFallsOverTwoHundredSteps) {
    std::vector<double> first, last;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        TrainConfig c = small_config("loss", 200);
        c.seed = seed;
        c.val_interval = 200;
        const RunManifest m = train(c).manifest;
        first.push_back(m.losses.front());
        last.push_back(m.losses.back());
    }
    std::sort(first.begin(), first.end());
    std::sort(last.begin(), last.end());
    EXPECT_LT(last[2], first[2]);
}

TEST(Train, PresetSubsetsTrain) {
    for (std::size_t P : {1u, 3u}) {
        TrainConfig c = small_config("subset", 10);
        c.model.preset_count = P;
        const TrainResult r = train(c);
        ModelConfig cfg;
        ModelParams<float> p;
        load_checkpoint(c.out_dir / "model.wbf", cfg, p);
        EXPECT_EQ(cfg.preset_count, P);
    }
}

TEST(Eval, CountsAndBaselines) {
    const fs::path& d = small_dataset();
    for (const auto& method : baseline_methods()) {
        if (method == "model") continue;
        EvalRequest req{d, "test", method, {}, 1};
        const MetricsReport r = evaluate(req);
        EXPECT_EQ(r.count(), 3u) << method;
        EXPECT_GE(r.delta_e.mean, 0.0);
    }
    // The oracle blend never loses to a fixed preset.
    const double oracle = evaluate({d, "test", "oracle", {}, 1}).mse.mean;
    for (std::size_t p = 0; p < kPresetCount; ++p)
        EXPECT_LE(oracle, evaluate({d, "test", std::string(kPresetNames[p]), {}, 1}).mse.mean);
}

TEST(Eval, GroundTruthAgainstItselfIsZero) {
    std::vector<ImageMetrics> images;
    for (const auto& s : load_split(small_dataset(), "val")) images.push_back(evaluate_image(s.id, s.gt, s.gt));
    const MetricsReport r = make_report("val", images);
    EXPECT_EQ(r.count(), 3u);
    for (const Summary* s : {&r.delta_e, &r.mse}) {
        EXPECT_EQ(s->mean, 0.0);
        EXPECT_EQ(s->median, 0.0);
        EXPECT_EQ(s->trimean, 0.0);
    }
    EXPECT_NEAR(r.mae.mean, 0.0, 1e-6);
}

TEST(Eval, ModelNeedsCheckpointAndWritesReport) {
    const fs::path& d = small_dataset();
    EXPECT_THROW(evaluate({d, "test", "model", {}, 1}), std::exception);
    EXPECT_THROW(evaluate({d, "test", "sunset", {}, 1}), ConfigError);

    const TrainConfig c = small_config("evalrun", 10);
    train(c);
    const MetricsReport r = evaluate({d, "test", "model", c.out_dir / "model.wbf", 2});
    EXPECT_EQ(r.count(), 3u);
    write_report(r, c.out_dir, "model");
    std::istringstream is(slurp(c.out_dir / "model.jsonl"));
    std::size_t lines = 0;
    for (std::string line; std::getline(is, line);) ++lines;
    EXPECT_EQ(lines, 4u);
    EXPECT_TRUE(fs::exists(c.out_dir / "model.txt"));
}

TEST(Fuse, OutputMatchesInputSize) {
    const TrainConfig c = small_config("fuse", 5);
    train(c);
    const std::string id = read_manifest(c.dataset).split("test").front();
    std::array<fs::path, kPresetCount> paths;
    for (std::size_t p = 0; p < kPresetCount; ++p) paths[p] = c.dataset / id / (std::string(kPresetNames[p]) + ".png");
    const ImageRGB out = fuse_files(c.out_dir / "model.wbf", paths, c.out_dir / "fused.png");
    EXPECT_EQ(out.height(), 16u);
    EXPECT_EQ(out.width(), 16u);
    EXPECT_EQ(read_png(c.out_dir / "fused.png"), quantize8(out));
}

TEST(Fuse, SizeMismatchNamesFile) {
    const TrainConfig c = small_config("fuse_bad", 5);
    train(c);
    const std::string id = read_manifest(c.dataset).split("test").front();
    std::array<fs::path, kPresetCount> paths;
    for (std::size_t p = 0; p < kPresetCount; ++p) paths[p] = c.dataset / id / (std::string(kPresetNames[p]) + ".png");
    const fs::path odd = c.out_dir / "odd_cloudy.png";
    write_png(odd, ImageRGB(16, 12, 0.5));
    paths[3] = odd;
    try {
        fuse_files(c.out_dir / "model.wbf", paths, c.out_dir / "never.png");
        FAIL() << "expected a size error";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("odd_cloudy.png"), std::string::npos) << e.what();
    }
    EXPECT_FALSE(fs::exists(c.out_dir / "never.png"));
}

TEST(Hull, DatasetStatistics) {
    const fs::path maps = scratch("maps");
    const DatasetHull h = analyze_dataset_hull(small_dataset(), "test", kDefaultHullTolerance, maps, 2);
    ASSERT_EQ(h.scenes.size(), 3u);
    EXPECT_GT(h.out_of_hull_fraction, 0.0);
    EXPECT_LE(h.out_of_hull_fraction, 1.0);
    for (const auto& s : h.scenes) EXPECT_TRUE(fs::exists(maps / (s.id + "_distance.png"))) << s.id;

    const DatasetHull loose = analyze_dataset_hull(small_dataset(), "test", 1.0, std::nullopt);
    EXPECT_EQ(loose.out_of_hull_fraction, 0.0);

    std::istringstream is(h.to_jsonl());
    std::size_t lines = 0;
    for (std::string line; std::getline(is, line);) {
        nlohmann::json::parse(line);
        ++lines;
    }
    EXPECT_EQ(lines, 4u);
    EXPECT_NE(h.to_table().find("out_frac"), std::string::npos);
}

TEST(Hull, SingleIlluminantAtPresetScenesAreInside) {
    // A scene lit by exactly one preset renders GT equal to that preset.
    SceneSpec s = generate_scene(4, 16, 16);
    s.illuminant_a = s.illuminant_b = preset_gains()[2];
    const PresetStack stack = render_presets(s);
    const HullReport r = analyze_hull(stack, render_ground_truth(s));
    EXPECT_EQ(r.out_of_hull_fraction, 0.0);
}

TEST(Cli, ExitCodes) {
    const fs::path d = scratch("cli");
    EXPECT_EQ(run_cli("--help"), 0);
    EXPECT_EQ(run_cli(""), 2);
    EXPECT_EQ(run_cli("frobnicate"), 2);
    EXPECT_EQ(run_cli("gen-data --n 0 --out " + (d / "x").string()), 2);
    EXPECT_EQ(run_cli("gen-data --n 3 --size 4 --out " + (d / "x").string()), 2);
    EXPECT_EQ(run_cli("train --data /nonexistent/wbf --out " + (d / "r").string()), 2);
    std::ofstream(d / "bad.json") << R"({"epochs": 3})";
    EXPECT_EQ(run_cli("gen-data --n 3 --out " + (d / "x").string() + " --config " + (d / "bad.json").string()), 2);
    EXPECT_EQ(run_cli("hull --data /nonexistent/wbf"), 1);
    EXPECT_EQ(run_cli("eval --data " + small_dataset().string() + " --method model"), 2);
}

TEST(Cli, GenDataIsReproducible) {
    const fs::path d = scratch("cli_gen");
    const std::string flags = " --n 20 --size 16 --seed 7 --out ";
    ASSERT_EQ(run_cli("gen-data" + flags + (d / "a").string()), 0);
    ASSERT_EQ(run_cli("gen-data --threads 2" + flags + (d / "b").string()), 0);
    const DatasetManifest m = read_manifest(d / "a");
    EXPECT_EQ(m.split("train").size(), 13u);
    EXPECT_EQ(m.split("val").size(), 3u);
    EXPECT_EQ(m.split("test").size(), 4u);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(d / "a")) {
        if (!e.is_regular_file()) continue;
        EXPECT_EQ(slurp(e.path()), slurp(d / "b" / fs::relative(e.path(), d / "a")));
        ++files;
    }
    EXPECT_EQ(files, 1u + 20u * 8u);
}

TEST(Cli, ConfigOverridesFlags) {
    const fs::path d = scratch("cli_cfg");
    std::ofstream(d / "c.json") << R"({"scenes": 5, "counts": {"train": 3, "val": 1, "test": 1}})";
    ASSERT_EQ(run_cli("gen-data --n 20 --size 8 --out " + (d / "x").string() + " --config " + (d / "c.json").string()), 0);
    const DatasetManifest m = read_manifest(d / "x");
    EXPECT_EQ(m.scenes, 5u);
    EXPECT_EQ(m.split("train").size(), 3u);
}

TEST(Cli, FuseMismatchReportsFile) {
    const TrainConfig c = small_config("cli_fuse", 3);
    train(c);
    const std::string id = read_manifest(c.dataset).split("test").front();
    const fs::path odd = c.out_dir / "tiny.png";
    write_png(odd, ImageRGB(8, 8, 0.3));
    std::string args = "fuse --checkpoint " + (c.out_dir / "model.wbf").string() + " --out " +
                       (c.out_dir / "o.png").string();
    for (std::size_t p = 0; p < kPresetCount; ++p)
        args += " " + (p == 1 ? odd : c.dataset / id / (std::string(kPresetNames[p]) + ".png")).string();
    EXPECT_EQ(run_cli(args), 1);
    EXPECT_NE(run_cli_stderr(args).find("tiny.png"), std::string::npos);
}
