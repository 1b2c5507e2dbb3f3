// SPDX-License-Identifier: Apache-2.0
// wbfuse command-line entry point.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "wbfuse/harness.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::string read_text(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw wbf::ConfigError("cannot read config file " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
    // Feature maps are large and short-lived; recycling them from the heap
    // avoids re-faulting fresh mmap pages for every tensor.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    CLI::App app{"White-balance preset fusion toolkit"};
    app.set_version_flag("--version", std::string(WBF_VERSION));
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Render a synthetic multi-illuminant dataset");
    wbf::DatasetOptions gen_opts;
    std::string gen_out, gen_config;
    std::size_t gen_size = 64, gen_train = 0, gen_val = 0, gen_test = 0;
    bool gen_three = false;
    gen->add_option("--n", gen_opts.scenes, "Number of scenes")->check(CLI::PositiveNumber);
    gen->add_option("--size", gen_size, "Square image size in pixels")->check(CLI::Range(8, 512));
    gen->add_option("--seed", gen_opts.seed, "Dataset seed");
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--threads", gen_opts.threads, "Worker threads")->check(CLI::PositiveNumber);
    gen->add_option("--config", gen_config, "JSON file overriding flags");
    auto* train_n = gen->add_option("--train", gen_train, "Explicit training scene count");
    auto* val_n = gen->add_option("--val", gen_val, "Explicit validation scene count");
    auto* test_n = gen->add_option("--test", gen_test, "Explicit test scene count");
    train_n->needs(val_n)->needs(test_n);
    gen->add_flag("--three-illuminants", gen_three, "Light scenes with three illuminants");

    // train
    auto* tr = app.add_subcommand("train", "Train the fusion network");
    wbf::TrainConfig tcfg;
    std::string tr_data, tr_out, tr_config;
    tr->add_option("--data", tr_data, "Dataset directory")->required();
    tr->add_option("--out", tr_out, "Run output directory")->required();
    tr->add_option("--steps", tcfg.total_steps, "Optimizer steps")->check(CLI::PositiveNumber);
    tr->add_option("--batch", tcfg.batch_size, "Images per step")->check(CLI::PositiveNumber);
    tr->add_option("--seed", tcfg.seed, "Initialization and sampling seed");
    tr->add_option("--presets", tcfg.model.preset_count, "Input presets (1, 3 or 5)")->check(CLI::Range(1, 5));
    tr->add_option("--val-interval", tcfg.val_interval, "Steps between validations")->check(CLI::PositiveNumber);
    tr->add_option("--threads", tcfg.threads, "Worker threads")->check(CLI::PositiveNumber);
    tr->add_option("--config", tr_config, "JSON file overriding flags");

    // eval
    auto* ev = app.add_subcommand("eval", "Compute metrics on a dataset split");
    wbf::EvalRequest ereq;
    std::string ev_data, ev_ckpt, ev_out;
    bool ev_all = false;
    ev->add_option("--data", ev_data, "Dataset directory")->required();
    ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint");
    ev->add_option("--split", ereq.split, "Split name")->check(CLI::IsMember({"train", "val", "test"}));
    ev->add_option("--method", ereq.method, "model, a preset name, awb or oracle")
        ->check(CLI::IsMember(wbf::baseline_methods()));
    ev->add_flag("--baselines", ev_all, "Also evaluate every preset, awb and the oracle blend");
    ev->add_option("--out", ev_out, "Directory for <method>.jsonl and <method>.txt");
    ev->add_option("--threads", ereq.threads, "Worker threads")->check(CLI::PositiveNumber);

    // fuse
    auto* fu = app.add_subcommand("fuse", "Fuse five preset renders into one corrected image");
    std::string fu_ckpt, fu_out;
    std::vector<std::string> fu_inputs;
    std::size_t fu_threads = 1;
    fu->add_option("--checkpoint", fu_ckpt, "Model checkpoint")->required();
    fu->add_option("--out", fu_out, "Output PNG")->required();
    fu->add_option("inputs", fu_inputs, "Tungsten, fluorescent, daylight, cloudy and shade PNGs, in that order")
        ->required()
        ->expected(5);
    fu->add_option("--threads", fu_threads, "Worker threads (inference is single-threaded)")
        ->check(CLI::PositiveNumber);

    // hull
    auto* hu = app.add_subcommand("hull", "Measure GT distance from the preset convex hull");
    std::string hu_data, hu_split = "test", hu_out, hu_maps;
    double hu_tol = wbf::kDefaultHullTolerance;
    std::size_t hu_threads = 1;
    hu->add_option("--data", hu_data, "Dataset directory")->required();
    hu->add_option("--split", hu_split, "Split name")->check(CLI::IsMember({"train", "val", "test"}));
    hu->add_option("--tol", hu_tol, "Out-of-hull distance threshold")->check(CLI::NonNegativeNumber);
    hu->add_option("--out", hu_out, "Directory for hull.jsonl and hull.txt");
    hu->add_option("--maps", hu_maps, "Directory for per-scene distance maps");
    hu->add_option("--threads", hu_threads, "Worker threads")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (gen->parsed()) {
            gen_opts.height = gen_opts.width = gen_size;
            gen_opts.scene.three_illuminants = gen_three;
            if (*train_n) gen_opts.counts = wbf::SplitCounts{gen_train, gen_val, gen_test};
            if (!gen_config.empty()) wbf::apply_overrides(gen_opts, read_text(gen_config));
            if (gen_opts.scenes == 0) throw wbf::ConfigError("scene count must be positive");
            const auto m = wbf::build_dataset(gen_opts, gen_out);
            std::printf("wrote %zu scenes to %s (train %zu, val %zu, test %zu)\n", m.scenes, gen_out.c_str(),
                        m.split("train").size(), m.split("val").size(), m.split("test").size());
        } else if (tr->parsed()) {
            tcfg.dataset = tr_data;
            tcfg.out_dir = tr_out;
            if (!tr_config.empty()) wbf::apply_overrides(tcfg, read_text(tr_config));
            const auto result = wbf::train(tcfg, &std::cout);
            std::printf("selected step %zu, validation mean DeltaE2000 %.4f, %zu parameters\n",
                        result.manifest.selected_step, result.manifest.selected_delta_e,
                        result.manifest.parameter_count);
        } else if (ev->parsed()) {
            ereq.dataset = ev_data;
            ereq.checkpoint = ev_ckpt;
            std::vector<std::string> methods = {ereq.method};
            if (ev_all) {
                methods = wbf::baseline_methods();
                if (ev_ckpt.empty()) methods.erase(methods.begin());
            }
            for (const auto& method : methods) {
                if (method == "model" && ev_ckpt.empty()) throw wbf::ConfigError("--checkpoint is required for the model");
                wbf::EvalRequest r = ereq;
                r.method = method;
                const auto report = wbf::evaluate(r);
                std::printf("method: %s\n%s\n", method.c_str(), wbf::report_to_table(report).c_str());
                if (!ev_out.empty()) wbf::write_report(report, ev_out, method);
            }
        } else if (fu->parsed()) {
            std::array<std::filesystem::path, wbf::kPresetCount> paths;
            for (std::size_t i = 0; i < paths.size(); ++i) paths[i] = fu_inputs[i];
            const auto img = wbf::fuse_files(fu_ckpt, paths, fu_out);
            std::printf("wrote %zux%zu image to %s\n", img.width(), img.height(), fu_out.c_str());
        } else if (hu->parsed()) {
            std::optional<std::filesystem::path> maps;
            if (!hu_maps.empty()) maps = hu_maps;
            const auto hull = wbf::analyze_dataset_hull(hu_data, hu_split, hu_tol, maps, hu_threads);
            std::fputs(hull.to_table().c_str(), stdout);
            if (!hu_out.empty()) {
                std::filesystem::create_directories(hu_out);
                std::ofstream(std::filesystem::path(hu_out) / "hull.jsonl") << hull.to_jsonl();
                std::ofstream(std::filesystem::path(hu_out) / "hull.txt") << hull.to_table();
            }
        }
    } catch (const wbf::ConfigError& e) {
        std::fprintf(stderr, "wbfuse: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "wbfuse: %s\n", e.what());
        return kExitRuntime;
    }
    return 0;
}
