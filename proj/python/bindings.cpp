// SPDX-License-Identifier: Apache-2.0
// Python bindings. Images cross the boundary as float64 arrays of shape (H, W, 3).
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <cstring>

#include "wbfuse/harness.hpp"

namespace py = pybind11;
using namespace wbf;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

ImageRGB to_image(const Array& a) {
    if (a.ndim() != 3 || a.shape(2) != 3)
        throw std::invalid_argument("expected an image array of shape (H, W, 3)");
    ImageRGB img(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::memcpy(img.data().data(), a.data(), img.data().size() * sizeof(double));
    return img;
}

Array to_array(const ImageRGB& img) {
    Array a({img.height(), img.width(), std::size_t{3}});
    std::copy(img.data().begin(), img.data().end(), a.mutable_data());
    return a;
}

Array to_array(const std::vector<double>& v, std::vector<std::size_t> shape) {
    Array a(shape);
    std::copy(v.begin(), v.end(), a.mutable_data());
    return a;
}

PresetStack to_stack(const std::vector<Array>& presets) {
    if (presets.size() != kPresetCount)
        throw std::invalid_argument("expected " + std::to_string(kPresetCount) + " preset images, got " +
                                    std::to_string(presets.size()));
    PresetStack s;
    for (std::size_t i = 0; i < kPresetCount; ++i) s.presets[i] = to_image(presets[i]);
    s.validate();
    return s;
}

py::list from_stack(const PresetStack& s) {
    py::list out;
    for (const auto& p : s.presets) out.append(to_array(p));
    return out;
}

py::dict summary_dict(const Summary& s) {
    py::dict d;
    d["mean"] = s.mean;
    d["median"] = s.median;
    d["trimean"] = s.trimean;
    d["q1"] = s.q1;
    d["q3"] = s.q3;
    return d;
}

py::dict hull_dict(const HullReport& r) {
    py::dict d;
    d["tolerance"] = r.tolerance;
    d["out_of_hull_fraction"] = r.out_of_hull_fraction;
    d["mean_distance"] = r.mean_distance;
    d["max_distance"] = r.max_distance;
    d["distances"] = to_array(r.distances, {r.height, r.width});
    return d;
}

py::dict manifest_dict(const DatasetManifest& m) {
    py::dict d;
    d["scenes"] = m.scenes;
    d["height"] = m.height;
    d["width"] = m.width;
    d["seed"] = m.seed;
    d["splits"] = m.splits;
    return d;
}

struct Model {
    ModelConfig config;
    ModelParams<float> params;
};

ModelConfig make_config(std::uint32_t presets, std::uint32_t channels, std::uint32_t heads, float expansion) {
    ModelConfig c{presets, channels, heads, expansion};
    c.validate();
    return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "White-balance preset fusion";
    m.attr("__version__") = WBF_VERSION;
    m.attr("PRESET_NAMES") = std::vector<std::string>(kPresetNames.begin(), kPresetNames.end());

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.def("srgb_to_lab", [](std::array<double, 3> rgb) {
        const LabColor lab = srgb_to_lab(std::span<const double, 3>(rgb));
        return std::array<double, 3>{lab.L, lab.a, lab.b};
    });
    m.def("delta_e_2000_lab", [](std::array<double, 3> x, std::array<double, 3> y) {
        return delta_e_2000(LabColor{x[0], x[1], x[2]}, LabColor{y[0], y[1], y[2]});
    });
    m.def("delta_e_2000", [](const Array& img, const Array& gt) { return delta_e_2000(to_image(img), to_image(gt)); },
          "Mean CIEDE2000 between two sRGB images.");
    m.def("delta_e_2000_map", [](const Array& img, const Array& gt) {
        const ImageRGB a = to_image(img);
        return to_array(delta_e_2000_map(a, to_image(gt)), {a.height(), a.width()});
    });
    m.def("mse", [](const Array& img, const Array& gt) { return mse(to_image(img), to_image(gt)); });
    m.def("mae_angular", [](const Array& img, const Array& gt) { return mae_angular(to_image(img), to_image(gt)); });
    m.def("aggregate", [](const std::vector<double>& v) { return summary_dict(aggregate(v)); });

    m.def("project_to_simplex", [](const std::vector<double>& v) { return project_to_simplex(v); });
    m.def("fit_pixel_weights", [](const std::vector<std::array<double, 3>>& presets, std::array<double, 3> target) {
        std::vector<Rgb> p(presets.begin(), presets.end());
        const PixelFit f = fit_pixel_weights(p, Rgb(target));
        return py::make_tuple(f.weights, f.residual);
    });
    m.def("oracle_blend", [](const std::vector<Array>& presets, const Array& gt) {
        const PresetStack s = to_stack(presets);
        BlendResult r;
        {
            const ImageRGB g = to_image(gt);
            py::gil_scoped_release release;
            r = oracle_blend(s, g);
        }
        py::dict d;
        d["image"] = to_array(r.image);
        d["weights"] = to_array(r.weights.values, {r.weights.height, r.weights.width, r.weights.presets});
        d["residuals"] = to_array(r.residuals, {r.weights.height, r.weights.width});
        return d;
    });
    m.def(
        "analyze_hull",
        [](const std::vector<Array>& presets, const Array& gt, double tol) {
            return hull_dict(analyze_hull(to_stack(presets), to_image(gt), tol));
        },
        py::arg("presets"), py::arg("gt"), py::arg("tol") = kDefaultHullTolerance);

    m.def(
        "render_scene",
        [](std::uint64_t seed, std::size_t height, std::size_t width, bool three_illuminants) {
            const RenderedScene r = render_scene(generate_scene(seed, height, width, {three_illuminants}));
            py::dict d;
            d["presets"] = from_stack(r.presets);
            d["gt"] = to_array(r.gt);
            d["awb"] = to_array(r.awb);
            d["clipped_pixels"] = r.clipped_pixels;
            return d;
        },
        py::arg("seed"), py::arg("height") = 64, py::arg("width") = 64, py::arg("three_illuminants") = false);
    m.def(
        "build_dataset",
        [](const std::filesystem::path& out, std::size_t n, std::size_t size, std::uint64_t seed, std::size_t threads,
           const std::string& overrides) {
            DatasetOptions o;
            o.scenes = n;
            o.height = o.width = size;
            o.seed = seed;
            o.threads = threads;
            if (!overrides.empty()) apply_overrides(o, overrides);
            DatasetManifest manifest;
            {
                py::gil_scoped_release release;
                manifest = build_dataset(o, out);
            }
            return manifest_dict(manifest);
        },
        py::arg("out"), py::arg("n") = 20, py::arg("size") = 64, py::arg("seed") = 0, py::arg("threads") = 1,
        py::arg("overrides") = "");
    m.def("read_manifest", [](const std::filesystem::path& dir) { return manifest_dict(read_manifest(dir)); });
    m.def("load_scene", [](const std::filesystem::path& dir, const std::string& id) {
        const LoadedScene s = load_scene(dir, id);
        py::dict d;
        d["id"] = s.id;
        d["presets"] = from_stack(s.presets);
        d["gt"] = to_array(s.gt);
        d["awb"] = to_array(s.awb);
        return d;
    });

    py::class_<Model>(m, "Model")
        .def(py::init([](std::uint32_t presets, std::uint32_t channels, std::uint32_t heads, float expansion,
                         std::uint64_t seed) {
                 Model model{make_config(presets, channels, heads, expansion), {}};
                 model.params = ModelParams<float>::init(model.config, seed);
                 return model;
             }),
             py::arg("preset_count") = 5, py::arg("feature_channels") = 15, py::arg("attention_heads") = 3,
             py::arg("ffn_expansion") = 2.0f, py::arg("seed") = 0)
        .def_static("load",
                    [](const std::filesystem::path& path) {
                        Model model;
                        load_checkpoint(path, model.config, model.params);
                        return model;
                    })
        .def_static("from_bytes",
                    [](const py::bytes& b) {
                        const std::string s = b;
                        Model model;
                        decode_checkpoint(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()),
                                          model.config, model.params);
                        return model;
                    })
        .def("save", [](const Model& self, const std::filesystem::path& p) { save_checkpoint(p, self.config, self.params); })
        .def("to_bytes",
             [](const Model& self) {
                 const auto bytes = encode_checkpoint(self.config, self.params);
                 return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
             })
        .def_property_readonly("param_count", [](const Model& self) { return self.params.count(); })
        .def_property_readonly("config",
                               [](const Model& self) {
                                   py::dict d;
                                   d["preset_count"] = self.config.preset_count;
                                   d["feature_channels"] = self.config.feature_channels;
                                   d["attention_heads"] = self.config.attention_heads;
                                   d["ffn_expansion"] = self.config.ffn_expansion;
                                   return d;
                               })
        .def(
            "fuse",
            [](const Model& self, const std::vector<Array>& presets) {
                const PresetStack s = to_stack(presets);
                ImageRGB out;
                {
                    py::gil_scoped_release release;
                    out = fuse(s, self.params, self.config);
                }
                return to_array(out);
            },
            "Fuses five preset renders (tungsten, fluorescent, daylight, cloudy, shade).");

    m.def(
        "train",
        [](const std::filesystem::path& dataset, const std::filesystem::path& out, std::size_t steps,
           std::uint64_t seed, std::size_t threads, const std::string& overrides) {
            TrainConfig c;
            c.dataset = dataset;
            c.out_dir = out;
            c.total_steps = steps;
            c.seed = seed;
            c.threads = threads;
            if (!overrides.empty()) apply_overrides(c, overrides);
            c.validate();
            py::gil_scoped_release release;
            return train(c).manifest.to_json();
        },
        py::arg("dataset"), py::arg("out"), py::arg("steps") = 5000, py::arg("seed") = 0, py::arg("threads") = 1,
        py::arg("overrides") = "", "Trains a model and returns the run manifest as JSON text.");
    m.def(
        "evaluate",
        [](const std::filesystem::path& dataset, const std::string& split, const std::string& method,
           const std::filesystem::path& checkpoint, std::size_t threads) {
            MetricsReport r;
            {
                py::gil_scoped_release release;
                r = evaluate({dataset, split, method, checkpoint, threads});
            }
            py::dict d;
            d["split"] = r.split;
            d["count"] = r.count();
            d["delta_e2000"] = summary_dict(r.delta_e);
            d["mse"] = summary_dict(r.mse);
            d["mae"] = summary_dict(r.mae);
            py::list images;
            for (const auto& im : r.images) {
                py::dict row;
                row["id"] = im.id;
                row["delta_e2000"] = im.delta_e;
                row["mse"] = im.mse;
                row["mae"] = im.mae;
                images.append(row);
            }
            d["images"] = images;
            return d;
        },
        py::arg("dataset"), py::arg("split") = "test", py::arg("method") = "model", py::arg("checkpoint") = "",
        py::arg("threads") = 1);
    m.def(
        "dataset_hull",
        [](const std::filesystem::path& dataset, const std::string& split, double tol) {
            DatasetHull h;
            {
                py::gil_scoped_release release;
                h = analyze_dataset_hull(dataset, split, tol, std::nullopt);
            }
            py::dict d;
            d["split"] = h.split;
            d["out_of_hull_fraction"] = h.out_of_hull_fraction;
            d["mean_distance"] = h.mean_distance;
            d["max_distance"] = h.max_distance;
            py::dict scenes;
            for (const auto& s : h.scenes) scenes[py::str(s.id)] = hull_dict(s.report);
            d["scenes"] = scenes;
            return d;
        },
        py::arg("dataset"), py::arg("split") = "test", py::arg("tol") = kDefaultHullTolerance);
}
