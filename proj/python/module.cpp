/* Copyright 2026 The attnseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Python bindings. Configs and reports cross the boundary as JSON text; the
// package wrapper converts them to and from dicts.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "attnseg/attention.hpp"
#include "attnseg/config.hpp"
#include "attnseg/dataset.hpp"
#include "attnseg/error.hpp"
#include "attnseg/metrics.hpp"
#include "attnseg/model.hpp"
#include "attnseg/pipeline.hpp"
#include "attnseg/trainer.hpp"

namespace py = pybind11;
using namespace attnseg;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor ToTensor(const Array& a) {
  if (a.ndim() != 4) throw ShapeError("expected an (N,C,H,W) array");
  const Shape s{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                static_cast<int>(a.shape(2)), static_cast<int>(a.shape(3))};
  return Tensor::FromData(s, std::vector<double>(a.data(), a.data() + a.size()));
}

Array ToArray(const Tensor& t) {
  const Shape& s = t.shape();
  Array out({s.n, s.c, s.h, s.w});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::array_t<bool> MaskArray(const Mask& m) {
  py::array_t<bool> out({m.height, m.width});
  auto* p = out.mutable_data();
  for (std::size_t i = 0; i < m.bits.size(); ++i) p[i] = m.bits[i] != 0;
  return out;
}

Mask ToMask(const py::array_t<bool, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw ShapeError("expected an (H,W) mask");
  Mask m(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  for (py::ssize_t i = 0; i < a.size(); ++i) m.bits[i] = a.data()[i] ? 1 : 0;
  return m;
}

py::tuple BoxTuple(const Box& b) { return py::make_tuple(b.x_min, b.y_min, b.x_max, b.y_max); }

Box ToBox(const std::array<int, 4>& b) { return {b[0], b[1], b[2], b[3]}; }

py::list DetectionList(const std::vector<Detection>& dets) {
  py::list out;
  for (const Detection& d : dets) {
    py::dict item;
    item["confidence"] = d.confidence;
    item["box"] = BoxTuple(d.box);
    item["mask"] = MaskArray(d.mask);
    out.append(item);
  }
  return out;
}

std::vector<LabelledImage> LoadNamedSplit(const std::filesystem::path& dir,
                                          const std::string& split) {
  const Manifest m = LoadManifest(dir);
  if (split != "train" && split != "test") throw ConfigError("split must be train or test");
  return LoadSplit(dir, split == "train" ? m.train : m.test);
}

}  // namespace

PYBIND11_MODULE(_attnseg, m) {
  m.doc() = "Attention-augmented instance segmentation core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<DegeneratePolygonError>(m, "DegeneratePolygonError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<CheckpointError>(m, "CheckpointError", base.ptr());

  m.def(
      "attention",
      [](const Array& x, const std::string& kind, std::uint64_t seed, bool zero, int heads,
         int extent) {
        const Tensor t = ToTensor(x);
        AttentionConfig cfg;
        cfg.kind = ParseAttentionKind(kind);
        cfg.channels = t.shape().c;
        cfg.height = t.shape().h;
        cfg.width = t.shape().w;
        cfg.mhsa_heads = heads;
        cfg.mhsa_extent = extent;
        cfg.Validate();
        Pcg32 rng(seed, 0);
        const AttentionParams p = zero ? ZeroAttentionParams(cfg) : InitAttentionParams(cfg, rng);
        return ToArray(ApplyAttention(t, p, cfg));
      },
      py::arg("x"), py::arg("kind"), py::arg("seed") = 0, py::arg("zero") = false,
      py::arg("heads") = 4, py::arg("extent") = 0);

  py::class_<TrainingState>(m, "Model")
      .def(py::init([](const std::string& config_json, std::uint64_t seed) {
             ModelConfig cfg = ModelConfigFromJson(nlohmann::json::parse(config_json));
             return StartTraining(BuildModel(cfg, seed), TrainConfig{});
           }),
           py::arg("config_json") = "{}", py::arg("seed") = 0)
      .def_static("load", &LoadCheckpoint, py::arg("path"))
      .def("save", [](const TrainingState& s, const std::filesystem::path& p) { SaveCheckpoint(p, s); })
      .def_property_readonly("parameter_count",
                             [](const TrainingState& s) { return s.model.ParameterCount(); })
      .def_property_readonly("variant", [](const TrainingState& s) { return VariantName(s.model.config); })
      .def_property_readonly("epoch", [](const TrainingState& s) { return s.epoch; })
      .def_property_readonly("config_json",
                             [](const TrainingState& s) { return ToJson(s.model.config).dump(); })
      .def("forward", [](const TrainingState& s, const Array& x) {
        return ToArray(Forward(s.model, ToTensor(x)));
      })
      .def(
          "predict",
          [](const TrainingState& s, const Array& x, std::optional<double> tau) {
            const Tensor prob = Forward(s.model, ToTensor(x));
            const Shape& sh = prob.shape();
            const std::size_t plane = static_cast<std::size_t>(sh.h) * sh.w;
            py::list out;
            for (int n = 0; n < sh.n; ++n) {
              out.append(DetectionList(ExtractInstances(
                  prob.data().subspan(n * plane, plane), sh.w, sh.h,
                  tau.value_or(s.model.config.instance_threshold), n)));
            }
            return out;
          },
          py::arg("x"), py::arg("tau") = py::none())
      .def(
          "train",
          [](TrainingState& s, const std::filesystem::path& data, const std::string& train_json,
             int epochs) {
            TrainConfig cfg = TrainConfigFromJson(nlohmann::json::parse(train_json), s.config);
            if (epochs > 0) cfg.epochs = s.epoch + epochs;
            cfg.Validate();
            // A fresh model takes the shuffle stream of its first training config.
            if (s.epoch == 0) s = StartTraining(s.model, cfg);
            s.config = cfg;
            const auto items = LoadNamedSplit(data, "train");
            py::gil_scoped_release release;
            return FormatTrainingLog(Train(s, items, cfg.epochs));
          },
          py::arg("data_dir"), py::arg("train_json") = "{}", py::arg("epochs") = 0)
      .def(
          "evaluate",
          [](const TrainingState& s, const std::filesystem::path& data, const std::string& split,
             double iou, std::optional<double> tau) {
            const auto items = LoadNamedSplit(data, split);
            const EvalReport r =
                EvaluateModel(s.model, items, iou, tau.value_or(s.model.config.instance_threshold));
            return ReportToJson(r, "{}");
          },
          py::arg("data_dir"), py::arg("split") = "test", py::arg("iou") = 0.5,
          py::arg("tau") = py::none());

  m.def(
      "generate_dataset",
      [](const std::filesystem::path& out, const std::string& gen_json) {
        GenConfig cfg = GenConfigFromJson(nlohmann::json::parse(gen_json));
        const Manifest man = GenerateDataset(cfg, out);
        return py::make_tuple(man.train, man.test);
      },
      py::arg("out_dir"), py::arg("gen_json") = "{}");

  m.def(
      "rasterize_polygon",
      [](const std::vector<std::pair<double, double>>& pts, int width, int height) {
        Polygon poly;
        for (const auto& [x, y] : pts) poly.push_back({x, y});
        return MaskArray(RasterizePolygon(poly, width, height));
      },
      py::arg("points"), py::arg("width"), py::arg("height"));

  m.def("iou_box", [](const std::array<int, 4>& a, const std::array<int, 4>& b) {
    return IouBox(ToBox(a), ToBox(b));
  });
  m.def("iou_mask", [](const py::array_t<bool, py::array::c_style | py::array::forcecast>& a,
                       const py::array_t<bool, py::array::c_style | py::array::forcecast>& b) {
    return IouMask(ToMask(a), ToMask(b));
  });
  m.def("fbeta", &FBeta, py::arg("precision"), py::arg("recall"), py::arg("beta") = 1.0);
  m.def("dataset_iou", &DatasetIou, py::arg("tp"), py::arg("fp"), py::arg("fn"));
  m.def(
      "average_precision",
      [](const std::vector<std::pair<double, bool>>& ranked, long total) {
        std::vector<RankedDetection> dets;
        for (const auto& [conf, tp] : ranked) {
          dets.push_back({conf, tp, 0, static_cast<int>(dets.size())});
        }
        return AveragePrecision(std::move(dets), total);
      },
      py::arg("ranked"), py::arg("total_ground_truths"));

  m.def("gradcheck_blocks", &GradCheckBlocks);
  m.def(
      "gradcheck",
      [](const std::string& block, std::uint64_t seed) {
        const GradCheckResult r = RunBlockGradCheck(block, seed);
        return py::make_tuple(r.max_rel_error, r.checked, r.skipped);
      },
      py::arg("block"), py::arg("seed") = 0);
}
