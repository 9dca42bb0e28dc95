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

#include "attnseg/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "attnseg/attention.hpp"
#include "attnseg/error.hpp"
#include "attnseg/trainer.hpp"

namespace attnseg {

std::vector<GroundTruth> TruthsOf(const LabelledImage& item) {
  std::vector<GroundTruth> out;
  out.reserve(item.annotations.size());
  for (const auto& a : item.annotations) out.push_back({a.mask, a.box});
  return out;
}

TruthByImage TruthsOf(const std::vector<LabelledImage>& items) {
  TruthByImage out;
  for (const auto& item : items) out[item.id] = TruthsOf(item);
  return out;
}

DetectionsByImage PredictInstances(const Model& model, const std::vector<LabelledImage>& items,
                                   double tau) {
  DetectionsByImage out;
  for (const auto& item : items) {
    const Tensor prob = Forward(model, item.image);
    out[item.id] = ExtractInstances(prob, tau, item.id);
  }
  return out;
}

EvalReport EvaluateModel(const Model& model, const std::vector<LabelledImage>& items,
                         double iou_threshold, double tau) {
  return Evaluate(PredictInstances(model, items, tau), TruthsOf(items), iou_threshold);
}

EvalReport SelfTestReport(const std::vector<LabelledImage>& items, double iou_threshold) {
  DetectionsByImage preds;
  for (const auto& item : items) {
    auto& dets = preds[item.id];
    for (const auto& a : item.annotations) dets.push_back({a.mask, a.box, 1.0, item.id});
  }
  return Evaluate(preds, TruthsOf(items), iou_threshold);
}

namespace {

Tensor RandomTensor(Pcg32& rng, Shape shape, double lo, double hi, bool requires_grad) {
  std::vector<double> v(shape.numel());
  for (auto& x : v) x = rng.Uniform(lo, hi);
  return Tensor::FromData(shape, std::move(v), requires_grad);
}

// Scalarizes y against fixed random weights so every output element carries a
// distinct sensitivity.
Tensor Project(const Tensor& y, const Tensor& weights) { return Sum(Mul(y, weights)); }

GradCheckResult CheckAttention(AttentionConfig cfg, Shape shape, std::uint64_t seed) {
  Pcg32 rng(seed, 7);
  cfg.channels = shape.c;
  cfg.height = shape.h;
  cfg.width = shape.w;
  AttentionParams p = InitAttentionParams(cfg, rng);
  Tensor x = RandomTensor(rng, shape, -1.0, 1.0, true);
  Tensor r = RandomTensor(rng, shape, -1.0, 1.0, false);
  std::vector<Tensor> leaves{x};
  for (auto& [name, t] : p.tensors) leaves.push_back(t);
  return GradCheck([&] { return Project(ApplyAttention(x, p, cfg), r); }, leaves);
}

GradCheckResult CheckC2f(std::uint64_t seed) {
  Pcg32 rng(seed, 7);
  const Shape shape{1, 8, 6, 6};
  std::map<std::string, Tensor> params;
  const auto shapes = C2fParamShapes(shape.c, 2, "");
  for (const auto& [name, s] : shapes) {
    const std::string layer = name.substr(0, name.rfind('.'));
    const Shape& w = shapes.at(layer + ".weight");
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.c * w.h * w.w));
    params[name] = RandomTensor(rng, s, -bound, bound, true);
  }
  Tensor x = RandomTensor(rng, shape, -1.0, 1.0, true);
  Tensor r = RandomTensor(rng, shape, -1.0, 1.0, false);
  std::vector<Tensor> leaves{x};
  for (auto& [name, t] : params) leaves.push_back(t);
  return GradCheck([&] { return Project(C2fBlock(x, params, "", 2), r); }, leaves);
}

GradCheckResult CheckLoss(std::uint64_t seed) {
  Pcg32 rng(seed, 7);
  Tensor p = RandomTensor(rng, {1, 1, 4, 4}, 0.05, 0.95, true);
  std::vector<double> g(16);
  for (auto& v : g) v = rng.Uniform() < 0.5 ? 1.0 : 0.0;
  const Tensor target = Tensor::FromData({1, 1, 4, 4}, std::move(g));
  std::vector<Tensor> leaves{p};
  return GradCheck([&] { return SegLoss(p, target); }, leaves);
}

GradCheckResult CheckModel(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.base_width = 4;
  cfg.depth = 2;
  cfg.input_size = 16;
  cfg.attention.kind = AttentionKind::kDual;
  cfg.attention.mhsa_heads = 2;
  cfg.use_c2f = true;
  cfg.c2f_bottlenecks = 1;
  Model model = BuildModel(cfg, seed);
  Pcg32 rng(seed, 7);
  const Tensor x = RandomTensor(rng, {2, 3, 16, 16}, 0.0, 1.0, false);
  std::vector<double> g(2 * 16 * 16);
  for (auto& v : g) v = rng.Uniform() < 0.3 ? 1.0 : 0.0;
  const Tensor target = Tensor::FromData({2, 1, 16, 16}, std::move(g));
  std::vector<Tensor> leaves = model.ParameterList();
  // A random slice of 64 parameter elements.
  std::vector<ProbeSite> sites;
  std::size_t total = 0;
  for (const auto& t : leaves) total += t.numel();
  for (int i = 0; i < 64; ++i) {
    auto flat = static_cast<std::size_t>(rng.UniformInt(0, static_cast<int>(total) - 1));
    std::size_t leaf = 0;
    while (flat >= leaves[leaf].numel()) flat -= leaves[leaf++].numel();
    sites.push_back({leaf, flat});
  }
  return GradCheck([&] { return SegLoss(Forward(model, x), target); }, leaves, 1e-4, sites);
}

}  // namespace

const std::vector<std::string>& GradCheckBlocks() {
  static const std::vector<std::string> blocks = {"coord", "cbam",  "mhsa", "mhsa-local",
                                                  "dual",  "c2f",   "loss", "model"};
  return blocks;
}

double GradCheckTolerance(std::string_view block) { return block == "model" ? 1e-4 : 1e-5; }

GradCheckResult RunBlockGradCheck(std::string_view block, std::uint64_t seed) {
  AttentionConfig cfg;
  if (block == "coord") {
    cfg.kind = AttentionKind::kCoord;
    return CheckAttention(cfg, {1, 4, 5, 6}, seed);
  }
  if (block == "cbam") {
    cfg.kind = AttentionKind::kCbam;
    return CheckAttention(cfg, {1, 4, 6, 6}, seed);
  }
  if (block == "mhsa" || block == "mhsa-local") {
    cfg.kind = AttentionKind::kMhsa;
    cfg.mhsa_heads = 2;
    cfg.mhsa_extent = block == "mhsa" ? 0 : 3;
    return CheckAttention(cfg, {1, 4, 5, 5}, seed);
  }
  if (block == "dual") {
    cfg.kind = AttentionKind::kDual;
    cfg.mhsa_heads = 2;
    return CheckAttention(cfg, {1, 4, 5, 5}, seed);
  }
  if (block == "c2f") return CheckC2f(seed);
  if (block == "loss") return CheckLoss(seed);
  if (block == "model") return CheckModel(seed);
  throw ConfigError("unknown gradcheck block '" + std::string(block) + "'");
}

}  // namespace attnseg
