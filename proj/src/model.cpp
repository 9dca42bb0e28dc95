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

#include "attnseg/model.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

#include "attnseg/error.hpp"
#include "attnseg/rng.hpp"

namespace attnseg {

namespace {

using SpecMap = std::map<std::string, ParamSpec>;

// Weights of convs feeding a ReLU get the He-uniform gain sqrt(6).
void AddConv(SpecMap& specs, const std::string& name, int out, int in, int k,
             bool relu = true) {
  specs[name + ".weight"] = {{out, in, k, k}, in * k * k, relu ? std::sqrt(6.0) : 1.0};
  specs[name + ".bias"] = {{1, out, 1, 1}, in * k * k};
}

void AddC2f(SpecMap& specs, int channels, int bottlenecks, const std::string& prefix) {
  const int half = channels / 2;
  AddConv(specs, prefix + "cv1", channels, channels, 1, false);
  for (int i = 0; i < bottlenecks; ++i) {
    const std::string m = prefix + "m" + std::to_string(i) + ".";
    AddConv(specs, m + "cv1", half, half, 3);
    AddConv(specs, m + "cv2", half, half, 3, false);
  }
  AddConv(specs, prefix + "cv2", channels, (2 + bottlenecks) * half, 1, false);
}

std::string StagePrefix(int s) { return "stage" + std::to_string(s) + "."; }
std::string AttentionBPrefix(int i) { return "attn_b" + std::to_string(i) + "."; }

SpecMap Specs(const ModelConfig& cfg) {
  cfg.Validate();
  SpecMap specs;
  const int b = cfg.base_width;
  AddConv(specs, "stem", b, cfg.in_channels, 3);
  for (int s = 1; s <= cfg.depth; ++s) {
    const int in = b << (s - 1);
    const int out = b << s;
    const std::string prefix = StagePrefix(s);
    AddConv(specs, prefix + "down", out, in, 3);
    if (cfg.use_c2f) {
      AddC2f(specs, out, cfg.c2f_bottlenecks, prefix + "c2f.");
    } else {
      AddConv(specs, prefix + "conv1", out, out, 3);
      AddConv(specs, prefix + "conv2", out, out, 3);
    }
  }
  for (int s = cfg.depth; s >= 1; --s) {
    const int in = b << s;
    AddConv(specs, "head" + std::to_string(s), in / 2, in, 3);
  }
  AddConv(specs, "out", 1, b, 1, false);

  const AttentionConfig attn = cfg.ResolvedAttention();
  auto merge = [&](const AttentionConfig& c, const std::string& prefix) {
    specs.merge(AttentionParamSpecs(c, prefix));
  };
  switch (attn.kind) {
    case AttentionKind::kNone:
      break;
    case AttentionKind::kCbam:
      merge(attn, "attn_a.");
      break;
    case AttentionKind::kCoord:
    case AttentionKind::kDual:
      merge(attn, AttentionBPrefix(0));
      break;
    case AttentionKind::kMhsa:
      for (int i = 0; i < cfg.attention_repeats; ++i) merge(attn, AttentionBPrefix(i));
      break;
  }
  return specs;
}

Tensor ConvLayer(const Tensor& x, const std::map<std::string, Tensor>& params,
                 const std::string& name, int stride, int pad) {
  return Conv2d(x, params.at(name + ".weight"), params.at(name + ".bias"), stride, pad);
}

AttentionParams ViewAttention(const std::map<std::string, Tensor>& params,
                              const std::string& prefix) {
  AttentionParams view;
  view.prefix = prefix;
  for (auto it = params.lower_bound(prefix); it != params.end() && it->first.starts_with(prefix);
       ++it) {
    view.tensors.insert(*it);
  }
  return view;
}

}  // namespace

AttentionConfig ModelConfig::ResolvedAttention() const {
  AttentionConfig resolved = attention;
  resolved.channels = DeepWidth();
  resolved.height = DeepSize();
  resolved.width = DeepSize();
  return resolved;
}

void ModelConfig::Validate() const {
  if (in_channels < 1) throw ConfigError("model: in_channels must be >= 1");
  if (base_width < 1) throw ConfigError("model: base_width must be >= 1");
  if (depth < 1 || depth > 8) throw ConfigError("model: depth must be in [1, 8]");
  if (input_size < 1 || input_size % (1 << depth) != 0) {
    throw ConfigError("model: input size " + std::to_string(input_size) +
                      " not divisible by 2^depth = " + std::to_string(1 << depth));
  }
  if (use_c2f) {
    if (c2f_bottlenecks < 1) throw ConfigError("model: c2f needs at least one bottleneck");
    if ((base_width << 1) % 2 != 0) throw ConfigError("model: c2f needs even widths");
  }
  if (attention_repeats < 1) throw ConfigError("model: attention repeats must be >= 1");
  if (!(instance_threshold > 0.0 && instance_threshold < 1.0)) {
    throw ConfigError("model: instance threshold must lie in (0,1)");
  }
  ResolvedAttention().Validate();
}

bool ModelConfig::operator==(const ModelConfig& o) const {
  const AttentionConfig& a = attention;
  const AttentionConfig& b = o.attention;
  return in_channels == o.in_channels && base_width == o.base_width && depth == o.depth &&
         input_size == o.input_size && a.kind == b.kind &&
         a.coord_reduction == b.coord_reduction && a.cbam_reduction == b.cbam_reduction &&
         a.mhsa_heads == b.mhsa_heads && a.mhsa_extent == b.mhsa_extent &&
         attention_repeats == o.attention_repeats && use_c2f == o.use_c2f &&
         c2f_bottlenecks == o.c2f_bottlenecks && instance_threshold == o.instance_threshold;
}

std::size_t Model::ParameterCount() const {
  std::size_t total = 0;
  for (const auto& [name, t] : params) total += t.numel();
  return total;
}

std::vector<Tensor> Model::ParameterList() const {
  std::vector<Tensor> list;
  list.reserve(params.size());
  for (const auto& [name, t] : params) list.push_back(t);
  return list;
}

std::map<std::string, Shape> ModelParamShapes(const ModelConfig& cfg) {
  std::map<std::string, Shape> shapes;
  for (const auto& [name, spec] : Specs(cfg)) shapes[name] = spec.shape;
  return shapes;
}

std::map<std::string, Shape> C2fParamShapes(int channels, int bottlenecks,
                                            const std::string& prefix) {
  SpecMap specs;
  AddC2f(specs, channels, bottlenecks, prefix);
  std::map<std::string, Shape> shapes;
  for (const auto& [name, spec] : specs) shapes[name] = spec.shape;
  return shapes;
}

Model BuildModel(const ModelConfig& cfg, std::uint64_t seed) {
  Model model;
  model.config = cfg;
  Pcg32 rng(seed, 0);
  for (const auto& [name, spec] : Specs(cfg)) {
    const double bound = spec.gain / std::sqrt(static_cast<double>(spec.fan_in));
    std::vector<double> values(spec.shape.numel());
    for (double& v : values) v = rng.Uniform(-bound, bound);
    model.params[name] = Tensor::FromData(spec.shape, std::move(values), true);
  }
  return model;
}

std::size_t PlainParameterCount(int in_channels, int base_width, int depth) {
  // conv(k, in, out) contributes k*k*in*out + out.
  auto conv = [](std::size_t k, std::size_t in, std::size_t out) { return k * k * in * out + out; };
  const std::size_t b = base_width;
  std::size_t total = conv(3, in_channels, b);
  for (int s = 1; s <= depth; ++s) {
    const std::size_t w = b << s;
    total += conv(3, w / 2, w) + 2 * conv(3, w, w);
    total += conv(3, w, w / 2);  // the matching head step
  }
  return total + conv(1, b, 1);
}

Tensor C2fBlock(const Tensor& x, const std::map<std::string, Tensor>& params,
                const std::string& prefix, int bottlenecks) {
  const Shape s = x.shape();
  if (s.c % 2 != 0) {
    throw ShapeError("c2f: channel count must be even, got " + std::to_string(s.c));
  }
  const int half = s.c / 2;
  Tensor y = ConvLayer(x, params, prefix + "cv1", 1, 0);
  auto halves = Split(y, Axis::kChannel, {half, half});
  std::vector<Tensor> outputs{halves[0], halves[1]};
  Tensor current = halves[1];
  for (int i = 0; i < bottlenecks; ++i) {
    const std::string m = prefix + "m" + std::to_string(i) + ".";
    Tensor t = Relu(ConvLayer(current, params, m + "cv1", 1, 1));
    current = Add(current, ConvLayer(t, params, m + "cv2", 1, 1));
    outputs.push_back(current);
  }
  return ConvLayer(Concat(outputs, Axis::kChannel), params, prefix + "cv2", 1, 0);
}

Tensor ForwardLogits(const Model& model, const Tensor& batch) {
  const ModelConfig& cfg = model.config;
  const Shape s = batch.shape();
  if (s.c != cfg.in_channels) {
    throw ShapeError("forward: expected " + std::to_string(cfg.in_channels) +
                     " input channels, got " + s.str());
  }
  const int step = 1 << cfg.depth;
  if (s.h < step || s.w < step || s.h % step != 0 || s.w % step != 0) {
    throw ShapeError("forward: spatial extents of " + s.str() + " must be divisible by " +
                     std::to_string(step));
  }
  const AttentionConfig attn = cfg.ResolvedAttention();
  const bool needs_size = attn.kind == AttentionKind::kMhsa || attn.kind == AttentionKind::kDual;
  if (needs_size && (s.h != cfg.input_size || s.w != cfg.input_size)) {
    throw ShapeError("forward: self-attention model built for " +
                     std::to_string(cfg.input_size) + "x" + std::to_string(cfg.input_size) +
                     " input, got " + s.str());
  }
  const auto& p = model.params;
  Tensor x = Relu(ConvLayer(batch, p, "stem", 1, 1));
  for (int stage = 1; stage <= cfg.depth; ++stage) {
    const std::string prefix = StagePrefix(stage);
    x = Relu(ConvLayer(x, p, prefix + "down", 2, 1));
    if (cfg.use_c2f) {
      x = C2fBlock(x, p, prefix + "c2f.", cfg.c2f_bottlenecks);
    } else {
      x = Relu(ConvLayer(x, p, prefix + "conv1", 1, 1));
      x = Relu(ConvLayer(x, p, prefix + "conv2", 1, 1));
    }
  }
  // Insertion point A: end of the backbone.
  if (attn.kind == AttentionKind::kCbam) x = CbamBlock(x, ViewAttention(p, "attn_a."));
  // Insertion point B: head entry.
  if (attn.kind == AttentionKind::kCoord || attn.kind == AttentionKind::kDual) {
    x = ApplyAttention(x, ViewAttention(p, AttentionBPrefix(0)), attn);
  } else if (attn.kind == AttentionKind::kMhsa) {
    for (int i = 0; i < cfg.attention_repeats; ++i) {
      x = SelfAttention2d(x, ViewAttention(p, AttentionBPrefix(i)), attn);
    }
  }
  for (int stage = cfg.depth; stage >= 1; --stage) {
    x = Relu(ConvLayer(UpsampleNearest2x(x), p, "head" + std::to_string(stage), 1, 1));
  }
  return ConvLayer(x, p, "out", 1, 0);
}

Tensor Forward(const Model& model, const Tensor& batch) {
  return Sigmoid(ForwardLogits(model, batch));
}

std::vector<Detection> ExtractInstances(std::span<const double> prob, int width, int height,
                                        double tau, int image_id) {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("extract_instances: tau must lie in (0,1)");
  if (prob.size() != static_cast<std::size_t>(width) * height) {
    throw ShapeError("extract_instances: map size does not match " + std::to_string(width) +
                     "x" + std::to_string(height));
  }
  std::vector<int> label(prob.size(), -1);
  std::vector<Detection> found;
  std::queue<int> frontier;
  for (int start = 0; start < static_cast<int>(prob.size()); ++start) {
    if (label[start] >= 0 || !(prob[start] > tau)) continue;
    const int id = static_cast<int>(found.size());
    Detection det;
    det.mask = Mask(width, height);
    det.image_id = image_id;
    double total = 0.0;
    long count = 0;
    label[start] = id;
    frontier.push(start);
    while (!frontier.empty()) {
      const int idx = frontier.front();
      frontier.pop();
      const int x = idx % width;
      const int y = idx / width;
      det.mask.set(x, y);
      total += prob[idx];
      ++count;
      const int neighbours[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
      for (const auto& nb : neighbours) {
        if (nb[0] < 0 || nb[0] >= width || nb[1] < 0 || nb[1] >= height) continue;
        const int j = nb[1] * width + nb[0];
        if (label[j] < 0 && prob[j] > tau) {
          label[j] = id;
          frontier.push(j);
        }
      }
    }
    det.box = BoundingBox(det.mask);
    det.confidence = total / static_cast<double>(count);
    found.push_back(std::move(det));
  }
  std::stable_sort(found.begin(), found.end(), [](const Detection& a, const Detection& b) {
    return a.confidence > b.confidence;
  });
  return found;
}

std::vector<Detection> ExtractInstances(const Tensor& prob, double tau, int image_id) {
  const Shape s = prob.shape();
  if (s.n != 1 || s.c != 1) {
    throw ShapeError("extract_instances: expected a (1,1,H,W) map, got " + s.str());
  }
  return ExtractInstances(prob.data(), s.w, s.h, tau, image_id);
}

}  // namespace attnseg
