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

#ifndef ATTNSEG_MODEL_HPP_
#define ATTNSEG_MODEL_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "attnseg/attention.hpp"
#include "attnseg/geometry.hpp"
#include "attnseg/metrics.hpp"
#include "attnseg/tensor.hpp"

namespace attnseg {

struct ModelConfig {
  int in_channels = 3;
  int base_width = 16;
  // Number of stride-2 stages.
  int depth = 3;
  // Square input side the model is built for. Self-attention position
  // encodings are sized from it.
  int input_size = 64;
  // kind plus structural knobs; channels/height/width are filled in by
  // BuildModel from the insertion point.
  AttentionConfig attention;
  // Consecutive self-attention blocks at the head entry (mhsa only).
  int attention_repeats = 1;
  bool use_c2f = false;
  int c2f_bottlenecks = 2;
  double instance_threshold = 0.5;

  int DeepWidth() const { return base_width << depth; }
  int DeepSize() const { return input_size >> depth; }
  // Attention config resolved for the deepest feature map.
  AttentionConfig ResolvedAttention() const;
  void Validate() const;
  bool operator==(const ModelConfig& other) const;
};

// Named parameters plus the config that shaped them.
struct Model {
  ModelConfig config;
  std::map<std::string, Tensor> params;

  std::size_t ParameterCount() const;
  std::vector<Tensor> ParameterList() const;
};

// Parameter names and shapes for a config, in sorted name order.
std::map<std::string, Shape> ModelParamShapes(const ModelConfig& cfg);

// Initialises every parameter from PCG32(seed, 0), drawing in sorted name
// order. Convolution weights outside attention blocks are uniform in
// [-sqrt(6/fan_in), sqrt(6/fan_in)]; everything else in
// [-1/sqrt(fan_in), 1/sqrt(fan_in)].
// Parameters drawn from PCG32(seed, 0) in sorted name order, uniform in
// +-gain / sqrt(fan_in): gain sqrt(6) for conv weights followed by a ReLU,
// 1 for everything else.
Model BuildModel(const ModelConfig& cfg, std::uint64_t seed);

// Parameter count of the plain (no attention, no C2f) network, by formula.
std::size_t PlainParameterCount(int in_channels, int base_width, int depth);

// C2f block on `x` using parameters under `prefix` ("<prefix>cv1.weight",
// "<prefix>m<i>.cv{1,2}.weight", "<prefix>cv2.weight" and biases).
Tensor C2fBlock(const Tensor& x, const std::map<std::string, Tensor>& params,
                const std::string& prefix, int bottlenecks);
// Shapes of the C2f parameters for `channels` channels.
std::map<std::string, Shape> C2fParamShapes(int channels, int bottlenecks,
                                            const std::string& prefix);

// Logit map (N,1,H,W) before the final sigmoid.
Tensor ForwardLogits(const Model& model, const Tensor& batch);
// Probability map (N,1,H,W) in (0,1).
Tensor Forward(const Model& model, const Tensor& batch);

// Thresholds prob > tau, labels 4-connected components, and returns one
// Detection per component with confidence = mean probability over it, sorted
// by confidence (descending; ties keep discovery order).
// `prob` is a single (1,1,H,W) map or a row-major H*W buffer.
std::vector<Detection> ExtractInstances(const Tensor& prob, double tau, int image_id = 0);
std::vector<Detection> ExtractInstances(std::span<const double> prob, int width, int height,
                                        double tau, int image_id = 0);

}  // namespace attnseg

#endif  // ATTNSEG_MODEL_HPP_
