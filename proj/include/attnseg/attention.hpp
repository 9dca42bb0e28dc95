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

#ifndef ATTNSEG_ATTENTION_HPP_
#define ATTNSEG_ATTENTION_HPP_

#include <map>
#include <string>
#include <string_view>

#include "attnseg/rng.hpp"
#include "attnseg/tensor.hpp"

namespace attnseg {

enum class AttentionKind { kNone, kCoord, kCbam, kMhsa, kDual };

std::string_view ToString(AttentionKind kind);
// Accepts none|coord|cbam|mhsa|dual. Throws ConfigError otherwise.
AttentionKind ParseAttentionKind(std::string_view name);

// Structural hyperparameters of one attention block.
struct AttentionConfig {
  AttentionKind kind = AttentionKind::kNone;
  int channels = 0;
  int coord_reduction = 8;
  // 0 selects min(16, max(1, channels / 2)).
  int cbam_reduction = 0;
  int mhsa_heads = 4;
  // 0 means global attention; otherwise an odd neighbourhood side length.
  int mhsa_extent = 0;
  // Feature-map extents the position encodings are sized for.
  int height = 0;
  int width = 0;

  int EffectiveCbamReduction() const;
  int CoordHidden() const;
  int CbamHidden() const;
  int HeadDim() const { return channels / mhsa_heads; }
  // Throws ConfigError on any violated invariant.
  void Validate() const;
};

// Named parameter tensors of a block. Names are unique; iteration order is
// the sorted name order.
struct AttentionParams {
  // Prepended to every name, e.g. "head.attn0.".
  std::string prefix;
  // Full (prefixed) name -> tensor.
  std::map<std::string, Tensor> tensors;

  // Looks up prefix + name. Throws ConfigError when missing.

  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
};

// Shape and initialisation fan-in of one parameter tensor.
struct ParamSpec {
  Shape shape;
  int fan_in = 1;
  // Initial values are uniform in +-gain / sqrt(fan_in).
  double gain = 1.0;
};

// Every parameter a config needs, keyed by prefixed name.
std::map<std::string, ParamSpec> AttentionParamSpecs(const AttentionConfig& cfg,
                                                     const std::string& prefix = "");

// Draws every parameter uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)] from
// `rng`, in sorted name order. Names are prefixed with `prefix`.
AttentionParams InitAttentionParams(const AttentionConfig& cfg, Pcg32& rng,
                                    const std::string& prefix = "");

// Parameter names and shapes a config needs, without drawing values.
std::map<std::string, Shape> AttentionParamShapes(const AttentionConfig& cfg,
                                                  const std::string& prefix = "");

// Parameters with every tensor set to zero (requires_grad kept).
AttentionParams ZeroAttentionParams(const AttentionConfig& cfg, const std::string& prefix = "");

// Coordinate attention. Pools along width and height, shares a 1x1 reduce +
// ReLU over the concatenated descriptors, expands back per direction and
// gates x by sigmoid(g_h(i)) * sigmoid(g_w(j)).
Tensor CoordAttention(const Tensor& x, const AttentionParams& p);

// sigmoid(MLP(avgpool F) + MLP(maxpool F)), shape (N,C,1,1).
Tensor CbamChannelGate(const Tensor& f, const AttentionParams& p);
// sigmoid(conv7x7([mean_c F; max_c F])), shape (N,1,H,W).
Tensor CbamSpatialGate(const Tensor& f, const AttentionParams& p);
// Channel gate, then spatial gate on the channel-gated map.
Tensor CbamBlock(const Tensor& f, const AttentionParams& p);

// Multi-head 2D self-attention with split height/width position encodings.
// q, k, v come from 1x1 convolutions of x.
Tensor SelfAttention2d(const Tensor& x, const AttentionParams& p, const AttentionConfig& cfg);

// CBAM followed by self-attention.
Tensor DualAttention(const Tensor& x, const AttentionParams& p, const AttentionConfig& cfg);

// Dispatches on cfg.kind. kNone returns x unchanged.
Tensor ApplyAttention(const Tensor& x, const AttentionParams& p, const AttentionConfig& cfg);

// Fused attention kernel over precomputed projections. rel_h: (1,1,d,H),
// rel_w: (1,1,d,W), both optional (undefined means zero). For each head and
// position ij, logits over neighbours ab are q_ij . (k_ab + rel_h[:,a] + rel_w[:,b]).
Tensor MultiHeadAttention2d(const Tensor& q, const Tensor& k, const Tensor& v,
                            const Tensor& rel_h, const Tensor& rel_w, int heads,
                            int extent);

// Attention weights of the fused kernel, non-differentiable, laid out as
// (N, heads, H*W, H*W) with zeros outside each neighbourhood.
Tensor AttentionWeights(const Tensor& q, const Tensor& k, const Tensor& rel_h,
                        const Tensor& rel_w, int heads, int extent);

// Single-head global attention without position encoding, composed from
// reshape/matmul/softmax primitives. Shares no code with the fused kernel.
Tensor GlobalSelfAttentionComposed(const Tensor& q, const Tensor& k, const Tensor& v);

}  // namespace attnseg

#endif  // ATTNSEG_ATTENTION_HPP_
