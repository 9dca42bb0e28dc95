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

#include "attnseg/attention.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <vector>

#include "attnseg/error.hpp"

namespace attnseg {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void AddConv(std::map<std::string, ParamSpec>& specs, const std::string& name, int out,
             int in, int k) {
  specs[name + ".weight"] = {{out, in, k, k}, in * k * k};
  specs[name + ".bias"] = {{1, out, 1, 1}, in * k * k};
}

}  // namespace

std::map<std::string, ParamSpec> AttentionParamSpecs(const AttentionConfig& cfg,
                                                     const std::string& prefix) {
  cfg.Validate();
  std::map<std::string, ParamSpec> specs;
  const int c = cfg.channels;
  auto add_cbam = [&] {
    const int hidden = cfg.CbamHidden();
    AddConv(specs, prefix + "cbam.mlp1", hidden, c, 1);
    AddConv(specs, prefix + "cbam.mlp2", c, hidden, 1);
    AddConv(specs, prefix + "cbam.spatial", 1, 2, 7);
  };
  auto add_mhsa = [&] {
    AddConv(specs, prefix + "mhsa.query", c, c, 1);
    AddConv(specs, prefix + "mhsa.key", c, c, 1);
    AddConv(specs, prefix + "mhsa.value", c, c, 1);
    const int d = cfg.HeadDim();
    specs[prefix + "mhsa.rel_h"] = {{1, 1, d, cfg.height}, d};
    specs[prefix + "mhsa.rel_w"] = {{1, 1, d, cfg.width}, d};
  };
  switch (cfg.kind) {
    case AttentionKind::kNone:
      break;
    case AttentionKind::kCoord: {
      const int hidden = cfg.CoordHidden();
      AddConv(specs, prefix + "coord.reduce", hidden, c, 1);
      AddConv(specs, prefix + "coord.expand_h", c, hidden, 1);
      AddConv(specs, prefix + "coord.expand_w", c, hidden, 1);
      break;
    }
    case AttentionKind::kCbam:
      add_cbam();
      break;
    case AttentionKind::kMhsa:
      add_mhsa();
      break;
    case AttentionKind::kDual:
      add_cbam();
      add_mhsa();
      break;
  }
  return specs;
}

namespace {

Tensor Conv1x1(const Tensor& x, const AttentionParams& p, const std::string& name) {
  return Conv2d(x, p.at(name + ".weight"), p.at(name + ".bias"));
}

}  // namespace

std::string_view ToString(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::kNone: return "none";
    case AttentionKind::kCoord: return "coord";
    case AttentionKind::kCbam: return "cbam";
    case AttentionKind::kMhsa: return "mhsa";
    case AttentionKind::kDual: return "dual";
  }
  return "none";
}

AttentionKind ParseAttentionKind(std::string_view name) {
  for (auto kind : {AttentionKind::kNone, AttentionKind::kCoord, AttentionKind::kCbam,
                    AttentionKind::kMhsa, AttentionKind::kDual}) {
    if (ToString(kind) == name) return kind;
  }
  throw ConfigError("unknown attention kind '" + std::string(name) +
                    "' (expected none|coord|cbam|mhsa|dual)");
}

int AttentionConfig::EffectiveCbamReduction() const {
  if (cbam_reduction > 0) return cbam_reduction;
  return std::min(16, std::max(1, channels / 2));
}

int AttentionConfig::CoordHidden() const { return std::max(1, channels / coord_reduction); }
int AttentionConfig::CbamHidden() const {
  return std::max(1, channels / EffectiveCbamReduction());
}

void AttentionConfig::Validate() const {
  if (kind == AttentionKind::kNone) return;
  if (channels < 1) throw ConfigError("attention: channels must be >= 1");
  if (coord_reduction < 1) throw ConfigError("attention: coord reduction must be >= 1");
  if (cbam_reduction < 0) throw ConfigError("attention: cbam reduction must be >= 1");
  if (kind == AttentionKind::kMhsa || kind == AttentionKind::kDual) {
    if (mhsa_heads < 1) throw ConfigError("attention: heads must be >= 1");
    if (channels % mhsa_heads != 0) {
      throw ConfigError("attention: " + std::to_string(channels) +
                        " channels not divisible by " + std::to_string(mhsa_heads) + " heads");
    }
    if (mhsa_extent < 0 || (mhsa_extent > 0 && mhsa_extent % 2 == 0)) {
      throw ConfigError("attention: extent must be odd (or 0 for global), got " +
                        std::to_string(mhsa_extent));
    }
    if (height < 1 || width < 1) {
      throw ConfigError("attention: self-attention needs the feature-map height and width");
    }
  }
}

const Tensor& AttentionParams::at(const std::string& name) const {
  auto it = tensors.find(prefix + name);
  if (it == tensors.end()) throw ConfigError("missing attention parameter '" + prefix + name + "'");
  return it->second;
}

Tensor& AttentionParams::at(const std::string& name) {
  auto it = tensors.find(prefix + name);
  if (it == tensors.end()) throw ConfigError("missing attention parameter '" + prefix + name + "'");
  return it->second;
}

std::map<std::string, Shape> AttentionParamShapes(const AttentionConfig& cfg,
                                                  const std::string& prefix) {
  std::map<std::string, Shape> shapes;
  for (const auto& [name, spec] : AttentionParamSpecs(cfg, prefix)) shapes[name] = spec.shape;
  return shapes;
}

AttentionParams InitAttentionParams(const AttentionConfig& cfg, Pcg32& rng,
                                    const std::string& prefix) {
  AttentionParams params;
  params.prefix = prefix;
  for (const auto& [name, spec] : AttentionParamSpecs(cfg, prefix)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
    std::vector<double> values(spec.shape.numel());
    for (double& v : values) v = rng.Uniform(-bound, bound);
    params.tensors[name] = Tensor::FromData(spec.shape, std::move(values), true);
  }
  return params;
}

AttentionParams ZeroAttentionParams(const AttentionConfig& cfg, const std::string& prefix) {
  AttentionParams params;
  params.prefix = prefix;
  for (const auto& [name, spec] : AttentionParamSpecs(cfg, prefix)) {
    params.tensors[name] = Tensor::Zeros(spec.shape, true);
  }
  return params;
}

// ---------------------------------------------------------------------------
// Coordinate attention

Tensor CoordAttention(const Tensor& x, const AttentionParams& p) {
  const Shape s = x.shape();
  if (p.at("coord.expand_h.weight").shape().n != s.c) {
    throw ShapeError("coord attention: parameters sized for " +
                     std::to_string(p.at("coord.expand_h.weight").shape().n) +
                     " channels, input has " + std::to_string(s.c));
  }
  Tensor z_h = PoolDirectional(x, Axis::kWidth);   // (N,C,H,1)
  Tensor z_w = PoolDirectional(x, Axis::kHeight);  // (N,C,1,W)
  Tensor row = Concat({Reshape(z_h, {s.n, s.c, 1, s.h}), z_w}, Axis::kWidth);
  Tensor t = Relu(Conv1x1(row, p, "coord.reduce"));  // (N,mid,1,H+W)
  auto parts = Split(t, Axis::kWidth, {s.h, s.w});
  const int mid = t.shape().c;
  Tensor t_h = Reshape(parts[0], {s.n, mid, s.h, 1});
  Tensor g_h = Sigmoid(Conv1x1(t_h, p, "coord.expand_h"));      // (N,C,H,1)
  Tensor g_w = Sigmoid(Conv1x1(parts[1], p, "coord.expand_w"));  // (N,C,1,W)
  Tensor gated = Mul(x, RepeatAlong(g_h, Axis::kWidth, s.w));
  return Mul(gated, RepeatAlong(g_w, Axis::kHeight, s.h));
}

// ---------------------------------------------------------------------------
// CBAM

Tensor CbamChannelGate(const Tensor& f, const AttentionParams& p) {
  if (f.shape().c < 1) throw ShapeError("cbam: input has no channels");
  auto mlp = [&](const Tensor& z) {
    Tensor hidden = Relu(Linear(z, p.at("cbam.mlp1.weight"), p.at("cbam.mlp1.bias")));
    return Linear(hidden, p.at("cbam.mlp2.weight"), p.at("cbam.mlp2.bias"));
  };
  return Sigmoid(Add(mlp(PoolGlobal(f, PoolMode::kAvg)), mlp(PoolGlobal(f, PoolMode::kMax))));
}

Tensor CbamSpatialGate(const Tensor& f, const AttentionParams& p) {
  Tensor stacked = Concat(
      {PoolAcrossChannels(f, PoolMode::kAvg), PoolAcrossChannels(f, PoolMode::kMax)},
      Axis::kChannel);
  return Sigmoid(
      Conv2d(stacked, p.at("cbam.spatial.weight"), p.at("cbam.spatial.bias"), 1, 3));
}

Tensor CbamBlock(const Tensor& f, const AttentionParams& p) {
  Tensor refined = Mul(f, CbamChannelGate(f, p));
  return Mul(refined, CbamSpatialGate(refined, p));
}

// ---------------------------------------------------------------------------
// Self-attention

namespace {

struct AttentionGeometry {
  int n, channels, height, width, heads, dim, positions, radius;
  bool global;

  bool InNeighbourhood(int i, int j) const {
    if (global) return true;
    const int yi = i / width, xi = i % width;
    const int yj = j / width, xj = j % width;
    return std::abs(yi - yj) <= radius && std::abs(xi - xj) <= radius;
  }
};

AttentionGeometry CheckAttentionInputs(const Tensor& q, const Tensor& k, const Tensor* v,
                                       const Tensor& rel_h, const Tensor& rel_w, int heads,
                                       int extent) {
  const Shape s = q.shape();
  if (!(k.shape() == s) || (v != nullptr && !(v->shape() == s))) {
    throw ShapeError("self-attention: q/k/v shapes differ");
  }
  if (heads < 1 || s.c % heads != 0) {
    throw ConfigError("self-attention: " + std::to_string(s.c) +
                      " channels not divisible by " + std::to_string(heads) + " heads");
  }
  if (extent < 0 || (extent > 0 && extent % 2 == 0)) {
    throw ConfigError("self-attention: extent must be odd (or 0 for global), got " +
                      std::to_string(extent));
  }
  const int d = s.c / heads;
  if (rel_h.defined() && !(rel_h.shape() == Shape{1, 1, d, s.h})) {
    throw ShapeError("self-attention: rel_h " + rel_h.shape().str() + " for head dim " +
                     std::to_string(d) + " and height " + std::to_string(s.h));
  }
  if (rel_w.defined() && !(rel_w.shape() == Shape{1, 1, d, s.w})) {
    throw ShapeError("self-attention: rel_w " + rel_w.shape().str() + " for head dim " +
                     std::to_string(d) + " and width " + std::to_string(s.w));
  }
  return {s.n, s.c, s.h, s.w, heads, d, s.h * s.w, extent / 2, extent == 0};
}

// Effective keys: k[c,ab] + rel_h[c,a] + rel_w[c,b] for one head block.
void EffectiveKeys(const double* k, const double* rel_h, const double* rel_w,
                   const AttentionGeometry& g, double* out) {
  for (int c = 0; c < g.dim; ++c) {
    for (int a = 0; a < g.height; ++a) {
      for (int b = 0; b < g.width; ++b) {
        const int pos = a * g.width + b;
        double v = k[c * g.positions + pos];
        if (rel_h != nullptr) v += rel_h[c * g.height + a];
        if (rel_w != nullptr) v += rel_w[c * g.width + b];
        out[c * g.positions + pos] = v;
      }
    }
  }
}

// Fills `weights` (P x P) with the masked softmax of q^T k_eff.
void AttentionMatrix(const double* q, const double* k_eff, const AttentionGeometry& g,
                     double* weights) {
  const int P = g.positions;
  MatrixMap a(weights, P, P);
  a.noalias() = ConstMatrixMap(q, g.dim, P).transpose() * ConstMatrixMap(k_eff, g.dim, P);
  for (int i = 0; i < P; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < P; ++j) {
      if (g.InNeighbourhood(i, j)) m = std::max(m, a(i, j));
    }
    double total = 0.0;
    for (int j = 0; j < P; ++j) {
      if (g.InNeighbourhood(i, j)) {
        a(i, j) = std::exp(a(i, j) - m);
        total += a(i, j);
      } else {
        a(i, j) = 0.0;
      }
    }
    for (int j = 0; j < P; ++j) a(i, j) /= total;
  }
}

}  // namespace

Tensor AttentionWeights(const Tensor& q, const Tensor& k, const Tensor& rel_h,
                        const Tensor& rel_w, int heads, int extent) {
  const AttentionGeometry g = CheckAttentionInputs(q, k, nullptr, rel_h, rel_w, heads, extent);
  const int P = g.positions;
  const std::size_t block = static_cast<std::size_t>(g.dim) * P;
  std::vector<double> out(static_cast<std::size_t>(g.n) * heads * P * P);
  std::vector<double> k_eff(block);
  for (int n = 0; n < g.n; ++n) {
    for (int h = 0; h < heads; ++h) {
      const std::size_t off = (static_cast<std::size_t>(n) * g.channels + h * g.dim) * P;
      EffectiveKeys(k.data().data() + off, rel_h.defined() ? rel_h.data().data() : nullptr,
                    rel_w.defined() ? rel_w.data().data() : nullptr, g, k_eff.data());
      AttentionMatrix(q.data().data() + off, k_eff.data(), g,
                      out.data() + (static_cast<std::size_t>(n) * heads + h) * P * P);
    }
  }
  return Tensor::FromData({g.n, heads, P, P}, std::move(out));
}

Tensor MultiHeadAttention2d(const Tensor& q, const Tensor& k, const Tensor& v,
                            const Tensor& rel_h, const Tensor& rel_w, int heads, int extent) {
  const AttentionGeometry g = CheckAttentionInputs(q, k, &v, rel_h, rel_w, heads, extent);
  const int P = g.positions;
  const std::size_t block = static_cast<std::size_t>(g.dim) * P;
  const std::size_t square = static_cast<std::size_t>(P) * P;
  // Saved for the backward pass: effective keys and weights per (n, head).
  std::vector<double> k_eff(static_cast<std::size_t>(g.n) * heads * block);
  std::vector<double> weights(static_cast<std::size_t>(g.n) * heads * square);
  std::vector<double> out(q.numel());
  const double* rh = rel_h.defined() ? rel_h.data().data() : nullptr;
  const double* rw = rel_w.defined() ? rel_w.data().data() : nullptr;
  for (int n = 0; n < g.n; ++n) {
    for (int h = 0; h < heads; ++h) {
      const std::size_t idx = static_cast<std::size_t>(n) * heads + h;
      const std::size_t off = (static_cast<std::size_t>(n) * g.channels + h * g.dim) * P;
      double* ke = k_eff.data() + idx * block;
      double* a = weights.data() + idx * square;
      EffectiveKeys(k.data().data() + off, rh, rw, g, ke);
      AttentionMatrix(q.data().data() + off, ke, g, a);
      // y (d x P) = v (d x P) * A^T
      MatrixMap(out.data() + off, g.dim, P).noalias() =
          ConstMatrixMap(v.data().data() + off, g.dim, P) * ConstMatrixMap(a, P, P).transpose();
    }
  }
  std::vector<Tensor> parents{q, k, v};
  if (rel_h.defined()) parents.push_back(rel_h);
  if (rel_w.defined()) parents.push_back(rel_w);
  const std::size_t rh_index = 3;
  const std::size_t rw_index = rel_h.defined() ? 4 : 3;
  const bool has_rh = rel_h.defined();
  const bool has_rw = rel_w.defined();
  return MakeResult(
      "self_attention_2d", q.shape(), std::move(out), parents,
      [g, block, square, k_eff = std::move(k_eff), weights = std::move(weights), has_rh, has_rw,
       rh_index, rw_index](detail::Node& self) {
        const int P = g.positions;
        const auto& qv = self.parents[0]->value;
        const auto& vv = self.parents[2]->value;
        const bool want_q = self.parents[0]->requires_grad;
        const bool want_k = self.parents[1]->requires_grad;
        const bool want_v = self.parents[2]->requires_grad;
        const bool want_rh = has_rh && self.parents[rh_index]->requires_grad;
        const bool want_rw = has_rw && self.parents[rw_index]->requires_grad;
        double* dq = want_q ? self.parents[0]->GradBuffer().data() : nullptr;
        double* dk = want_k ? self.parents[1]->GradBuffer().data() : nullptr;
        double* dv = want_v ? self.parents[2]->GradBuffer().data() : nullptr;
        double* drh = want_rh ? self.parents[rh_index]->GradBuffer().data() : nullptr;
        double* drw = want_rw ? self.parents[rw_index]->GradBuffer().data() : nullptr;
        RowMatrix d_weights(P, P);
        RowMatrix d_keys(g.dim, P);
        for (int n = 0; n < g.n; ++n) {
          for (int h = 0; h < g.heads; ++h) {
            const std::size_t idx = static_cast<std::size_t>(n) * g.heads + h;
            const std::size_t off = (static_cast<std::size_t>(n) * g.channels + h * g.dim) * P;
            ConstMatrixMap dy(self.grad.data() + off, g.dim, P);
            ConstMatrixMap a(weights.data() + idx * square, P, P);
            ConstMatrixMap ke(k_eff.data() + idx * block, g.dim, P);
            ConstMatrixMap qm(qv.data() + off, g.dim, P);
            if (dv != nullptr) MatrixMap(dv + off, g.dim, P).noalias() += dy * a;
            // dA = dy^T v, then through the softmax rows.
            d_weights.noalias() = dy.transpose() * ConstMatrixMap(vv.data() + off, g.dim, P);
            for (int i = 0; i < P; ++i) {
              double dot = 0.0;
              for (int j = 0; j < P; ++j) dot += a(i, j) * d_weights(i, j);
              d_weights.row(i) = a.row(i).cwiseProduct(
                  (d_weights.row(i).array() - dot).matrix());
            }
            // logits = q^T k_eff
            if (dq != nullptr) MatrixMap(dq + off, g.dim, P).noalias() += ke * d_weights.transpose();
            if (dk != nullptr || drh != nullptr || drw != nullptr) {
              d_keys.noalias() = qm * d_weights;
              if (dk != nullptr) MatrixMap(dk + off, g.dim, P) += d_keys;
              for (int c = 0; c < g.dim; ++c) {
                for (int row = 0; row < g.height; ++row) {
                  for (int col = 0; col < g.width; ++col) {
                    const double v = d_keys(c, row * g.width + col);
                    if (drh != nullptr) drh[c * g.height + row] += v;
                    if (drw != nullptr) drw[c * g.width + col] += v;
                  }
                }
              }
            }
          }
        }
      });
}

Tensor GlobalSelfAttentionComposed(const Tensor& q, const Tensor& k, const Tensor& v) {
  const Shape s = q.shape();
  if (!(k.shape() == s) || !(v.shape() == s)) {
    throw ShapeError("self-attention: q/k/v shapes differ");
  }
  const int positions = s.h * s.w;
  const Shape flat{s.n, 1, s.c, positions};
  Tensor queries = TransposeLast(Reshape(q, flat));                       // (N,1,P,d)
  Tensor weights = SoftmaxLast(MatMul(queries, Reshape(k, flat)));        // (N,1,P,P)
  Tensor y = MatMul(Reshape(v, flat), TransposeLast(weights));            // (N,1,d,P)
  return Reshape(y, s);
}

Tensor SelfAttention2d(const Tensor& x, const AttentionParams& p, const AttentionConfig& cfg) {
  cfg.Validate();
  const Shape s = x.shape();
  if (s.c != cfg.channels) {
    throw ShapeError("self-attention: configured for " + std::to_string(cfg.channels) +
                     " channels, input " + s.str());
  }
  Tensor q = Conv1x1(x, p, "mhsa.query");
  Tensor k = Conv1x1(x, p, "mhsa.key");
  Tensor v = Conv1x1(x, p, "mhsa.value");
  return MultiHeadAttention2d(q, k, v, p.at("mhsa.rel_h"), p.at("mhsa.rel_w"), cfg.mhsa_heads,
                              cfg.mhsa_extent);
}

Tensor DualAttention(const Tensor& x, const AttentionParams& p, const AttentionConfig& cfg) {
  return SelfAttention2d(CbamBlock(x, p), p, cfg);
}

Tensor ApplyAttention(const Tensor& x, const AttentionParams& p, const AttentionConfig& cfg) {
  switch (cfg.kind) {
    case AttentionKind::kNone: return x;
    case AttentionKind::kCoord: return CoordAttention(x, p);
    case AttentionKind::kCbam: return CbamBlock(x, p);
    case AttentionKind::kMhsa: return SelfAttention2d(x, p, cfg);
    case AttentionKind::kDual: return DualAttention(x, p, cfg);
  }
  return x;
}

}  // namespace attnseg
