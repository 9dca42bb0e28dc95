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

#include <algorithm>
#include <set>

#include "attnseg/error.hpp"
#include "attnseg/model.hpp"
#include "attnseg/pipeline.hpp"
#include "attnseg/trainer.hpp"
#include "gtest/gtest.h"
#include "oracles.hpp"

namespace attnseg {
namespace {

using testing::RandomTensor;
using testing::Values;

std::set<std::string> Names(const Model& m) {
  std::set<std::string> out;
  for (const auto& [name, t] : m.params) out.insert(name);
  return out;
}

// Plain network, by hand: stem 9*in*b + b, per stage s (w = b 2^s) a stride-2
// conv, two 3x3 convs and the matching head conv sum to 27 w^2 + 3.5 w, and the
// 1x1 output conv adds b + 1.
double HandCount(int in, int b, int depth) {
  double total = 9.0 * in * b + b + b + 1;
  for (int s = 1; s <= depth; ++s) {
    const double w = static_cast<double>(b) * (1 << s);
    total += 27.0 * w * w + 3.5 * w;
  }
  return total;
}

TEST(ModelTest, PlainParameterCountClosedForm) {
  ModelConfig cfg;
  EXPECT_EQ(BuildModel(cfg, 1).ParameterCount(), 581857u);
  for (int b : {2, 4, 8, 16}) {
    for (int depth : {1, 2, 3, 4}) {
      cfg.base_width = b;
      cfg.depth = depth;
      cfg.input_size = 16 << depth;
      const std::size_t n = BuildModel(cfg, 3).ParameterCount();
      EXPECT_EQ(static_cast<double>(n), HandCount(3, b, depth)) << b << " " << depth;
      EXPECT_EQ(n, PlainParameterCount(3, b, depth));
    }
  }
}

TEST(ModelTest, RebuildIsBitIdentical) {
  ModelConfig cfg;
  cfg.attention.kind = AttentionKind::kDual;
  cfg.use_c2f = true;
  Model a = BuildModel(cfg, 11);
  Model b = BuildModel(cfg, 11);
  Model c = BuildModel(cfg, 12);
  ASSERT_EQ(Names(a), Names(b));
  bool differs = false;
  for (const auto& [name, t] : a.params) {
    EXPECT_EQ(Values(t), Values(b.params.at(name))) << name;
    EXPECT_TRUE(t.requires_grad()) << name;
    differs |= Values(t) != Values(c.params.at(name));
  }
  EXPECT_TRUE(differs);
}

TEST(ModelTest, DualAddsExactlyCbamAndMhsaNames) {
  ModelConfig none;
  ModelConfig dual;
  dual.attention.kind = AttentionKind::kDual;
  const auto base = Names(BuildModel(none, 1));
  const auto with = Names(BuildModel(dual, 1));
  EXPECT_TRUE(std::includes(with.begin(), with.end(), base.begin(), base.end()));
  std::set<std::string> added;
  std::set_difference(with.begin(), with.end(), base.begin(), base.end(),
                      std::inserter(added, added.end()));

  AttentionConfig cbam = dual.ResolvedAttention();
  cbam.kind = AttentionKind::kCbam;
  AttentionConfig mhsa = dual.ResolvedAttention();
  mhsa.kind = AttentionKind::kMhsa;
  std::set<std::string> expected;
  for (const auto& [n, s] : AttentionParamShapes(cbam, "attn_b0.")) expected.insert(n);
  for (const auto& [n, s] : AttentionParamShapes(mhsa, "attn_b0.")) expected.insert(n);
  EXPECT_EQ(added, expected);
}

TEST(ModelTest, InvalidConfigsRejected) {
  ModelConfig cfg;
  cfg.input_size = 60;  // not divisible by 8
  EXPECT_THROW(BuildModel(cfg, 1), ConfigError);
  cfg = ModelConfig{};
  cfg.attention.kind = AttentionKind::kMhsa;
  cfg.attention.mhsa_heads = 3;  // 128 % 3 != 0
  EXPECT_THROW(BuildModel(cfg, 1), ConfigError);
  cfg = ModelConfig{};
  cfg.instance_threshold = 1.0;
  EXPECT_THROW(cfg.Validate(), ConfigError);
}

TEST(ModelTest, ForwardRejectsIndivisibleInput) {
  ModelConfig cfg;
  cfg.base_width = 4;
  Model m = BuildModel(cfg, 1);
  EXPECT_THROW(Forward(m, Tensor::Zeros({1, 3, 60, 60})), Error);
  EXPECT_THROW(Forward(m, Tensor::Zeros({1, 4, 64, 64})), Error);
}

// ---- c2f

TEST(C2fTest, ShapePreservedAndZeroProjection) {
  Pcg32 rng(5, 5);
  std::map<std::string, Tensor> p;
  for (const auto& [name, s] : C2fParamShapes(16, 2, "c.")) {
    p[name] = RandomTensor(rng, s, -0.3, 0.3, true);
  }
  Tensor x = RandomTensor(rng, {1, 16, 8, 8});
  EXPECT_EQ(C2fBlock(x, p, "c.", 2).shape(), (Shape{1, 16, 8, 8}));

  p["c.cv2.weight"] = Tensor::Zeros(p["c.cv2.weight"].shape(), true);
  p["c.cv2.bias"] = Tensor::Zeros(p["c.cv2.bias"].shape(), true);
  for (double v : Values(C2fBlock(x, p, "c.", 2))) EXPECT_EQ(v, 0.0);
}

TEST(C2fTest, OddChannelsRejected) {
  std::map<std::string, Tensor> p;
  EXPECT_THROW(C2fBlock(Tensor::Zeros({1, 5, 4, 4}), p, "c.", 1), ShapeError);
}

TEST(C2fTest, GradientReachesEveryBottleneck) {
  for (int n : {1, 2, 3}) {
    Pcg32 rng(9, n);
    std::map<std::string, Tensor> p;
    for (const auto& [name, s] : C2fParamShapes(8, n, "")) {
      p[name] = RandomTensor(rng, s, -0.5, 0.5, true);
    }
    Tensor x = RandomTensor(rng, {1, 8, 6, 6});
    Backward(Sum(C2fBlock(x, p, "", n)));
    for (const auto& [name, t] : p) {
      double norm = 0.0;
      for (double g : t.grad()) norm += std::abs(g);
      EXPECT_GT(norm, 0.0) << name << " n=" << n;
    }
  }
}

// ---- forward over the variant matrix

TEST(ModelTest, AllTenVariantsRunForward) {
  Pcg32 rng(2, 2);
  Tensor batch = RandomTensor(rng, {2, 3, 64, 64}, 0.0, 1.0);
  for (AttentionKind kind : {AttentionKind::kNone, AttentionKind::kCoord, AttentionKind::kCbam,
                             AttentionKind::kMhsa, AttentionKind::kDual}) {
    for (bool c2f : {false, true}) {
      ModelConfig cfg;
      cfg.base_width = 8;
      cfg.attention.kind = kind;
      cfg.use_c2f = c2f;
      Model m = BuildModel(cfg, 4);
      Tensor y = Forward(m, batch);
      ASSERT_EQ(y.shape(), (Shape{2, 1, 64, 64})) << ToString(kind) << c2f;
      for (double v : y.data()) {
        ASSERT_GT(v, 0.0);
        ASSERT_LT(v, 1.0);
      }
      EXPECT_EQ(Values(Forward(m, batch)), Values(y));
    }
  }
}

TEST(ModelTest, EndToEndGradCheck) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    GradCheckResult r = RunBlockGradCheck("model", seed);
    EXPECT_LE(r.max_rel_error, 1e-4) << seed;
    EXPECT_GT(r.checked, 0u);
  }
}

// ---- extraction

std::vector<double> Map(int w, int h, double fill = 0.0) {
  return std::vector<double>(static_cast<std::size_t>(w) * h, fill);
}

TEST(ExtractTest, AllZeroIsEmpty) {
  EXPECT_TRUE(ExtractInstances(Map(8, 8), 8, 8, 0.5).empty());
}

TEST(ExtractTest, SingleBlock) {
  auto prob = Map(10, 10);
  for (int y = 2; y <= 4; ++y) {
    for (int x = 5; x <= 7; ++x) prob[y * 10 + x] = 0.9;
  }
  auto dets = ExtractInstances(prob, 10, 10, 0.5);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].box, (Box{5, 2, 8, 5}));
  EXPECT_DOUBLE_EQ(dets[0].confidence, 0.9);
  EXPECT_EQ(dets[0].mask.count(), 9);
}

TEST(ExtractTest, DiagonalTouchIsTwoComponents) {
  auto prob = Map(4, 4);
  prob[1 * 4 + 1] = 0.8;
  prob[2 * 4 + 2] = 0.7;
  auto dets = ExtractInstances(prob, 4, 4, 0.5);
  ASSERT_EQ(dets.size(), 2u);
  EXPECT_DOUBLE_EQ(dets[0].confidence, 0.8);
  EXPECT_DOUBLE_EQ(dets[1].confidence, 0.7);
}

TEST(ExtractTest, TensorFormMatchesSpanForm) {
  Pcg32 rng(3, 3);
  Tensor t = RandomTensor(rng, {1, 1, 12, 12}, 0.0, 1.0);
  auto a = ExtractInstances(t, 0.6, 4);
  auto b = ExtractInstances(t.data(), 12, 12, 0.6, 4);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].mask, b[i].mask);
    EXPECT_EQ(a[i].image_id, 4);
  }
}

// Flood fill oracle: labels of 4-connected above-threshold pixels.
int CountComponents(const std::vector<double>& p, int w, int h, double tau) {
  std::vector<int> seen(p.size(), 0);
  int count = 0;
  for (int start = 0; start < w * h; ++start) {
    if (seen[start] || !(p[start] > tau)) continue;
    ++count;
    std::vector<int> stack{start};
    seen[start] = 1;
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      const int x = i % w;
      const int y = i / w;
      const int nbr[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
      for (const auto& q : nbr) {
        if (q[0] < 0 || q[0] >= w || q[1] < 0 || q[1] >= h) continue;
        const int j = q[1] * w + q[0];
        if (!seen[j] && p[j] > tau) {
          seen[j] = 1;
          stack.push_back(j);
        }
      }
    }
  }
  return count;
}

TEST(ExtractTest, DisjointMasksCoverThresholdedMap) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Pcg32 rng(seed, 21);
    const int w = rng.UniformInt(3, 12);
    const int h = rng.UniformInt(3, 12);
    auto prob = Map(w, h);
    for (auto& v : prob) v = rng.Uniform(0.0, 1.0);
    const double tau = rng.Uniform(0.2, 0.8);
    auto dets = ExtractInstances(prob, w, h, tau);
    ASSERT_EQ(static_cast<int>(dets.size()), CountComponents(prob, w, h, tau)) << seed;
    std::vector<int> cover(prob.size(), 0);
    for (std::size_t d = 0; d < dets.size(); ++d) {
      const auto& det = dets[d];
      EXPECT_EQ(det.box, BoundingBox(det.mask));
      double sum = 0.0;
      for (std::size_t i = 0; i < prob.size(); ++i) {
        if (det.mask.bits[i]) {
          ++cover[i];
          sum += prob[i];
        }
      }
      EXPECT_NEAR(det.confidence, sum / static_cast<double>(det.mask.count()), 1e-12);
      if (d > 0) EXPECT_GE(dets[d - 1].confidence, det.confidence);
    }
    for (std::size_t i = 0; i < prob.size(); ++i) {
      EXPECT_EQ(cover[i], prob[i] > tau ? 1 : 0) << seed << " " << i;
    }
  }
}

}  // namespace
}  // namespace attnseg
