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

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "attnseg/error.hpp"
#include "attnseg/trainer.hpp"
#include "gtest/gtest.h"
#include "oracles.hpp"

namespace attnseg {
namespace {

namespace fs = std::filesystem;
using testing::RandomTensor;
using testing::Values;

fs::path TempPath(const std::string& name) {
  return fs::temp_directory_path() /
         ("attnseg_trainer_" + std::to_string(::getpid()) + "_" + name);
}

std::string ReadFile(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- loss

TEST(SegLossTest, PerfectPredictionNearZero) {
  std::vector<double> g{1, 0, 0, 1, 1, 0, 1, 0, 0};
  std::vector<double> p;
  for (double v : g) p.push_back(v > 0 ? 1.0 - 1e-7 : 1e-7);
  const double loss =
      SegLoss(Tensor::FromData({1, 1, 3, 3}, p), Tensor::FromData({1, 1, 3, 3}, g)).item();
  EXPECT_GE(loss, 0.0);
  EXPECT_LE(loss, 2e-6);
  // Exact 0 and 1 are clamped, not rejected.
  EXPECT_LE(SegLoss(Tensor::FromData({1, 1, 3, 3}, g), Tensor::FromData({1, 1, 3, 3}, g)).item(),
            2e-6);
}

TEST(SegLossTest, HalfProbabilityExample) {
  Tensor p = Tensor::Full({1, 1, 2, 2}, 0.5);
  Tensor g = Tensor::FromData({1, 1, 2, 2}, {1, 0, 1, 0});
  // ln 2 + (1 - 3 / 5).
  EXPECT_NEAR(SegLoss(p, g).item(), std::log(2.0) + 0.4, 1e-15);
  EXPECT_NEAR(SegLoss(p, g).item(), 1.093147, 5e-7);
  EXPECT_NEAR(SegLoss(p, g, 2.0, 0.5).item(), 2 * std::log(2.0) + 0.2, 1e-15);
}

TEST(SegLossTest, ShapeMismatch) {
  EXPECT_THROW(SegLoss(Tensor::Full({1, 1, 2, 2}, 0.5), Tensor::Zeros({1, 1, 2, 3})), ShapeError);
  EXPECT_THROW(SegLossFromLogits(Tensor::Zeros({1, 1, 2, 2}), Tensor::Zeros({1, 1, 3, 2})),
               ShapeError);
}

TEST(SegLossTest, GradCheck) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Pcg32 rng(seed, 50);
    Tensor p = RandomTensor(rng, {1, 1, 4, 4}, 0.05, 0.95, true);
    std::vector<double> g(16);
    for (auto& v : g) v = rng.Uniform() < 0.5 ? 1.0 : 0.0;
    Tensor gt = Tensor::FromData({1, 1, 4, 4}, g);
    EXPECT_LE(GradCheck([&](const Tensor& x) { return SegLoss(x, gt); }, p), 1e-5) << seed;
  }
}

TEST(SegLossTest, LogitFormAgreesInsideClamp) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Pcg32 rng(seed, 51);
    Tensor z = RandomTensor(rng, {2, 1, 3, 3}, -6.0, 6.0, true);
    std::vector<double> g(18);
    for (auto& v : g) v = rng.Uniform() < 0.4 ? 1.0 : 0.0;
    Tensor gt = Tensor::FromData({2, 1, 3, 3}, g);
    const double a = SegLossFromLogits(z, gt, 1.0, 1.0).item();
    const double b = SegLoss(Sigmoid(z), gt, 1.0, 1.0).item();
    EXPECT_NEAR(a, b, 1e-12) << seed;
    EXPECT_LE(GradCheck([&](const Tensor& x) { return SegLossFromLogits(x, gt, 0.7, 1.3); }, z),
              1e-5)
        << seed;
  }
}

TEST(SegLossTest, LogitFormKeepsGradientWhenSaturated) {
  Tensor z = Tensor::FromData({1, 1, 1, 2}, {-40.0, 40.0}, true);
  Tensor gt = Tensor::FromData({1, 1, 1, 2}, {1.0, 1.0});
  Backward(SegLossFromLogits(z, gt));
  EXPECT_LT(z.grad()[0], -0.4);  // about -1/2 from the BCE term
  Tensor p = Tensor::FromData({1, 1, 1, 2}, {1e-30, 1.0}, true);
  Backward(SegLoss(p, gt));
  EXPECT_EQ(p.grad()[0], (0.0 - 2.0 * 1.0 * (1.0 + 2.0 + 1.0) + (2.0 + 1.0)) / 16.0);
}

// ---- optimizers

TEST(OptimizerTest, SgdSingleStep) {
  std::map<std::string, Tensor> params{{"theta", Tensor::Scalar(1.0, true)}};
  Backward(Scale(params["theta"], 2.0));
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.momentum = 0.0;
  OptimizerState state;
  OptimizerStep(params, state, cfg);
  EXPECT_DOUBLE_EQ(params["theta"].item(), 0.8);
  EXPECT_EQ(state.step, 1u);
}

TEST(OptimizerTest, SgdMomentumClosedForm) {
  // Constant gradient g: v_t = g (1 - mu^t) / (1 - mu).
  std::map<std::string, Tensor> params{{"w", Tensor::Scalar(0.0, true)}};
  TrainConfig cfg;
  cfg.lr = 0.5;
  cfg.momentum = 0.9;
  OptimizerState state;
  double expected = 0.0;
  for (int t = 1; t <= 5; ++t) {
    params["w"].ZeroGrad();
    Backward(Scale(params["w"], 3.0));
    OptimizerStep(params, state, cfg);
    expected -= 0.5 * 3.0 * (1.0 - std::pow(0.9, t)) / (1.0 - 0.9);
    EXPECT_NEAR(params["w"].item(), expected, 1e-12) << t;
  }
}

TEST(OptimizerTest, ZeroGradientNoChange) {
  Pcg32 rng(1, 52);
  std::map<std::string, Tensor> params{{"a", RandomTensor(rng, {1, 2, 3, 3}, -1, 1, true)}};
  const auto before = Values(params["a"]);
  Backward(Scale(Sum(params["a"]), 0.0));
  TrainConfig cfg;
  cfg.momentum = 0.0;
  OptimizerState state;
  OptimizerStep(params, state, cfg);
  EXPECT_EQ(Values(params["a"]), before);
}

TEST(OptimizerTest, AdamFirstStepMagnitude) {
  for (double g : {1e-6, 1e-3, 0.5, 7.0, 1e4, -3.0}) {
    std::map<std::string, Tensor> params{{"w", Tensor::Scalar(2.0, true)}};
    Backward(Scale(params["w"], g));
    TrainConfig cfg;
    cfg.optimizer = OptimizerKind::kAdam;
    OptimizerState state{OptimizerKind::kAdam};
    OptimizerStep(params, state, cfg);
    const double lr = cfg.LearningRate();
    EXPECT_EQ(lr, 0.001);
    const double delta = std::abs(params["w"].item() - 2.0);
    EXPECT_GE(delta, 0.9 * lr) << g;
    EXPECT_LE(delta, lr) << g;
    // Closed form of step one: lr |g| / (|g| + eps).
    EXPECT_NEAR(delta, lr * std::abs(g) / (std::abs(g) + 1e-8), 1e-15) << g;
  }
}

TEST(OptimizerTest, AdamMatchesReferenceRecurrence) {
  std::map<std::string, Tensor> params{{"w", Tensor::FromData({1, 1, 1, 2}, {0.3, -0.2}, true)}};
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::kAdam;
  cfg.lr = 0.01;
  OptimizerState state{OptimizerKind::kAdam};
  double w[2] = {0.3, -0.2};
  double m[2] = {0, 0};
  double v[2] = {0, 0};
  for (int t = 1; t <= 6; ++t) {
    params["w"].ZeroGrad();
    // d/dw of sum(w^2 * c) with c = (1, 4).
    Tensor c = Tensor::FromData({1, 1, 1, 2}, {1.0, 4.0});
    Backward(Sum(Mul(Mul(params["w"], params["w"]), c)));
    for (int i = 0; i < 2; ++i) {
      const double g = 2.0 * w[i] * (i == 0 ? 1.0 : 4.0);
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t));
      const double vh = v[i] / (1 - std::pow(0.999, t));
      w[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
    OptimizerStep(params, state, cfg);
    EXPECT_NEAR(params["w"].data()[0], w[0], 1e-14);
    EXPECT_NEAR(params["w"].data()[1], w[1], 1e-14);
  }
}

TEST(OptimizerTest, NonFiniteGradientNamesParameter) {
  std::map<std::string, Tensor> params{{"good", Tensor::Scalar(1.0, true)},
                                       {"stage2.conv1.weight", Tensor::Scalar(1.0, true)}};
  params["stage2.conv1.weight"].node()->GradBuffer()[0] = std::nan("");
  TrainConfig cfg;
  OptimizerState state;
  try {
    OptimizerStep(params, state, cfg);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("stage2.conv1.weight"), std::string::npos);
  }
  EXPECT_EQ(params["good"].item(), 1.0);
}

TEST(OptimizerTest, TinyLearningRateContinuity) {
  Pcg32 rng(2, 53);
  for (OptimizerKind kind : {OptimizerKind::kSgd, OptimizerKind::kAdam}) {
    std::map<std::string, Tensor> params{{"a", RandomTensor(rng, {1, 3, 4, 4}, -1, 1, true)}};
    const auto before = Values(params["a"]);
    Backward(Sum(Mul(params["a"], RandomTensor(rng, {1, 3, 4, 4}, -50, 50))));
    TrainConfig cfg;
    cfg.optimizer = kind;
    cfg.lr = 1e-12;
    OptimizerState state{kind};
    OptimizerStep(params, state, cfg);
    for (std::size_t i = 0; i < before.size(); ++i) {
      EXPECT_LE(std::abs(params["a"].data()[i] - before[i]), 1e-9);
    }
  }
}

TEST(TrainConfigTest, Validation) {
  TrainConfig cfg;
  EXPECT_EQ(cfg.LearningRate(), 0.01);
  cfg.epochs = 0;
  EXPECT_THROW(cfg.Validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.Validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.lr = -0.1;
  EXPECT_THROW(cfg.Validate(), ConfigError);
  EXPECT_THROW(ParseOptimizerKind("rmsprop"), ConfigError);
}

// ---- training loop

std::vector<LabelledImage> TinyData(int count, std::uint64_t seed = 3) {
  GenConfig gen;
  gen.image_size = 16;
  gen.seed = seed;
  gen.min_blobs = 1;
  gen.max_blobs = 2;
  std::vector<LabelledImage> out;
  for (int id = 0; id < count; ++id) {
    Pcg32 rng(seed, id);
    Sample s = RenderSample(rng, gen);
    out.push_back({id, s.image, s.annotations});
  }
  return out;
}

ModelConfig TinyModel() {
  ModelConfig cfg;
  cfg.base_width = 4;
  cfg.depth = 2;
  cfg.input_size = 16;
  return cfg;
}

TEST(TrainTest, ZeroLearningRateGivesConstantLog) {
  // Dice is a whole-batch statistic, so the batch composition must not change
  // between epochs: single images, or the whole set in one batch. The
  // shuffle then only reorders the epoch mean.
  auto data = TinyData(6);
  for (int batch : {1, 6}) {
    TrainConfig cfg;
    cfg.lr = 0.0;
    cfg.batch_size = batch;
    TrainingState st = StartTraining(BuildModel(TinyModel(), 1), cfg);
    const auto params = Values(st.model.params.begin()->second);
    auto log = Train(st, data, 3);
    ASSERT_EQ(log.size(), 3u);
    EXPECT_NEAR(log[1].mean_loss, log[0].mean_loss, 1e-12) << batch;
    EXPECT_NEAR(log[2].mean_loss, log[0].mean_loss, 1e-12) << batch;
    EXPECT_EQ(Values(st.model.params.begin()->second), params);
  }
}

TEST(TrainTest, IdenticalSeedsIdenticalRuns) {
  auto data = TinyData(7);
  TrainConfig cfg;
  cfg.batch_size = 3;  // last batch partial
  cfg.optimizer = OptimizerKind::kAdam;
  auto run = [&] {
    TrainingState st = StartTraining(BuildModel(TinyModel(), 5), cfg);
    auto log = Train(st, data, 3);
    std::vector<double> losses;
    for (const auto& e : log) losses.push_back(e.mean_loss);
    return std::pair{losses, SerializeCheckpoint(st)};
  };
  auto a = run();
  auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  cfg.seed = 2;
  EXPECT_NE(run().first, a.first);
}

TEST(TrainTest, LossDecreasesOnTinySet) {
  auto data = TinyData(8);
  TrainConfig cfg;
  TrainingState st = StartTraining(BuildModel(TinyModel(), 1), cfg);
  auto log = Train(st, data, 15);
  EXPECT_LT(log.back().mean_loss, log.front().mean_loss);
}

TEST(TrainTest, LogFormat) {
  std::vector<EpochLog> log{{1, 0.5, 1.25}, {2, 0.1, 0.0}};
  EXPECT_EQ(FormatTrainingLog(log), "epoch,mean_loss,seconds\n1,0.5,1.250\n2,0.10000000000000001,0.000\n");
}

TEST(TrainTest, NonFiniteLossReportsEpochAndBatch) {
  auto data = TinyData(4);
  data[3].image = Tensor::Full({1, 3, 16, 16}, 1e300);
  TrainConfig cfg;
  cfg.batch_size = 1;
  TrainingState st = StartTraining(BuildModel(TinyModel(), 1), cfg);
  // Identity shuffle is not guaranteed; only the tags are checked.
  try {
    Train(st, data, 1);
    FAIL();
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_EQ(msg.rfind("epoch 1 batch ", 0), 0u) << msg;
  }
}

// ---- checkpoints

TEST(CheckpointTest, SaveLoadSaveIsByteIdentical) {
  auto data = TinyData(5);
  for (OptimizerKind kind : {OptimizerKind::kSgd, OptimizerKind::kAdam}) {
    ModelConfig mc = TinyModel();
    mc.attention.kind = AttentionKind::kDual;
    mc.attention.mhsa_heads = 2;
    mc.use_c2f = true;
    TrainConfig cfg;
    cfg.optimizer = kind;
    cfg.batch_size = 2;
    TrainingState st = StartTraining(BuildModel(mc, 4), cfg);
    Train(st, data, 2);
    const fs::path p = TempPath("rt.ckpt");
    SaveCheckpoint(p, st);
    TrainingState back = LoadCheckpoint(p);
    const fs::path q = TempPath("rt2.ckpt");
    SaveCheckpoint(q, back);
    EXPECT_EQ(ReadFile(p), ReadFile(q));
    EXPECT_EQ(back.epoch, 2);
    EXPECT_EQ(back.optimizer, st.optimizer);
    EXPECT_TRUE(back.model.config == mc);
    EXPECT_EQ(back.shuffle_rng.NextU32(), st.shuffle_rng.NextU32());
    for (const auto& [name, t] : st.model.params) {
      EXPECT_EQ(Values(back.model.params.at(name)), Values(t)) << name;
    }
    fs::remove(p);
    fs::remove(q);
  }
}

TEST(CheckpointTest, ResumeReproducesUninterruptedRun) {
  auto data = TinyData(6);
  TrainConfig cfg;
  cfg.batch_size = 4;
  TrainingState full = StartTraining(BuildModel(TinyModel(), 9), cfg);
  auto full_log = Train(full, data, 4);

  const fs::path p = TempPath("resume.ckpt");
  TrainingState first = StartTraining(BuildModel(TinyModel(), 9), cfg);
  Train(first, data, 2, p);
  TrainingState resumed = LoadCheckpoint(p);
  auto tail = Train(resumed, data, 4);
  ASSERT_EQ(tail.size(), 2u);
  EXPECT_EQ(tail[0].epoch, 3);
  EXPECT_EQ(tail[0].mean_loss, full_log[2].mean_loss);
  EXPECT_EQ(tail[1].mean_loss, full_log[3].mean_loss);
  EXPECT_EQ(SerializeCheckpoint(resumed), SerializeCheckpoint(full));
  fs::remove(p);
}

TEST(CheckpointTest, PeriodicCheckpointsWritten) {
  auto data = TinyData(2);
  TrainConfig cfg;
  cfg.checkpoint_every = 2;
  TrainingState st = StartTraining(BuildModel(TinyModel(), 1), cfg);
  const fs::path p = TempPath("periodic.ckpt");
  int seen = 0;
  Train(st, data, 3, p, [&](const EpochLog& e) {
    if (e.epoch == 3) {
      // Written after epoch 2, not yet after epoch 3.
      EXPECT_EQ(LoadCheckpoint(p).epoch, 2);
    }
    ++seen;
  });
  EXPECT_EQ(seen, 3);
  EXPECT_EQ(LoadCheckpoint(p).epoch, 3);
  fs::remove(p);
}

class CorruptionTest : public ::testing::Test {
 protected:
  void SetUp() override {
    TrainConfig cfg;
    cfg.optimizer = OptimizerKind::kAdam;
    TrainingState st = StartTraining(BuildModel(TinyModel(), 2), cfg);
    Train(st, TinyData(2), 1);
    bytes_ = SerializeCheckpoint(st);
  }
  static void PutU32(std::string& s, std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s[at + i] = static_cast<char>((v >> (8 * i)) & 0xff);
  }
  std::string bytes_;
};

TEST_F(CorruptionTest, BadMagicAndVersion) {
  std::string s = bytes_;
  s[0] = 'X';
  EXPECT_THROW(ParseCheckpoint(s), CheckpointError);
  s = bytes_;
  PutU32(s, 4, kCheckpointVersion + 1);
  EXPECT_THROW(ParseCheckpoint(s), CheckpointError);
}

TEST_F(CorruptionTest, CorruptedLengthFields) {
  std::string s = bytes_;
  PutU32(s, 12, 0xfffffff0u);  // first entry's name length
  EXPECT_THROW(ParseCheckpoint(s), CheckpointError);
  s = bytes_;
  PutU32(s, 8, 3);  // entry count too small: trailing bytes
  EXPECT_THROW(ParseCheckpoint(s), CheckpointError);
  s = bytes_;
  PutU32(s, 8, 100000);
  EXPECT_THROW(ParseCheckpoint(s), CheckpointError);
}

TEST_F(CorruptionTest, EveryTruncationRejected) {
  EXPECT_NO_THROW(ParseCheckpoint(bytes_));
  for (std::size_t len = 0; len < bytes_.size(); len += 1 + len / 16) {
    EXPECT_THROW(ParseCheckpoint(std::string_view(bytes_).substr(0, len)), CheckpointError)
        << len;
  }
  EXPECT_THROW(ParseCheckpoint(bytes_ + "x"), CheckpointError);
}

TEST_F(CorruptionTest, ShapeMismatchAgainstConfig) {
  // Raise base_width in the embedded model config: every parameter shape is
  // then wrong for the stored payloads.
  const std::string key = "\"base_width\":4";
  std::string s = bytes_;
  const auto at = s.find(key);
  ASSERT_NE(at, std::string::npos);
  s[at + key.size() - 1] = '6';
  EXPECT_THROW(ParseCheckpoint(s), CheckpointError);
}

TEST(CheckpointTest, MissingFileIsIoError) {
  EXPECT_THROW(LoadCheckpoint("/nonexistent/x.ckpt"), Error);
}

}  // namespace
}  // namespace attnseg
