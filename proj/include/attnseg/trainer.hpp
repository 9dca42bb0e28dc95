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

#ifndef ATTNSEG_TRAINER_HPP_
#define ATTNSEG_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "attnseg/dataset.hpp"
#include "attnseg/model.hpp"
#include "attnseg/rng.hpp"
#include "attnseg/tensor.hpp"

namespace attnseg {

enum class OptimizerKind { kSgd, kAdam };
std::string_view ToString(OptimizerKind kind);
OptimizerKind ParseOptimizerKind(std::string_view name);

struct TrainConfig {
  int epochs = 50;
  int batch_size = 4;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  // Unset selects 0.01 for SGD and 0.001 for Adam.
  std::optional<double> lr;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
  double w_bce = 1.0;
  double w_dice = 1.0;
  // Write a checkpoint every k epochs (0: only at the end).
  int checkpoint_every = 0;

  double LearningRate() const;
  void Validate() const;
};

// w_bce * BCE(p, g) + w_dice * (1 - (2 sum(pg) + 1) / (sum(p) + sum(g) + 1)),
// with p clamped to [1e-7, 1 - 1e-7] inside the logarithms.
Tensor SegLoss(const Tensor& prob, const Tensor& target, double w_bce = 1.0,
               double w_dice = 1.0);

// The same loss taken from logits z, p = sigmoid(z). BCE is evaluated as
// max(z,0) - z g + log(1 + exp(-|z|)) without clamping, which equals the
// clamped value whenever p lies inside the clamp and keeps a (p - g) gradient
// outside it. The trainer optimizes this form.
Tensor SegLossFromLogits(const Tensor& logits, const Tensor& target, double w_bce = 1.0,
                         double w_dice = 1.0);

// Per-parameter optimizer buffers. SGD uses `first` as the velocity; Adam
// uses `first`/`second` as the moment estimates.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kSgd;
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> first;
  std::map<std::string, std::vector<double>> second;

  bool operator==(const OptimizerState&) const = default;
};

// One update of every parameter from its accumulated gradient.
//   SGD : v <- mu v + g;  theta <- theta - lr v
//   Adam: bias-corrected moments, theta <- theta - lr m_hat / (sqrt(v_hat) + eps)
// Throws NumericError naming the parameter when a gradient is not finite.
void OptimizerStep(std::map<std::string, Tensor>& params, OptimizerState& state,
                   const TrainConfig& cfg);

struct EpochLog {
  int epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double seconds = 0.0;
};

// Everything needed to continue a run bit-exactly.
struct TrainingState {
  Model model;
  TrainConfig config;
  OptimizerState optimizer;
  int epoch = 0;  // completed epochs
  Pcg32 shuffle_rng;
};

// Fresh state: optimizer buffers empty, shuffle stream PCG32(cfg.seed, 1).
TrainingState StartTraining(Model model, const TrainConfig& cfg);

// Runs epochs state.epoch+1 .. until_epoch over `data`. After each epoch
// `on_epoch` (if set) is called. Writes checkpoints to `checkpoint_path`
// every config.checkpoint_every epochs and after the last one.
std::vector<EpochLog> Train(TrainingState& state, const std::vector<LabelledImage>& data,
                            int until_epoch, const std::filesystem::path& checkpoint_path = {},
                            const std::function<void(const EpochLog&)>& on_epoch = {});

// "epoch,mean_loss,seconds" CSV.
std::string FormatTrainingLog(const std::vector<EpochLog>& log);

// ---------------------------------------------------------------------------
// Checkpoints
//
// Little-endian binary: "ATSK", u32 version, u32 entry count, then entries of
//   u32 name length, name bytes, u8 dtype (0 f64, 1 bytes, 2 u64),
//   u32 rank, rank x u32 extents, raw payload.

constexpr std::uint32_t kCheckpointVersion = 1;

std::string SerializeCheckpoint(const TrainingState& state);
// Validates magic, version, lengths and every parameter shape against the
// embedded model config before returning. Throws CheckpointError.
TrainingState ParseCheckpoint(std::string_view bytes);

void SaveCheckpoint(const std::filesystem::path& path, const TrainingState& state);
TrainingState LoadCheckpoint(const std::filesystem::path& path);

}  // namespace attnseg

#endif  // ATTNSEG_TRAINER_HPP_
