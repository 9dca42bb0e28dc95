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

#include "attnseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "attnseg/error.hpp"

namespace attnseg {

std::string_view ToString(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adam";
}

OptimizerKind ParseOptimizerKind(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected sgd|adam)");
}

double TrainConfig::LearningRate() const {
  if (lr.has_value()) return *lr;
  return optimizer == OptimizerKind::kSgd ? 0.01 : 0.001;
}

void TrainConfig::Validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  // lr = 0 is allowed as a frozen-parameter control run.
  if (!(LearningRate() >= 0.0) || !std::isfinite(LearningRate())) {
    throw ConfigError("train: learning rate must be finite and non-negative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must lie in [0,1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train: Adam betas must lie in [0,1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("train: epsilon must be positive");
  if (w_bce < 0.0 || w_dice < 0.0) throw ConfigError("train: loss weights must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint interval must be >= 0");
}

Tensor SegLoss(const Tensor& prob, const Tensor& target, double w_bce, double w_dice) {
  if (!(prob.shape() == target.shape())) {
    throw ShapeError("seg_loss: prediction " + prob.shape().str() + " vs target " +
                     target.shape().str());
  }
  if (prob.shape().c != 1) throw ShapeError("seg_loss: expected one channel");
  constexpr double kEps = 1e-7;
  constexpr double kSmooth = 1.0;
  const auto p = prob.data();
  const auto g = target.data();
  const std::size_t count = p.size();
  double bce = 0.0;
  double inter = 0.0;
  double sum_p = 0.0;
  double sum_g = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double pc = std::clamp(p[i], kEps, 1.0 - kEps);
    bce -= g[i] * std::log(pc) + (1.0 - g[i]) * std::log(1.0 - pc);
    inter += p[i] * g[i];
    sum_p += p[i];
    sum_g += g[i];
  }
  bce /= static_cast<double>(count);
  const double denom = sum_p + sum_g + kSmooth;
  const double dice = 1.0 - (2.0 * inter + kSmooth) / denom;
  const double loss = w_bce * bce + w_dice * dice;
  std::vector<double> targets(g.begin(), g.end());
  return MakeResult(
      "seg_loss", {1, 1, 1, 1}, {loss}, {prob},
      [targets = std::move(targets), w_bce, w_dice, inter, denom, count](detail::Node& self) {
        const auto& pv = self.parents[0]->value;
        auto& dp = self.parents[0]->GradBuffer();
        const double up = self.grad[0];
        const double numer = 2.0 * inter + kSmooth;
        for (std::size_t i = 0; i < count; ++i) {
          const double gi = targets[i];
          double d_bce = 0.0;
          if (pv[i] > kEps && pv[i] < 1.0 - kEps) {
            d_bce = -(gi / pv[i] - (1.0 - gi) / (1.0 - pv[i])) / static_cast<double>(count);
          }
          const double d_dice = -(2.0 * gi * denom - numer) / (denom * denom);
          dp[i] += up * (w_bce * d_bce + w_dice * d_dice);
        }
      });
}

Tensor SegLossFromLogits(const Tensor& logits, const Tensor& target, double w_bce,
                         double w_dice) {
  if (!(logits.shape() == target.shape())) {
    throw ShapeError("seg_loss: logits " + logits.shape().str() + " vs target " +
                     target.shape().str());
  }
  if (logits.shape().c != 1) throw ShapeError("seg_loss: expected one channel");
  constexpr double kSmooth = 1.0;
  const auto z = logits.data();
  const auto g = target.data();
  const std::size_t count = z.size();
  std::vector<double> prob(count);
  double bce = 0.0;
  double inter = 0.0;
  double sum_p = 0.0;
  double sum_g = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    prob[i] = 1.0 / (1.0 + std::exp(-z[i]));
    bce += std::max(z[i], 0.0) - z[i] * g[i] + std::log1p(std::exp(-std::abs(z[i])));
    inter += prob[i] * g[i];
    sum_p += prob[i];
    sum_g += g[i];
  }
  bce /= static_cast<double>(count);
  const double denom = sum_p + sum_g + kSmooth;
  const double dice = 1.0 - (2.0 * inter + kSmooth) / denom;
  std::vector<double> targets(g.begin(), g.end());
  return MakeResult(
      "seg_loss_logits", {1, 1, 1, 1}, {w_bce * bce + w_dice * dice}, {logits},
      [targets = std::move(targets), prob = std::move(prob), w_bce, w_dice, inter, denom,
       count](detail::Node& self) {
        auto& dz = self.parents[0]->GradBuffer();
        const double up = self.grad[0];
        const double numer = 2.0 * inter + kSmooth;
        for (std::size_t i = 0; i < count; ++i) {
          const double p = prob[i];
          const double d_bce = (p - targets[i]) / static_cast<double>(count);
          const double d_dice = -(2.0 * targets[i] * denom - numer) / (denom * denom);
          dz[i] += up * (w_bce * d_bce + w_dice * d_dice * p * (1.0 - p));
        }
      });
}

void OptimizerStep(std::map<std::string, Tensor>& params, OptimizerState& state,
                   const TrainConfig& cfg) {
  if (state.kind != cfg.optimizer) {
    throw ConfigError("optimizer state is for " + std::string(ToString(state.kind)) +
                      ", config asks for " + std::string(ToString(cfg.optimizer)));
  }
  for (auto& [name, tensor] : params) {
    for (double g : tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient for parameter '" + name + "'");
    }
  }
  ++state.step;
  const double lr = cfg.LearningRate();
  for (auto& [name, tensor] : params) {
    const auto grad = tensor.grad();
    std::vector<double> theta(tensor.data().begin(), tensor.data().end());
    auto& m = state.first[name];
    if (m.empty()) m.assign(theta.size(), 0.0);
    if (cfg.optimizer == OptimizerKind::kSgd) {
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = cfg.momentum * m[i] + grad[i];
        theta[i] -= lr * m[i];
      }
    } else {
      auto& v = state.second[name];
      if (v.empty()) v.assign(theta.size(), 0.0);
      const double t = static_cast<double>(state.step);
      const double c1 = 1.0 - std::pow(cfg.beta1, t);
      const double c2 = 1.0 - std::pow(cfg.beta2, t);
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
      }
    }
    tensor.Assign(theta);
  }
}

TrainingState StartTraining(Model model, const TrainConfig& cfg) {
  cfg.Validate();
  TrainingState state;
  state.model = std::move(model);
  state.config = cfg;
  state.optimizer.kind = cfg.optimizer;
  state.shuffle_rng = Pcg32(cfg.seed, 1);
  return state;
}

namespace {

// Stacks images[idx] along the batch axis.
std::pair<Tensor, Tensor> AssembleBatch(const std::vector<LabelledImage>& data,
                                        std::span<const int> indices) {
  const Shape s = data[indices.front()].image.shape();
  const std::size_t image_size = s.numel();
  const std::size_t mask_size = static_cast<std::size_t>(s.h) * s.w;
  std::vector<double> images;
  std::vector<double> masks;
  images.reserve(image_size * indices.size());
  masks.reserve(mask_size * indices.size());
  for (int idx : indices) {
    const auto& item = data[idx];
    if (!(item.image.shape() == s)) throw ShapeError("train: images differ in shape");
    images.insert(images.end(), item.image.data().begin(), item.image.data().end());
    const Tensor target = item.TargetMask();
    masks.insert(masks.end(), target.data().begin(), target.data().end());
  }
  const int n = static_cast<int>(indices.size());
  return {Tensor::FromData({n, s.c, s.h, s.w}, std::move(images)),
          Tensor::FromData({n, 1, s.h, s.w}, std::move(masks))};
}

}  // namespace

std::vector<EpochLog> Train(TrainingState& state, const std::vector<LabelledImage>& data,
                            int until_epoch, const std::filesystem::path& checkpoint_path,
                            const std::function<void(const EpochLog&)>& on_epoch) {
  const TrainConfig& cfg = state.config;
  cfg.Validate();
  if (data.empty()) throw ConfigError("train: empty training split");
  std::vector<EpochLog> log;
  std::vector<int> order(data.size());
  while (state.epoch < until_epoch) {
    const int epoch = state.epoch + 1;
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[state.shuffle_rng.UniformInt(0, static_cast<int>(i))]);
    }
    double total = 0.0;
    int batches = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const std::size_t count = std::min<std::size_t>(cfg.batch_size, order.size() - first);
      const int batch_index = batches;
      try {
        auto [images, targets] =
            AssembleBatch(data, std::span<const int>(order).subspan(first, count));
        for (auto& [name, p] : state.model.params) p.ZeroGrad();
        Tensor loss =
            SegLossFromLogits(ForwardLogits(state.model, images), targets, cfg.w_bce, cfg.w_dice);
        Backward(loss);
        OptimizerStep(state.model.params, state.optimizer, cfg);
        total += loss.item();
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(batch_index) + ": " + e.what());
      }
      ++batches;
    }
    state.epoch = epoch;
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    EpochLog entry{epoch, total / batches, elapsed.count()};
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    const bool periodic = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
    if (!checkpoint_path.empty() && (periodic || epoch == until_epoch)) {
      SaveCheckpoint(checkpoint_path, state);
    }
  }
  return log;
}

std::string FormatTrainingLog(const std::vector<EpochLog>& log) {
  std::string out = "epoch,mean_loss,seconds\n";
  char buf[96];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.3f\n", e.epoch, e.mean_loss, e.seconds);
    out += buf;
  }
  return out;
}

}  // namespace attnseg
