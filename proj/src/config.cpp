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

#include "attnseg/config.hpp"

#include <functional>
#include <map>
#include <string>
#include <type_traits>

#include "attnseg/error.hpp"

namespace attnseg {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

using Setter = std::function<void(const json&)>;

// Applies each key of an object through the setter table; unknown keys and
// type mismatches are configuration errors.
void ApplyKeys(const json& j, const std::map<std::string, Setter>& setters,
               std::string_view what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError(std::string(what) + " config: unknown key '" + key + "'");
    }
    try {
      it->second(value);
    } catch (const std::exception& e) {
      throw ConfigError(std::string(what) + " config: bad value for '" + key + "': " + e.what());
    }
  }
}

template <typename T>
Setter Set(T& field) {
  return [&field](const json& v) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("expected a boolean");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError("expected a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("expected an integer");
    } else {
      if (!v.is_number()) throw ConfigError("expected a number");
    }
    field = v.get<T>();
  };
}

}  // namespace

ordered_json ToJson(const ModelConfig& cfg) {
  ordered_json j;
  j["in_channels"] = cfg.in_channels;
  j["base_width"] = cfg.base_width;
  j["depth"] = cfg.depth;
  j["input_size"] = cfg.input_size;
  j["attention"] = std::string(ToString(cfg.attention.kind));
  j["coord_reduction"] = cfg.attention.coord_reduction;
  j["cbam_reduction"] = cfg.attention.cbam_reduction;
  j["mhsa_heads"] = cfg.attention.mhsa_heads;
  j["mhsa_extent"] = cfg.attention.mhsa_extent;
  j["attention_repeats"] = cfg.attention_repeats;
  j["use_c2f"] = cfg.use_c2f;
  j["c2f_bottlenecks"] = cfg.c2f_bottlenecks;
  j["instance_threshold"] = cfg.instance_threshold;
  return j;
}

ordered_json ToJson(const TrainConfig& cfg) {
  ordered_json j;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["optimizer"] = std::string(ToString(cfg.optimizer));
  j["lr"] = cfg.LearningRate();
  j["momentum"] = cfg.momentum;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["epsilon"] = cfg.epsilon;
  j["seed"] = cfg.seed;
  j["w_bce"] = cfg.w_bce;
  j["w_dice"] = cfg.w_dice;
  j["checkpoint_every"] = cfg.checkpoint_every;
  return j;
}

ordered_json ToJson(const GenConfig& cfg) {
  ordered_json j;
  j["image_size"] = cfg.image_size;
  j["count"] = cfg.count;
  j["seed"] = cfg.seed;
  j["difficulty"] = std::string(ToString(cfg.difficulty));
  j["min_blobs"] = cfg.min_blobs;
  j["max_blobs"] = cfg.max_blobs;
  j["train_fraction"] = cfg.train_fraction;
  return j;
}

ModelConfig ModelConfigFromJson(const json& j, ModelConfig base) {
  ModelConfig& c = base;
  ApplyKeys(j,
            {{"in_channels", Set(c.in_channels)},
             {"base_width", Set(c.base_width)},
             {"depth", Set(c.depth)},
             {"input_size", Set(c.input_size)},
             {"attention",
              [&](const json& v) {
                c.attention.kind = ParseAttentionKind(v.get<std::string>());
              }},
             {"coord_reduction", Set(c.attention.coord_reduction)},
             {"cbam_reduction", Set(c.attention.cbam_reduction)},
             {"mhsa_heads", Set(c.attention.mhsa_heads)},
             {"mhsa_extent", Set(c.attention.mhsa_extent)},
             {"attention_repeats", Set(c.attention_repeats)},
             {"use_c2f", Set(c.use_c2f)},
             {"c2f_bottlenecks", Set(c.c2f_bottlenecks)},
             {"instance_threshold", Set(c.instance_threshold)}},
            "model");
  return base;
}

TrainConfig TrainConfigFromJson(const json& j, TrainConfig base) {
  TrainConfig& c = base;
  ApplyKeys(j,
            {{"epochs", Set(c.epochs)},
             {"batch_size", Set(c.batch_size)},
             {"optimizer",
              [&](const json& v) { c.optimizer = ParseOptimizerKind(v.get<std::string>()); }},
             {"lr",
              [&](const json& v) {
                if (v.is_null()) {
                  c.lr.reset();
                } else {
                  if (!v.is_number()) throw ConfigError("expected a number");
                  c.lr = v.get<double>();
                }
              }},
             {"momentum", Set(c.momentum)},
             {"beta1", Set(c.beta1)},
             {"beta2", Set(c.beta2)},
             {"epsilon", Set(c.epsilon)},
             {"seed", Set(c.seed)},
             {"w_bce", Set(c.w_bce)},
             {"w_dice", Set(c.w_dice)},
             {"checkpoint_every", Set(c.checkpoint_every)}},
            "train");
  return base;
}

GenConfig GenConfigFromJson(const json& j, GenConfig base) {
  GenConfig& c = base;
  ApplyKeys(j,
            {{"image_size", Set(c.image_size)},
             {"count", Set(c.count)},
             {"seed", Set(c.seed)},
             {"difficulty",
              [&](const json& v) { c.difficulty = ParseDifficulty(v.get<std::string>()); }},
             {"min_blobs", Set(c.min_blobs)},
             {"max_blobs", Set(c.max_blobs)},
             {"train_fraction", Set(c.train_fraction)}},
            "gen");
  return base;
}

std::string VariantName(const ModelConfig& cfg) {
  std::string name(ToString(cfg.attention.kind));
  if (cfg.use_c2f) name += "+c2f";
  return name;
}

}  // namespace attnseg
