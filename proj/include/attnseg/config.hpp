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

#ifndef ATTNSEG_CONFIG_HPP_
#define ATTNSEG_CONFIG_HPP_

#include "attnseg/dataset.hpp"
#include "attnseg/model.hpp"
#include "attnseg/trainer.hpp"
#include "json.hpp"

namespace attnseg {

// JSON views of the configuration structs. The readers start from defaults,
// overwrite the keys present and reject unknown keys with ConfigError.
nlohmann::ordered_json ToJson(const ModelConfig& cfg);
nlohmann::ordered_json ToJson(const TrainConfig& cfg);
nlohmann::ordered_json ToJson(const GenConfig& cfg);

ModelConfig ModelConfigFromJson(const nlohmann::json& j, ModelConfig base = {});
TrainConfig TrainConfigFromJson(const nlohmann::json& j, TrainConfig base = {});
GenConfig GenConfigFromJson(const nlohmann::json& j, GenConfig base = {});

// Human-facing variant name, e.g. "cbam+c2f".
std::string VariantName(const ModelConfig& cfg);

}  // namespace attnseg

#endif  // ATTNSEG_CONFIG_HPP_
