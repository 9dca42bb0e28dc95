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

#ifndef ATTNSEG_PIPELINE_HPP_
#define ATTNSEG_PIPELINE_HPP_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "attnseg/dataset.hpp"
#include "attnseg/metrics.hpp"
#include "attnseg/model.hpp"
#include "attnseg/tensor.hpp"

namespace attnseg {

std::vector<GroundTruth> TruthsOf(const LabelledImage& item);
TruthByImage TruthsOf(const std::vector<LabelledImage>& items);

// Runs the model over every image and extracts instances at `tau`.
DetectionsByImage PredictInstances(const Model& model, const std::vector<LabelledImage>& items,
                                   double tau);

EvalReport EvaluateModel(const Model& model, const std::vector<LabelledImage>& items,
                         double iou_threshold, double tau);

// Ground truth scored against itself (confidence 1); every metric is 1.
EvalReport SelfTestReport(const std::vector<LabelledImage>& items, double iou_threshold);

// Named gradient checks: coord, cbam, mhsa (global), mhsa-local (k = 3),
// dual, c2f, loss, model (loss of a small full model, random parameter
// slice). Inputs and parameters are drawn from PCG32(seed, 7).
const std::vector<std::string>& GradCheckBlocks();
GradCheckResult RunBlockGradCheck(std::string_view block, std::uint64_t seed);
// 1e-5 for blocks, 1e-4 for the end-to-end model check.
double GradCheckTolerance(std::string_view block);

}  // namespace attnseg

#endif  // ATTNSEG_PIPELINE_HPP_
