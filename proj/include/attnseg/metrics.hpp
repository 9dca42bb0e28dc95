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

#ifndef ATTNSEG_METRICS_HPP_
#define ATTNSEG_METRICS_HPP_

#include <map>
#include <span>
#include <string>
#include <vector>

#include "attnseg/geometry.hpp"

namespace attnseg {

// One predicted instance.
struct Detection {
  Mask mask;
  Box box;  // tight bounds of mask
  double confidence = 0.0;
  int image_id = 0;
};

// One ground-truth instance as the evaluator sees it.
struct GroundTruth {
  Mask mask;
  Box box;
};

enum class IouKind { kBox, kMask };

// Throws ConfigError for a malformed box (min >= max on either axis).
double IouBox(const Box& a, const Box& b);
// Throws ShapeError on size mismatch, ConfigError when both masks are empty.
double IouMask(const Mask& a, const Mask& b);

struct Match {
  int detection = 0;
  int ground_truth = 0;
  double iou = 0.0;
  bool operator==(const Match&) const = default;
};

struct MatchResult {
  std::vector<Match> matches;                 // in matching order
  std::vector<int> unmatched_detections;      // FP, ascending
  std::vector<int> unmatched_ground_truths;   // FN, ascending
  bool operator==(const MatchResult&) const = default;
};

// Greedy matching on a precomputed IoU table (iou[d][g]). Detections are
// visited by confidence, descending, ties in input order. Each takes the
// still-unmatched ground truth with the highest IoU (ties: lower index) when
// that IoU >= threshold.
MatchResult MatchByIou(std::span<const double> confidences,
                       const std::vector<std::vector<double>>& iou, int ground_truths,
                       double threshold);

MatchResult MatchDetections(std::span<const Detection> detections,
                            std::span<const GroundTruth> truths, IouKind kind,
                            double threshold = 0.5);

// (1 + b^2) P R / (b^2 P + R); 0 when P + R == 0.
double FBeta(double precision, double recall, double beta);

// tp / (tp + fp + fn). Throws ConfigError when all counts are zero.
double DatasetIou(long tp, long fp, long fn);

// A detection after per-image matching, for the precision-recall walk.
struct RankedDetection {
  double confidence = 0.0;
  bool true_positive = false;
  int image_id = 0;
  int index = 0;  // position within its image
};

// All-point interpolated area under the precision-recall curve. Detections
// are ranked by confidence (ties: image id, then index). Throws ConfigError
// when total_ground_truths == 0.
double AveragePrecision(std::vector<RankedDetection> detections, long total_ground_truths);

using DetectionsByImage = std::map<int, std::vector<Detection>>;
using TruthByImage = std::map<int, std::vector<GroundTruth>>;

// Matches per image, then ranks every detection of the dataset.
double AveragePrecision(const DetectionsByImage& detections, const TruthByImage& truths,
                        IouKind kind, double threshold = 0.5);

struct BlockMetrics {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double ap50 = 0.0;
  double dataset_iou = 0.0;
  // False when the denominator was zero and the value was reported as 0.
  bool precision_defined = true;
  bool recall_defined = true;
  bool ap_defined = true;
  bool iou_defined = true;
};

struct EvalReport {
  BlockMetrics box;
  BlockMetrics mask;
  // Pixel-level diagnostics: union of predicted masks vs union of truth masks.
  double pixel_precision = 0.0;
  double pixel_recall = 0.0;
};

// Throws ConfigError listing ids present in only one of the two maps.
EvalReport Evaluate(const DetectionsByImage& predictions, const TruthByImage& truths,
                    double iou_threshold = 0.5);

// {"box": {...}, "mask": {...}, "config": <config_json>} with config passed
// through verbatim as JSON text.
std::string ReportToJson(const EvalReport& report, const std::string& config_json);

// Header plus one row per block, columns
// Model,Block,Precision,Recall,mAP_0.5,F1-Score,IoU.
std::string ReportToCsv(const EvalReport& report, const std::string& model_name);

}  // namespace attnseg

#endif  // ATTNSEG_METRICS_HPP_
