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

#include "attnseg/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>

#include "attnseg/error.hpp"
#include "json.hpp"

namespace attnseg {

double IouBox(const Box& a, const Box& b) {
  if (a.x_min >= a.x_max || a.y_min >= a.y_max || b.x_min >= b.x_max || b.y_min >= b.y_max) {
    throw ConfigError("iou_box: malformed box (min must be < max)");
  }
  const long iw = std::max(0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const long ih = std::max(0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const long inter = iw * ih;
  return static_cast<double>(inter) / static_cast<double>(a.area() + b.area() - inter);
}

double IouMask(const Mask& a, const Mask& b) {
  if (a.width != b.width || a.height != b.height) {
    throw ShapeError("iou_mask: mask sizes differ");
  }
  long inter = 0;
  long uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool x = a.bits[i] != 0;
    const bool y = b.bits[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  if (uni == 0) throw ConfigError("iou_mask: both masks are empty");
  return static_cast<double>(inter) / static_cast<double>(uni);
}

MatchResult MatchByIou(std::span<const double> confidences,
                       const std::vector<std::vector<double>>& iou, int ground_truths,
                       double threshold) {
  const int dets = static_cast<int>(confidences.size());
  std::vector<int> order(dets);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return confidences[a] > confidences[b]; });
  std::vector<bool> gt_taken(ground_truths, false);
  std::vector<bool> det_matched(dets, false);
  MatchResult result;
  for (int d : order) {
    int best = -1;
    double best_iou = -1.0;
    for (int g = 0; g < ground_truths; ++g) {
      if (gt_taken[g]) continue;
      if (iou[d][g] > best_iou) {
        best_iou = iou[d][g];
        best = g;
      }
    }
    if (best >= 0 && best_iou >= threshold) {
      gt_taken[best] = true;
      det_matched[d] = true;
      result.matches.push_back({d, best, best_iou});
    }
  }
  for (int d = 0; d < dets; ++d) {
    if (!det_matched[d]) result.unmatched_detections.push_back(d);
  }
  for (int g = 0; g < ground_truths; ++g) {
    if (!gt_taken[g]) result.unmatched_ground_truths.push_back(g);
  }
  return result;
}

namespace {

std::vector<std::vector<double>> IouTable(std::span<const Detection> detections,
                                          std::span<const GroundTruth> truths, IouKind kind) {
  std::vector<std::vector<double>> table(detections.size(),
                                         std::vector<double>(truths.size(), 0.0));
  for (std::size_t d = 0; d < detections.size(); ++d) {
    for (std::size_t g = 0; g < truths.size(); ++g) {
      table[d][g] = kind == IouKind::kBox ? IouBox(detections[d].box, truths[g].box)
                                          : IouMask(detections[d].mask, truths[g].mask);
    }
  }
  return table;
}

std::vector<double> Confidences(std::span<const Detection> detections) {
  std::vector<double> c;
  c.reserve(detections.size());
  for (const auto& d : detections) c.push_back(d.confidence);
  return c;
}

}  // namespace

MatchResult MatchDetections(std::span<const Detection> detections,
                            std::span<const GroundTruth> truths, IouKind kind, double threshold) {
  return MatchByIou(Confidences(detections), IouTable(detections, truths, kind),
                    static_cast<int>(truths.size()), threshold);
}

double FBeta(double precision, double recall, double beta) {
  if (!(beta > 0.0)) throw ConfigError("f_beta: beta must be positive");
  if (precision + recall <= 0.0) return 0.0;
  const double b2 = beta * beta;
  return (1.0 + b2) * precision * recall / (b2 * precision + recall);
}

double DatasetIou(long tp, long fp, long fn) {
  if (tp < 0 || fp < 0 || fn < 0) throw ConfigError("dataset_iou: negative count");
  if (tp + fp + fn == 0) throw ConfigError("dataset_iou: all counts are zero");
  return static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
}

double AveragePrecision(std::vector<RankedDetection> detections, long total_ground_truths) {
  if (total_ground_truths <= 0) {
    throw ConfigError("average_precision: no ground truth, recall is undefined");
  }
  std::stable_sort(detections.begin(), detections.end(),
                   [](const RankedDetection& a, const RankedDetection& b) {
                     if (a.confidence != b.confidence) return a.confidence > b.confidence;
                     if (a.image_id != b.image_id) return a.image_id < b.image_id;
                     return a.index < b.index;
                   });
  const std::size_t n = detections.size();
  std::vector<double> precision(n);
  long tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    tp += detections[k].true_positive;
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
  }
  // Non-increasing envelope, then one recall step of 1/G per true positive.
  for (std::size_t k = n; k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double area = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (detections[k].true_positive) area += precision[k];
  }
  return area / static_cast<double>(total_ground_truths);
}

double AveragePrecision(const DetectionsByImage& detections, const TruthByImage& truths,
                        IouKind kind, double threshold) {
  std::vector<RankedDetection> ranked;
  long total = 0;
  for (const auto& [id, gts] : truths) total += static_cast<long>(gts.size());
  static const std::vector<GroundTruth> kNoTruth;
  for (const auto& [id, dets] : detections) {
    auto it = truths.find(id);
    const auto& gts = it == truths.end() ? kNoTruth : it->second;
    const MatchResult m = MatchDetections(dets, gts, kind, threshold);
    std::vector<bool> tp(dets.size(), false);
    for (const auto& match : m.matches) tp[match.detection] = true;
    for (std::size_t d = 0; d < dets.size(); ++d) {
      ranked.push_back({dets[d].confidence, tp[d], id, static_cast<int>(d)});
    }
  }
  return AveragePrecision(std::move(ranked), total);
}

namespace {

BlockMetrics Block(const DetectionsByImage& predictions, const TruthByImage& truths,
                   IouKind kind, double threshold) {
  BlockMetrics b;
  std::vector<RankedDetection> ranked;
  for (const auto& [id, dets] : predictions) {
    const auto& gts = truths.at(id);
    const MatchResult m = MatchDetections(dets, gts, kind, threshold);
    b.tp += static_cast<long>(m.matches.size());
    b.fp += static_cast<long>(m.unmatched_detections.size());
    b.fn += static_cast<long>(m.unmatched_ground_truths.size());
    std::vector<bool> tp(dets.size(), false);
    for (const auto& match : m.matches) tp[match.detection] = true;
    for (std::size_t d = 0; d < dets.size(); ++d) {
      ranked.push_back({dets[d].confidence, tp[d], id, static_cast<int>(d)});
    }
  }
  b.precision_defined = b.tp + b.fp > 0;
  b.recall_defined = b.tp + b.fn > 0;
  b.precision = b.precision_defined ? static_cast<double>(b.tp) / (b.tp + b.fp) : 0.0;
  b.recall = b.recall_defined ? static_cast<double>(b.tp) / (b.tp + b.fn) : 0.0;
  b.f1 = FBeta(b.precision, b.recall, 1.0);
  b.ap_defined = b.tp + b.fn > 0;
  b.ap50 = b.ap_defined ? AveragePrecision(std::move(ranked), b.tp + b.fn) : 0.0;
  b.iou_defined = b.tp + b.fp + b.fn > 0;
  b.dataset_iou = b.iou_defined ? DatasetIou(b.tp, b.fp, b.fn) : 0.0;
  return b;
}

}  // namespace

EvalReport Evaluate(const DetectionsByImage& predictions, const TruthByImage& truths,
                    double iou_threshold) {
  std::set<int> only_pred;
  std::set<int> only_truth;
  for (const auto& [id, d] : predictions) {
    if (!truths.contains(id)) only_pred.insert(id);
  }
  for (const auto& [id, t] : truths) {
    if (!predictions.contains(id)) only_truth.insert(id);
  }
  if (!only_pred.empty() || !only_truth.empty()) {
    std::string msg = "evaluate: image sets differ;";
    if (!only_pred.empty()) {
      msg += " only in predictions:";
      for (int id : only_pred) msg += " " + std::to_string(id);
      msg += ";";
    }
    if (!only_truth.empty()) {
      msg += " only in ground truth:";
      for (int id : only_truth) msg += " " + std::to_string(id);
    }
    throw ConfigError(msg);
  }

  EvalReport report;
  report.box = Block(predictions, truths, IouKind::kBox, iou_threshold);
  report.mask = Block(predictions, truths, IouKind::kMask, iou_threshold);

  long hit = 0;
  long predicted = 0;
  long actual = 0;
  for (const auto& [id, dets] : predictions) {
    const auto& gts = truths.at(id);
    std::vector<std::uint8_t> pred_union;
    std::vector<std::uint8_t> truth_union;
    auto accumulate = [](std::vector<std::uint8_t>& acc, const Mask& m) {
      if (acc.empty()) acc.assign(m.bits.size(), 0);
      if (acc.size() != m.bits.size()) throw ShapeError("evaluate: mask sizes differ");
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] |= m.bits[i];
    };
    for (const auto& d : dets) accumulate(pred_union, d.mask);
    for (const auto& g : gts) accumulate(truth_union, g.mask);
    const std::size_t n = std::max(pred_union.size(), truth_union.size());
    pred_union.resize(n, 0);
    truth_union.resize(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      predicted += pred_union[i];
      actual += truth_union[i];
      hit += pred_union[i] & truth_union[i];
    }
  }
  report.pixel_precision = predicted > 0 ? static_cast<double>(hit) / predicted : 0.0;
  report.pixel_recall = actual > 0 ? static_cast<double>(hit) / actual : 0.0;
  return report;
}

namespace {

nlohmann::ordered_json BlockJson(const BlockMetrics& b) {
  nlohmann::ordered_json j;
  j["tp"] = b.tp;
  j["fp"] = b.fp;
  j["fn"] = b.fn;
  j["precision"] = b.precision;
  j["recall"] = b.recall;
  j["f1"] = b.f1;
  j["ap50"] = b.ap50;
  j["dataset_iou"] = b.dataset_iou;
  j["precision_defined"] = b.precision_defined;
  j["recall_defined"] = b.recall_defined;
  j["ap_defined"] = b.ap_defined;
  j["iou_defined"] = b.iou_defined;
  return j;
}

}  // namespace

std::string ReportToJson(const EvalReport& report, const std::string& config_json) {
  nlohmann::ordered_json j;
  j["box"] = BlockJson(report.box);
  auto mask = BlockJson(report.mask);
  mask["pixel_precision"] = report.pixel_precision;
  mask["pixel_recall"] = report.pixel_recall;
  j["mask"] = std::move(mask);
  j["config"] = config_json.empty() ? nlohmann::ordered_json::object()
                                    : nlohmann::ordered_json::parse(config_json);
  return j.dump(2) + "\n";
}

std::string ReportToCsv(const EvalReport& report, const std::string& model_name) {
  std::string out = "Model,Block,Precision,Recall,mAP_0.5,F1-Score,IoU\n";
  char buf[256];
  for (const auto& [name, b] : {std::pair{"box", &report.box}, std::pair{"mask", &report.mask}}) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f\n", model_name.c_str(), name,
                  b->precision, b->recall, b->ap50, b->f1, b->dataset_iou);
    out += buf;
  }
  return out;
}

}  // namespace attnseg
