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

// attnseg command-line driver: gen, train, eval, gradcheck, bench.
//
// Every subcommand accepts --config FILE (JSON). Explicit flags override the
// file. The resolved config is printed as one JSON line before any work and
// can be fed back through --config to repeat the run.
//
// Exit codes: 0 success, 1 check failure, 2 usage/config, 3 I/O.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "attnseg/attention.hpp"
#include "attnseg/config.hpp"
#include "attnseg/dataset.hpp"
#include "attnseg/error.hpp"
#include "attnseg/metrics.hpp"
#include "attnseg/model.hpp"
#include "attnseg/pipeline.hpp"
#include "attnseg/trainer.hpp"
#include "json.hpp"

namespace {

using attnseg::ConfigError;
using attnseg::IoError;
using nlohmann::json;
using nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitCheck = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

// Raised when a verification (gradcheck) fails; maps to exit 1.
struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json ReadConfigFile(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open config file");
  try {
    json j = json::parse(in);
    if (!j.is_object()) throw ConfigError(path + ": config must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// Removes and returns j[key] when present.
json Take(json& j, const std::string& key) {
  auto it = j.find(key);
  if (it == j.end()) return nullptr;
  json v = *it;
  j.erase(it);
  return v;
}

template <typename T>
void TakeInto(json& j, const std::string& key, T& out) {
  json v = Take(j, key);
  if (v.is_null()) return;
  try {
    out = v.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

void RejectLeftovers(const json& j, const std::string& command) {
  for (const auto& [key, value] : j.items()) {
    throw ConfigError(command + " config: unknown key '" + key + "'");
  }
}

void CheckCommand(json& j, const std::string& command) {
  json v = Take(j, "command");
  if (!v.is_null() && v != command) {
    throw ConfigError("config file is for '" + v.dump() + "', not '" + command + "'");
  }
}

void Echo(const ordered_json& j) { std::cout << j.dump() << std::endl; }

void WriteText(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path, "cannot open for writing");
  out << text;
  if (!out) throw IoError(path, "write failed");
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string config;
  std::string out;
  attnseg::GenConfig gen;
  std::string difficulty = "easy";
};

int RunGen(const GenArgs& args, const CLI::App& cmd) {
  json file = ReadConfigFile(args.config);
  CheckCommand(file, "gen");
  std::string out;
  TakeInto(file, "out", out);
  json gen_json = Take(file, "gen");
  RejectLeftovers(file, "gen");
  attnseg::GenConfig cfg =
      gen_json.is_null() ? attnseg::GenConfig{} : attnseg::GenConfigFromJson(gen_json);
  if (cmd.count("--out")) out = args.out;
  if (cmd.count("--count")) cfg.count = args.gen.count;
  if (cmd.count("--size")) cfg.image_size = args.gen.image_size;
  if (cmd.count("--seed")) cfg.seed = args.gen.seed;
  if (cmd.count("--difficulty")) cfg.difficulty = attnseg::ParseDifficulty(args.difficulty);
  if (cmd.count("--min-blobs")) cfg.min_blobs = args.gen.min_blobs;
  if (cmd.count("--max-blobs")) cfg.max_blobs = args.gen.max_blobs;
  if (cmd.count("--train-fraction")) cfg.train_fraction = args.gen.train_fraction;
  if (out.empty()) throw ConfigError("gen: --out is required");
  cfg.Validate();
  Echo({{"command", "gen"}, {"out", out}, {"gen", attnseg::ToJson(cfg)}});
  const auto manifest = attnseg::GenerateDataset(cfg, out);
  std::cout << "wrote " << cfg.count << " images to " << out << " (" << manifest.train.size()
            << " train / " << manifest.test.size() << " test)" << std::endl;
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out = "model.ckpt";
  std::string log;
  std::string resume;
  std::string attention = "none";
  std::string optimizer = "sgd";
  bool c2f = false;
  int epochs = 50;
  int batch = 4;
  std::uint64_t seed = 1;
  std::uint64_t model_seed = 1;
  double lr = 0.0;
  int checkpoint_every = 0;
  int heads = 4;
  int extent = 0;
  int repeats = 1;
  double tau = 0.5;
};

int RunTrain(const TrainArgs& args, const CLI::App& cmd) {
  json file = ReadConfigFile(args.config);
  CheckCommand(file, "train");
  std::string data, out = args.out, log, resume;
  json model_seed_json;
  TakeInto(file, "data", data);
  TakeInto(file, "out", out);
  TakeInto(file, "log", log);
  TakeInto(file, "resume", resume);
  model_seed_json = Take(file, "model_seed");
  json model_json = Take(file, "model");
  json train_json = Take(file, "train");
  RejectLeftovers(file, "train");
  attnseg::ModelConfig mcfg =
      model_json.is_null() ? attnseg::ModelConfig{} : attnseg::ModelConfigFromJson(model_json);
  attnseg::TrainConfig tcfg =
      train_json.is_null() ? attnseg::TrainConfig{} : attnseg::TrainConfigFromJson(train_json);

  if (cmd.count("--data")) data = args.data;
  if (cmd.count("--out")) out = args.out;
  if (cmd.count("--log")) log = args.log;
  if (cmd.count("--resume")) resume = args.resume;
  if (cmd.count("--attention")) mcfg.attention.kind = attnseg::ParseAttentionKind(args.attention);
  if (cmd.count("--c2f")) mcfg.use_c2f = args.c2f;
  if (cmd.count("--heads")) mcfg.attention.mhsa_heads = args.heads;
  if (cmd.count("--extent")) mcfg.attention.mhsa_extent = args.extent;
  if (cmd.count("--repeats")) mcfg.attention_repeats = args.repeats;
  if (cmd.count("--tau")) mcfg.instance_threshold = args.tau;
  if (cmd.count("--epochs")) tcfg.epochs = args.epochs;
  if (cmd.count("--batch")) tcfg.batch_size = args.batch;
  if (cmd.count("--seed")) tcfg.seed = args.seed;
  // The model seed follows the training seed unless given explicitly.
  std::uint64_t model_seed = tcfg.seed;
  if (!model_seed_json.is_null()) {
    if (!model_seed_json.is_number_unsigned()) throw ConfigError("train: bad model_seed");
    model_seed = model_seed_json.get<std::uint64_t>();
  }
  if (cmd.count("--model-seed")) model_seed = args.model_seed;
  if (cmd.count("--optimizer")) tcfg.optimizer = attnseg::ParseOptimizerKind(args.optimizer);
  if (cmd.count("--lr")) tcfg.lr = args.lr;
  if (cmd.count("--checkpoint-every")) tcfg.checkpoint_every = args.checkpoint_every;
  if (data.empty()) throw ConfigError("train: --data is required");
  if (log.empty()) log = out + ".log.csv";

  const auto manifest = attnseg::LoadManifest(data);
  mcfg.input_size = manifest.size;
  mcfg.Validate();
  tcfg.Validate();

  Echo({{"command", "train"},
        {"data", data},
        {"out", out},
        {"log", log},
        {"resume", resume},
        {"model_seed", model_seed},
        {"model", attnseg::ToJson(mcfg)},
        {"train", attnseg::ToJson(tcfg)}});

  attnseg::TrainingState state;
  if (!resume.empty()) {
    state = attnseg::LoadCheckpoint(resume);
    if (!(state.model.config == mcfg)) {
      throw ConfigError("train: --resume checkpoint was built for a different model config");
    }
    state.config = tcfg;
  } else {
    state = attnseg::StartTraining(attnseg::BuildModel(mcfg, model_seed), tcfg);
  }
  const auto images = attnseg::LoadSplit(data, manifest.train);
  std::cout << "variant " << attnseg::VariantName(mcfg) << ", "
            << state.model.ParameterCount() << " parameters, " << images.size()
            << " training images" << std::endl;
  const auto epochs = attnseg::Train(state, images, tcfg.epochs, out, [](const auto& e) {
    std::printf("epoch %d  loss %.6f  %.2fs\n", e.epoch, e.mean_loss, e.seconds);
    std::fflush(stdout);
  });
  WriteText(log, attnseg::FormatTrainingLog(epochs));
  std::cout << "checkpoint " << out << ", log " << log << std::endl;
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string config;
  std::string data;
  std::string model;
  std::string report = "report.json";
  std::string csv;
  std::string split = "test";
  double iou = 0.5;
  double tau = 0.5;
  bool self_test = false;
};

int RunEval(const EvalArgs& args, const CLI::App& cmd) {
  json file = ReadConfigFile(args.config);
  CheckCommand(file, "eval");
  std::string data, model_path, report = args.report, csv, split = args.split;
  double iou = 0.5;
  json tau_json;
  bool self_test = false;
  TakeInto(file, "data", data);
  TakeInto(file, "model", model_path);
  TakeInto(file, "report", report);
  TakeInto(file, "csv", csv);
  TakeInto(file, "split", split);
  TakeInto(file, "iou", iou);
  tau_json = Take(file, "tau");
  TakeInto(file, "self_test", self_test);
  RejectLeftovers(file, "eval");
  if (cmd.count("--data")) data = args.data;
  if (cmd.count("--model")) model_path = args.model;
  if (cmd.count("--report")) report = args.report;
  if (cmd.count("--csv")) csv = args.csv;
  if (cmd.count("--split")) split = args.split;
  if (cmd.count("--iou")) iou = args.iou;
  if (cmd.count("--self-test")) self_test = args.self_test;
  if (data.empty()) throw ConfigError("eval: --data is required");
  if (!self_test && model_path.empty()) throw ConfigError("eval: --model is required");
  if (!(iou > 0.0 && iou <= 1.0)) throw ConfigError("eval: --iou must lie in (0,1]");
  if (split != "test" && split != "train") throw ConfigError("eval: --split must be test|train");

  attnseg::TrainingState state;
  std::string variant = "ground-truth";
  double tau = 0.5;
  if (!self_test) {
    state = attnseg::LoadCheckpoint(model_path);
    variant = attnseg::VariantName(state.model.config);
    tau = state.model.config.instance_threshold;
  }
  if (!tau_json.is_null()) tau = tau_json.get<double>();
  if (cmd.count("--tau")) tau = args.tau;
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("eval: --tau must lie in (0,1)");

  ordered_json resolved = {{"command", "eval"}, {"data", data},  {"model", model_path},
                           {"report", report},  {"csv", csv},    {"split", split},
                           {"iou", iou},        {"tau", tau},    {"self_test", self_test}};
  Echo(resolved);
  const auto manifest = attnseg::LoadManifest(data);
  const auto items = attnseg::LoadSplit(data, split == "test" ? manifest.test : manifest.train);
  const attnseg::EvalReport r = self_test ? attnseg::SelfTestReport(items, iou)
                                          : attnseg::EvaluateModel(state.model, items, iou, tau);
  ordered_json report_config = resolved;
  report_config.erase("command");
  report_config["variant"] = variant;
  if (!self_test) report_config["model_config"] = attnseg::ToJson(state.model.config);
  WriteText(report, attnseg::ReportToJson(r, report_config.dump()));
  if (!csv.empty()) WriteText(csv, attnseg::ReportToCsv(r, variant));
  for (const auto& [name, b] : {std::pair{"box", &r.box}, std::pair{"mask", &r.mask}}) {
    std::printf("%-4s  P %.4f  R %.4f  F1 %.4f  AP50 %.4f  IoU %.4f  (tp %ld fp %ld fn %ld)\n",
                name, b->precision, b->recall, b->f1, b->ap50, b->dataset_iou, b->tp, b->fp,
                b->fn);
  }
  std::printf("pixel P %.4f  R %.4f\n", r.pixel_precision, r.pixel_recall);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::string config;
  std::string block = "all";
  int seeds = 20;
};

int RunGradcheck(const GradcheckArgs& args, const CLI::App& cmd) {
  json file = ReadConfigFile(args.config);
  CheckCommand(file, "gradcheck");
  std::string block = "all";
  int seeds = 20;
  TakeInto(file, "block", block);
  TakeInto(file, "seeds", seeds);
  RejectLeftovers(file, "gradcheck");
  if (cmd.count("--block")) block = args.block;
  if (cmd.count("--seeds")) seeds = args.seeds;
  const auto& known = attnseg::GradCheckBlocks();
  std::vector<std::string> blocks;
  if (block == "all") {
    blocks = known;
  } else if (std::find(known.begin(), known.end(), block) != known.end()) {
    blocks = {block};
  } else {
    throw ConfigError("gradcheck: unknown block '" + block + "'");
  }
  if (seeds < 1) throw ConfigError("gradcheck: --seeds must be >= 1");
  Echo({{"command", "gradcheck"}, {"block", block}, {"seeds", seeds}});

  bool ok = true;
  std::printf("block,seed,max_rel_error,checked,skipped\n");
  for (const auto& b : blocks) {
    double worst = 0.0;
    for (int s = 1; s <= seeds; ++s) {
      const auto r = attnseg::RunBlockGradCheck(b, static_cast<std::uint64_t>(s));
      worst = std::max(worst, r.max_rel_error);
      std::printf("%s,%d,%.3e,%zu,%zu\n", b.c_str(), s, r.max_rel_error, r.checked, r.skipped);
    }
    const double tol = attnseg::GradCheckTolerance(b);
    const bool pass = worst <= tol;
    ok = ok && pass;
    std::printf("# %s max %.3e (tolerance %.0e) %s\n", b.c_str(), worst, tol,
                pass ? "ok" : "FAIL");
  }
  if (!ok) throw CheckFailed("gradient check exceeded tolerance");
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string config;
  std::string block = "all";
  std::string shape = "1,128,8,8";
  std::string csv = "bench.csv";
  int iters = 20;
  int heads = 4;
};

std::vector<int> ParseShape(const std::string& text) {
  std::vector<int> dims;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      dims.push_back(std::stoi(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ConfigError("bench: --shape must be N,C,H,W integers, got '" + text + "'");
    }
  }
  if (dims.size() != 4 || *std::min_element(dims.begin(), dims.end()) < 1) {
    throw ConfigError("bench: --shape must be four positive integers N,C,H,W");
  }
  return dims;
}

double Percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()))) - 1;
  return v[std::min(idx, v.size() - 1)];
}

int RunBench(const BenchArgs& args, const CLI::App& cmd) {
  json file = ReadConfigFile(args.config);
  CheckCommand(file, "bench");
  std::string block = args.block, shape_text = args.shape, csv = args.csv;
  int iters = args.iters, heads = args.heads;
  TakeInto(file, "block", block);
  TakeInto(file, "shape", shape_text);
  TakeInto(file, "csv", csv);
  TakeInto(file, "iters", iters);
  TakeInto(file, "heads", heads);
  RejectLeftovers(file, "bench");
  if (cmd.count("--block")) block = args.block;
  if (cmd.count("--shape")) shape_text = args.shape;
  if (cmd.count("--csv")) csv = args.csv;
  if (cmd.count("--iters")) iters = args.iters;
  if (cmd.count("--heads")) heads = args.heads;
  if (iters < 1) throw ConfigError("bench: --iters must be >= 1");
  const auto dims = ParseShape(shape_text);
  std::vector<std::string> blocks;
  if (block == "all") {
    blocks = {"none", "coord", "cbam", "mhsa", "dual", "c2f"};
  } else {
    blocks = {block};
  }
  for (const auto& b : blocks) {
    if (b != "c2f") attnseg::ParseAttentionKind(b);
  }
  Echo({{"command", "bench"},
        {"block", block},
        {"shape", shape_text},
        {"csv", csv},
        {"iters", iters},
        {"heads", heads}});

  const attnseg::Shape shape{dims[0], dims[1], dims[2], dims[3]};
  attnseg::Pcg32 rng(1, 7);
  std::vector<double> xv(shape.numel());
  for (auto& v : xv) v = rng.Uniform(-1.0, 1.0);
  std::string rows = "block,iter,forward_ms,forward_backward_ms\n";
  std::map<std::string, double> medians;
  for (const auto& b : blocks) {
    std::function<attnseg::Tensor(const attnseg::Tensor&)> fn;
    std::vector<attnseg::Tensor> params;
    attnseg::AttentionParams ap;
    std::map<std::string, attnseg::Tensor> c2f;
    attnseg::AttentionConfig cfg;
    if (b == "c2f") {
      if (shape.c % 2 != 0) throw ConfigError("bench: c2f needs an even channel count");
      for (const auto& [name, s] : attnseg::C2fParamShapes(shape.c, 2, "")) {
        std::vector<double> v(s.numel());
        for (auto& x : v) x = rng.Uniform(-0.1, 0.1);
        c2f[name] = attnseg::Tensor::FromData(s, std::move(v), true);
      }
      fn = [&](const attnseg::Tensor& x) { return attnseg::C2fBlock(x, c2f, "", 2); };
    } else {
      cfg.kind = attnseg::ParseAttentionKind(b);
      cfg.channels = shape.c;
      cfg.height = shape.h;
      cfg.width = shape.w;
      cfg.mhsa_heads = heads;
      cfg.Validate();
      ap = attnseg::InitAttentionParams(cfg, rng);
      fn = [&](const attnseg::Tensor& x) { return attnseg::ApplyAttention(x, ap, cfg); };
    }
    const attnseg::Tensor x = attnseg::Tensor::FromData(shape, xv, true);
    std::vector<double> fwd, both;
    for (int i = 0; i < iters + 3; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      attnseg::Tensor y = fn(x);
      const auto t1 = std::chrono::steady_clock::now();
      attnseg::Backward(attnseg::Sum(fn(x)));
      const auto t2 = std::chrono::steady_clock::now();
      if (i < 3) continue;  // warmup
      fwd.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      both.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%s,%d,%.4f,%.4f\n", b.c_str(), i - 3, fwd.back(),
                    both.back());
      rows += buf;
    }
    medians[b] = Percentile(both, 0.5);
    std::printf("%-5s forward median %.3f ms p90 %.3f ms | forward+backward median %.3f ms p90 %.3f ms\n",
                b.c_str(), Percentile(fwd, 0.5), Percentile(fwd, 0.9), Percentile(both, 0.5),
                Percentile(both, 0.9));
  }
  if (medians.count("cbam") && medians.count("coord")) {
    std::printf("cbam/coord forward+backward cost ratio %.3f\n",
                medians["cbam"] / medians["coord"]);
  }
  WriteText(csv, rows);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attnseg: attention blocks, toy segmentation model, metrics"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic debris dataset");
  gen_cmd->add_option("--config", gen.config, "JSON config file");
  gen_cmd->add_option("--out", gen.out, "Output directory");
  gen_cmd->add_option("--count", gen.gen.count, "Number of images");
  gen_cmd->add_option("--size", gen.gen.image_size, "Image side in pixels");
  gen_cmd->add_option("--seed", gen.gen.seed, "Generator seed");
  gen_cmd->add_option("--difficulty", gen.difficulty, "easy|hard");
  gen_cmd->add_option("--min-blobs", gen.gen.min_blobs, "Fewest blobs per image");
  gen_cmd->add_option("--max-blobs", gen.gen.max_blobs, "Most blobs per image");
  gen_cmd->add_option("--train-fraction", gen.gen.train_fraction, "Train split fraction");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model variant");
  train_cmd->add_option("--config", train.config, "JSON config file");
  train_cmd->add_option("--data", train.data, "Dataset directory");
  train_cmd->add_option("--out", train.out, "Checkpoint path");
  train_cmd->add_option("--log", train.log, "Log CSV path (default <out>.log.csv)");
  train_cmd->add_option("--resume", train.resume, "Continue from a checkpoint");
  train_cmd->add_option("--attention", train.attention, "none|coord|cbam|mhsa|dual");
  train_cmd->add_flag("--c2f", train.c2f, "Use C2f stage blocks");
  train_cmd->add_option("--heads", train.heads, "Self-attention heads");
  train_cmd->add_option("--extent", train.extent, "Self-attention extent (0 = global)");
  train_cmd->add_option("--repeats", train.repeats, "Stacked self-attention blocks");
  train_cmd->add_option("--tau", train.tau, "Instance threshold stored with the model");
  train_cmd->add_option("--epochs", train.epochs, "Epochs");
  train_cmd->add_option("--batch", train.batch, "Batch size");
  train_cmd->add_option("--seed", train.seed, "Shuffle seed (and model seed unless given)");
  train_cmd->add_option("--model-seed", train.model_seed, "Parameter init seed");
  train_cmd->add_option("--optimizer", train.optimizer, "sgd|adam");
  train_cmd->add_option("--lr", train.lr, "Learning rate");
  train_cmd->add_option("--checkpoint-every", train.checkpoint_every, "Checkpoint interval");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--config", eval.config, "JSON config file");
  eval_cmd->add_option("--data", eval.data, "Dataset directory");
  eval_cmd->add_option("--model", eval.model, "Checkpoint path");
  eval_cmd->add_option("--report", eval.report, "Report JSON path");
  eval_cmd->add_option("--csv", eval.csv, "Table-row CSV path");
  eval_cmd->add_option("--split", eval.split, "test|train");
  eval_cmd->add_option("--iou", eval.iou, "IoU match threshold");
  eval_cmd->add_option("--tau", eval.tau, "Instance threshold");
  eval_cmd->add_flag("--self-test", eval.self_test, "Score ground truth against itself");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc_cmd->add_option("--config", gc.config, "JSON config file");
  gc_cmd->add_option("--block", gc.block,
                     "coord|cbam|mhsa|mhsa-local|dual|c2f|loss|model|all");
  gc_cmd->add_option("--seeds", gc.seeds, "Number of seeds");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Time attention blocks");
  bench_cmd->add_option("--config", bench.config, "JSON config file");
  bench_cmd->add_option("--block", bench.block, "none|coord|cbam|mhsa|dual|c2f|all");
  bench_cmd->add_option("--shape", bench.shape, "N,C,H,W");
  bench_cmd->add_option("--iters", bench.iters, "Timed iterations");
  bench_cmd->add_option("--heads", bench.heads, "Self-attention heads");
  bench_cmd->add_option("--csv", bench.csv, "Per-iteration CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen_cmd) return RunGen(gen, *gen_cmd);
    if (*train_cmd) return RunTrain(train, *train_cmd);
    if (*eval_cmd) return RunEval(eval, *eval_cmd);
    if (*gc_cmd) return RunGradcheck(gc, *gc_cmd);
    if (*bench_cmd) return RunBench(bench, *bench_cmd);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const attnseg::ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const attnseg::ParseError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const attnseg::CheckpointError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const CheckFailed& e) {
    std::cerr << "check failed: " << e.what() << "\n";
    return kExitCheck;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheck;
  }
  return kExitConfig;
}
