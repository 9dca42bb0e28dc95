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

// End-to-end acceptance checks. Usage: acceptance <criterion 1..8> <work dir>
// Prints one "criterion N: PASS|FAIL ..." line and exits non-zero on FAIL.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "attnseg/attention.hpp"
#include "attnseg/metrics.hpp"
#include "attnseg/pipeline.hpp"
#include "json.hpp"
#include "oracles.hpp"

namespace {

namespace fs = std::filesystem;
using attnseg::Tensor;
using nlohmann::json;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double Seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

std::string Fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

double Round2(double v) { return std::round(v * 100.0) / 100.0; }

// ---- 1: table arithmetic

struct Row {
  const char* table;
  const char* model;
  double p, r, f1, iou;
};

const Row kRows[] = {
    {"box", "YOLOv7", 0.695, 0.635, 0.66, 0.50},
    {"box", "YOLOv8", 0.756, 0.656, 0.70, 0.54},
    {"box", "Coordinate Attention", 0.750, 0.672, 0.71, 0.55},
    {"box", "Coordinate Attention with C2f", 0.622, 0.787, 0.69, 0.53},
    {"box", "CBAM", 0.821, 0.721, 0.77, 0.62},
    {"box", "CBAM with C2f", 0.665, 0.717, 0.69, 0.53},
    {"box", "Self-attention", 0.832, 0.541, 0.66, 0.49},
    {"box", "Self-attention with C2f", 0.693, 0.557, 0.62, 0.45},
    {"box", "Dual-attention", 0.795, 0.639, 0.71, 0.55},
    {"box", "Dual-attention with C2f", 0.706, 0.721, 0.71, 0.56},
    {"mask", "YOLOv7", 0.787, 0.609, 0.69, 0.52},
    {"mask", "YOLOv8", 0.686, 0.639, 0.66, 0.49},
    {"mask", "Coordinate Attention", 0.737, 0.639, 0.68, 0.52},
    {"mask", "Coordinate Attention with C2f", 0.636, 0.773, 0.70, 0.53},
    {"mask", "CBAM", 0.787, 0.689, 0.73, 0.58},
    {"mask", "CBAM with C2f", 0.679, 0.721, 0.70, 0.54},
    {"mask", "Self-attention", 0.710, 0.459, 0.56, 0.39},
    {"mask", "Self-attention with C2f", 0.663, 0.475, 0.55, 0.38},
    {"mask", "Dual-attention", 0.692, 0.541, 0.61, 0.43},
    {"mask", "Dual-attention with C2f", 0.773, 0.508, 0.61, 0.44},
};

Outcome TableArithmetic() {
  const auto start = std::chrono::steady_clock::now();
  int f1_ok = 0;
  int iou_ok = 0;
  std::string misses;
  for (const Row& row : kRows) {
    const double f1 = attnseg::FBeta(row.p, row.r, 1.0);
    const double j = f1 / (2.0 - f1);
    f1_ok += Round2(f1) == row.f1;
    if (Round2(j) == row.iou) {
      ++iou_ok;
    } else {
      misses += std::string(misses.empty() ? "" : "; ") + row.table + " " + row.model +
                " F1/(2-F1)=" + Fixed(j, 4) + " vs " + Fixed(row.iou, 2);
    }
  }
  const int n = static_cast<int>(std::size(kRows));
  const double secs = Seconds(start);
  Outcome o;
  o.pass = f1_ok == n && iou_ok == n && secs < 1.0;
  o.detail = "F1 column " + std::to_string(f1_ok) + "/" + std::to_string(n) + ", IoU column " +
             std::to_string(iou_ok) + "/" + std::to_string(n) +
             (misses.empty() ? "" : " (misses: " + misses + ")") + ", " + Fixed(secs, 4) + " s";
  return o;
}

// ---- 2: gradient suite

Outcome GradientSuite() {
  const auto start = std::chrono::steady_clock::now();
  bool pass = true;
  std::string parts;
  for (const std::string& block : attnseg::GradCheckBlocks()) {
    const double tol = block == "model" ? 1e-4 : 1e-5;
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto r = attnseg::RunBlockGradCheck(block, seed);
      worst = std::max(worst, r.max_rel_error);
      if (r.checked == 0) pass = false;
    }
    pass &= worst <= tol;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s%s %.1e", parts.empty() ? "" : ", ", block.c_str(), worst);
    parts += buf;
  }
  const double secs = Seconds(start);
  pass &= secs < 120.0;
  return {pass, "max rel error over 20 seeds: " + parts + "; " + Fixed(secs, 1) + " s"};
}

// ---- 3: metrics oracle

Outcome MetricsOracle() {
  using namespace attnseg::testing;
  const auto start = std::chrono::steady_clock::now();
  int agree = 0;
  std::string first_miss;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    MetricCase c = RandomMetricCase(seed);
    const attnseg::EvalReport rep = attnseg::Evaluate(c.dets, c.gts);
    std::string why;
    for (attnseg::IouKind kind : {attnseg::IouKind::kBox, attnseg::IouKind::kMask}) {
      const OracleBlock o = OracleEvaluate(c, kind);
      if (why.empty()) why = DiffMatchesAgainstOracle(c, kind, o);
      if (why.empty()) why = DiffAgainstOracle(kind == attnseg::IouKind::kBox ? rep.box : rep.mask, o);
    }
    if (why.empty()) {
      ++agree;
    } else if (first_miss.empty()) {
      first_miss = "seed " + std::to_string(seed) + ": " + why;
    }
  }
  const double secs = Seconds(start);
  return {agree == 1000 && secs < 60.0,
          std::to_string(agree) + "/1000 random cases exact" +
              (first_miss.empty() ? "" : " (first miss " + first_miss + ")") + ", " +
              Fixed(secs, 1) + " s"};
}

// ---- 4: attention identities

attnseg::AttentionConfig Config(attnseg::AttentionKind kind, attnseg::Shape s, int heads,
                                int extent) {
  attnseg::AttentionConfig cfg;
  cfg.kind = kind;
  cfg.channels = s.c;
  cfg.height = s.h;
  cfg.width = s.w;
  cfg.mhsa_heads = heads;
  cfg.mhsa_extent = extent;
  return cfg;
}

Outcome AttentionIdentities() {
  using namespace attnseg;
  using testing::RandomTensor;
  const auto start = std::chrono::steady_clock::now();
  bool quarter = true;
  double value_gap = 0.0;
  double softmax_gap = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Pcg32 rng(seed, 90);
    const Shape s{1 + static_cast<int>(seed % 2), 2 * rng.UniformInt(1, 6), rng.UniformInt(2, 9),
                  rng.UniformInt(2, 9)};
    Tensor x = RandomTensor(rng, s, -2.0, 2.0);
    for (AttentionKind kind : {AttentionKind::kCoord, AttentionKind::kCbam}) {
      Tensor y = ApplyAttention(x, ZeroAttentionParams(Config(kind, s, 1, 0)), Config(kind, s, 1, 0));
      for (std::size_t i = 0; i < x.numel(); ++i) quarter &= y.data()[i] == 0.25 * x.data()[i];
    }

    const AttentionConfig local = Config(AttentionKind::kMhsa, s, 2, 1);
    AttentionParams p = InitAttentionParams(local, rng);
    Tensor y = SelfAttention2d(x, p, local);
    const Tensor& w = p.at("mhsa.value.weight");
    const Tensor& b = p.at("mhsa.value.bias");
    for (int n = 0; n < s.n; ++n) {
      for (int o = 0; o < s.c; ++o) {
        for (int i = 0; i < s.h; ++i) {
          for (int j = 0; j < s.w; ++j) {
            double v = b.data()[o];
            for (int c = 0; c < s.c; ++c) v += w.at(o, c, 0, 0) * x.at(n, c, i, j);
            value_gap = std::max(value_gap, std::abs(y.at(n, o, i, j) - v));
          }
        }
      }
    }

    for (int extent : {0, 1, 3}) {
      const AttentionConfig cfg = Config(AttentionKind::kMhsa, s, 2, extent);
      const int dim = s.c / 2;
      Tensor q = RandomTensor(rng, s, -3.0, 3.0);
      Tensor k = RandomTensor(rng, s, -3.0, 3.0);
      Tensor rh = RandomTensor(rng, {1, 1, dim, s.h});
      Tensor rw = RandomTensor(rng, {1, 1, dim, s.w});
      Tensor a = AttentionWeights(q, k, rh, rw, cfg.mhsa_heads, extent);
      const int P = s.h * s.w;
      for (std::size_t row = 0; row < a.numel() / P; ++row) {
        double total = 0.0;
        for (int j = 0; j < P; ++j) total += a.data()[row * P + j];
        softmax_gap = std::max(softmax_gap, std::abs(total - 1.0));
      }
    }
  }
  const double secs = Seconds(start);
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "zero coord/cbam scale by exactly 0.25: %s; k=1 vs value projection max |diff| "
                "%.1e; softmax row sums max |1-sum| %.1e; %.2f s",
                quarter ? "yes" : "no", value_gap, softmax_gap, secs);
  return {quarter && value_gap <= 1e-12 && softmax_gap <= 1e-12, buf};
}

// ---- CLI driven runs for 5, 6 and 7

int RunCli(const std::string& args, const fs::path& log) {
  const std::string cmd =
      std::string(ATTNSEG_CLI_PATH) + " " + args + " >>" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string ReadFile(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void Cli(const std::string& args, const fs::path& log) {
  const int code = RunCli(args, log);
  if (code != 0) {
    throw CliFailure("`attnseg " + args + "` exited " + std::to_string(code) + " (see " +
                     log.string() + ")");
  }
}

std::vector<double> LossColumn(const fs::path& log_csv) {
  std::istringstream in(ReadFile(log_csv));
  std::string line;
  std::getline(in, line);
  std::vector<double> out;
  while (std::getline(in, line)) {
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    out.push_back(std::stod(line.substr(a + 1, b - a - 1)));
  }
  return out;
}

void ReferenceRun(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path log = dir / "cli.log";
  const std::string d = dir.string();
  Cli("gen --out " + d + "/data --count 250 --size 64 --seed 1 --difficulty easy "
      "--train-fraction 0.8", log);
  Cli("train --data " + d + "/data --out " + d + "/model.ckpt --attention none --epochs 50 "
      "--batch 4 --optimizer sgd --seed 1", log);
  Cli("eval --data " + d + "/data --model " + d + "/model.ckpt --iou 0.5 --report " + d +
      "/report.json --csv " + d + "/report.csv", log);
}

Outcome SyntheticEndToEnd(const fs::path& work) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = work / "c5" / "run_a";
  ReferenceRun(dir);
  const json manifest = json::parse(ReadFile(dir / "data" / "manifest.json"));
  const json rep = json::parse(ReadFile(dir / "report.json"));
  const auto losses = LossColumn(dir / "model.ckpt.log.csv");
  const double box_f1 = rep["box"]["f1"];
  const double mask_f1 = rep["mask"]["f1"];
  const double drop = 1.0 - losses.back() / losses.front();
  const bool split_ok = manifest["train"].size() == 200 && manifest["test"].size() == 50;
  const double secs = Seconds(start);
  const bool pass = split_ok && losses.size() == 50 && box_f1 >= 0.70 && mask_f1 >= 0.70;
  return {pass, "200/50 split " + std::string(split_ok ? "ok" : "WRONG") + ", box F1 " +
                    Fixed(box_f1) + ", mask F1 " + Fixed(mask_f1) + " (threshold 0.70), loss " +
                    Fixed(losses.front(), 4) + " -> " + Fixed(losses.back(), 4) + " (-" +
                    Fixed(100 * drop, 1) + "%), " + Fixed(secs / 60.0, 1) +
                    " min (target <= 15)"};
}

struct Variant {
  const char* attention;
  bool c2f;
  std::string name() const { return std::string(attention) + (c2f ? "+c2f" : ""); }
};

std::vector<Variant> AllVariants() {
  std::vector<Variant> out;
  for (const char* a : {"none", "coord", "cbam", "mhsa", "dual"}) {
    for (bool c2f : {false, true}) out.push_back({a, c2f});
  }
  return out;
}

void MatrixRun(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path log = dir / "cli.log";
  const std::string d = dir.string();
  Cli("gen --out " + d + "/data --count 20 --size 64 --seed 2", log);
  for (const Variant& v : AllVariants()) {
    const std::string base = d + "/" + v.name();
    Cli("train --data " + d + "/data --out " + base + ".ckpt --attention " + v.attention +
            (v.c2f ? " --c2f" : "") + " --epochs 2 --batch 4 --seed 3",
        log);
    Cli("eval --data " + d + "/data --split train --model " + base + ".ckpt --report " + base +
            ".json --csv " + base + ".csv",
        log);
  }
}

// Finite numbers, rates in [0,1], counts >= 0.
bool ValidReport(const json& rep, std::string& why) {
  for (const char* block : {"box", "mask"}) {
    if (!rep.contains(block)) {
      why = std::string("missing ") + block;
      return false;
    }
    for (const auto& [key, value] : rep[block].items()) {
      if (value.is_boolean()) continue;
      if (!value.is_number()) {
        why = std::string(block) + "." + key + " not a number";
        return false;
      }
      const double v = value.get<double>();
      const bool count = key == "tp" || key == "fp" || key == "fn";
      if (!std::isfinite(v) || v < 0.0 || (!count && v > 1.0)) {
        why = std::string(block) + "." + key + " = " + value.dump();
        return false;
      }
    }
  }
  return true;
}

Outcome VariantMatrix(const fs::path& work) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = work / "c6" / "run_a";
  MatrixRun(dir);
  int valid = 0;
  std::string why;
  for (const Variant& v : AllVariants()) {
    std::string w;
    if (ValidReport(json::parse(ReadFile(dir / (v.name() + ".json"))), w)) {
      ++valid;
    } else if (why.empty()) {
      why = v.name() + ": " + w;
    }
  }
  const double secs = Seconds(start);
  return {valid == 10 && secs <= 600.0,
          std::to_string(valid) + "/10 variants trained 2 epochs on 20 images with valid reports" +
              (why.empty() ? "" : " (" + why + ")") + ", " + Fixed(secs / 60.0, 1) +
              " min (limit 10)"};
}

// Training logs are compared without their wall-time column.
std::string Canonical(const fs::path& p) {
  std::string text = ReadFile(p);
  if (p.filename().string().ends_with(".log.csv")) {
    std::istringstream in(text);
    std::string line;
    text.clear();
    while (std::getline(in, line)) text += line.substr(0, line.rfind(',')) + "\n";
  }
  return text;
}

// Compares every artifact except the CLI transcripts.
std::string CompareTrees(const fs::path& a, const fs::path& b, int& files) {
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().filename() == "cli.log") continue;
    const fs::path rel = fs::relative(e.path(), a);
    if (!fs::exists(b / rel)) return "missing " + rel.string();
    // Reports and logs embed the run directory; compare with it normalized.
    std::string x = Canonical(e.path());
    std::string y = Canonical(b / rel);
    for (auto* s : {&x, &y}) {
      const std::string from = s == &x ? a.string() : b.string();
      for (auto pos = s->find(from); pos != std::string::npos; pos = s->find(from, pos)) {
        s->replace(pos, from.size(), "<run>");
      }
    }
    if (x != y) return "differs: " + rel.string();
    ++files;
  }
  return "";
}

Outcome Determinism(const fs::path& work) {
  const auto start = std::chrono::steady_clock::now();
  std::string why;
  int files = 0;
  for (const char* c : {"c5", "c6"}) {
    const fs::path a = work / c / "run_a";
    const fs::path b = work / c / "run_b";
    if (!fs::exists(a)) {
      if (std::string(c) == "c5") ReferenceRun(a); else MatrixRun(a);
    }
    if (std::string(c) == "c5") ReferenceRun(b); else MatrixRun(b);
    const std::string diff = CompareTrees(a, b, files);
    if (!diff.empty() && why.empty()) why = std::string(c) + " " + diff;
  }
  return {why.empty(), std::to_string(files) +
                           " artifacts (datasets, checkpoints, logs without seconds, reports, "
                           "CSVs) byte-identical across repeated runs" +
                           (why.empty() ? "" : "; FIRST MISMATCH " + why) + ", " +
                           Fixed(Seconds(start) / 60.0, 1) + " min"};
}

Outcome NonClaim(const fs::path& work) {
  std::string table;
  const fs::path dir = work / "c6" / "run_a";
  for (const Variant& v : AllVariants()) {
    const fs::path p = dir / (v.name() + ".json");
    if (!fs::exists(p)) continue;
    const json rep = json::parse(ReadFile(p));
    table += (table.empty() ? "" : ", ") + v.name() + " " +
             Fixed(rep["box"]["f1"].get<double>(), 2) + "/" +
             Fixed(rep["mask"]["f1"].get<double>(), 2);
  }
  return {true, "ranking CBAM > coord > baseline > self-attention is not asserted on synthetic "
                "data" +
                    (table.empty() ? std::string()
                                   : "; 2-epoch smoke box/mask F1 for reference: " + table)};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <criterion 1..8> [work dir]\n";
    return 2;
  }
  const int criterion = std::atoi(argv[1]);
  const fs::path work = argc > 2 ? fs::path(argv[2]) : fs::current_path() / "acceptance_work";
  const std::vector<std::pair<const char*, std::function<Outcome()>>> checks = {
      {"table arithmetic", TableArithmetic},
      {"gradient suite", GradientSuite},
      {"metrics oracle equivalence", MetricsOracle},
      {"attention identities", AttentionIdentities},
      {"synthetic end-to-end", [&] { return SyntheticEndToEnd(work); }},
      {"variant matrix smoke", [&] { return VariantMatrix(work); }},
      {"determinism", [&] { return Determinism(work); }},
      {"explicit non-claim", [&] { return NonClaim(work); }},
  };
  if (criterion < 1 || criterion > static_cast<int>(checks.size())) {
    std::cerr << "unknown criterion " << argv[1] << "\n";
    return 2;
  }
  const auto& [name, run] = checks[criterion - 1];
  Outcome o;
  try {
    o = run();
  } catch (const std::exception& e) {
    o = {false, std::string("error: ") + e.what()};
  }
  std::cout << "criterion " << criterion << ": " << (criterion == 8 ? "NOTE" : o.pass ? "PASS" : "FAIL")
            << " " << name << ": " << o.detail << std::endl;
  return o.pass ? 0 : 1;
}
