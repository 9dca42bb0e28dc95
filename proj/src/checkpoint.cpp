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

// Binary checkpoint container.
//
//   "ATSK" u32 version u32 entry_count
//   entry: u32 name_len, name bytes, u8 dtype (0 f64, 1 bytes, 2 u64),
//          u32 rank, u32 extents[rank], payload
//
// All integers and doubles are little-endian. Entries are written in a fixed
// order so that equal states serialize to identical bytes.

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "attnseg/config.hpp"
#include "attnseg/error.hpp"
#include "attnseg/trainer.hpp"

namespace attnseg {
namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

constexpr char kMagic[4] = {'A', 'T', 'S', 'K'};

enum class DType : std::uint8_t { kF64 = 0, kBytes = 1, kU64 = 2 };

struct Entry {
  DType dtype = DType::kBytes;
  std::vector<std::uint32_t> extents;
  std::string payload;
};

class Writer {
 public:
  template <typename T>
  void Pod(const T& v) {
    out_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }

  void Add(const std::string& name, DType dtype, std::vector<std::uint32_t> extents,
           const void* data, std::size_t bytes) {
    Pod(static_cast<std::uint32_t>(name.size()));
    out_ += name;
    Pod(static_cast<std::uint8_t>(dtype));
    Pod(static_cast<std::uint32_t>(extents.size()));
    for (auto e : extents) Pod(e);
    out_.append(static_cast<const char*>(data), bytes);
    ++count_;
  }

  void Doubles(const std::string& name, const Shape& s, const std::vector<double>& v) {
    Add(name, DType::kF64,
        {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
         static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)},
        v.data(), v.size() * sizeof(double));
  }

  void Bytes(const std::string& name, const std::string& text) {
    Add(name, DType::kBytes, {static_cast<std::uint32_t>(text.size())}, text.data(),
        text.size());
  }

  void U64s(const std::string& name, const std::vector<std::uint64_t>& v) {
    Add(name, DType::kU64, {static_cast<std::uint32_t>(v.size())}, v.data(),
        v.size() * sizeof(std::uint64_t));
  }

  std::string Finish() const {
    std::string head(kMagic, 4);
    head.append(reinterpret_cast<const char*>(&kCheckpointVersion), 4);
    const auto n = count_;
    head.append(reinterpret_cast<const char*>(&n), 4);
    return head + out_;
  }

 private:
  std::string out_;
  std::uint32_t count_ = 0;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : in_(bytes) {}

  template <typename T>
  T Pod(const char* what) {
    Need(sizeof(T), what);
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view Take(std::size_t n, const char* what) {
    Need(n, what);
    auto v = in_.substr(pos_, n);
    pos_ += n;
    return v;
  }

  bool AtEnd() const { return pos_ == in_.size(); }
  std::size_t offset() const { return pos_; }

 private:
  void Need(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) {
      throw CheckpointError("checkpoint truncated while reading " + std::string(what) +
                            " at offset " + std::to_string(pos_));
    }
  }

  std::string_view in_;
  std::size_t pos_ = 0;
};

std::map<std::string, Entry> ReadEntries(std::string_view bytes) {
  Reader r(bytes);
  auto magic = r.Take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw CheckpointError("bad checkpoint magic");
  const auto version = r.Pod<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.Pod<std::uint32_t>("entry count");
  std::map<std::string, Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.Pod<std::uint32_t>("name length");
    std::string name(r.Take(name_len, "name"));
    Entry e;
    const auto dtype = r.Pod<std::uint8_t>("dtype");
    if (dtype > 2) throw CheckpointError("entry '" + name + "': bad dtype");
    e.dtype = static_cast<DType>(dtype);
    const auto rank = r.Pod<std::uint32_t>("rank");
    if (rank > 8) throw CheckpointError("entry '" + name + "': bad rank");
    std::uint64_t elems = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      e.extents.push_back(r.Pod<std::uint32_t>("extent"));
      elems *= e.extents.back();
      if (elems > bytes.size()) throw CheckpointError("entry '" + name + "': extents too large");
    }
    const std::size_t width = e.dtype == DType::kBytes ? 1 : 8;
    e.payload = std::string(r.Take(elems * width, "payload"));
    if (!entries.emplace(name, std::move(e)).second) {
      throw CheckpointError("duplicate checkpoint entry '" + name + "'");
    }
  }
  if (!r.AtEnd()) {
    throw CheckpointError("trailing bytes after checkpoint at offset " +
                          std::to_string(r.offset()));
  }
  return entries;
}

const Entry& Require(const std::map<std::string, Entry>& entries, const std::string& name,
                     DType dtype) {
  auto it = entries.find(name);
  if (it == entries.end()) throw CheckpointError("checkpoint lacks entry '" + name + "'");
  if (it->second.dtype != dtype) throw CheckpointError("entry '" + name + "': wrong dtype");
  return it->second;
}

std::vector<std::uint64_t> ReadU64s(const std::map<std::string, Entry>& entries,
                                    const std::string& name, std::size_t n) {
  const Entry& e = Require(entries, name, DType::kU64);
  if (e.payload.size() != n * 8) throw CheckpointError("entry '" + name + "': wrong length");
  std::vector<std::uint64_t> v(n);
  std::memcpy(v.data(), e.payload.data(), n * 8);
  return v;
}

std::vector<double> ReadDoubles(const std::map<std::string, Entry>& entries,
                                const std::string& name, const Shape& shape) {
  const Entry& e = Require(entries, name, DType::kF64);
  const std::vector<std::uint32_t> want = {
      static_cast<std::uint32_t>(shape.n), static_cast<std::uint32_t>(shape.c),
      static_cast<std::uint32_t>(shape.h), static_cast<std::uint32_t>(shape.w)};
  if (e.extents != want) {
    throw CheckpointError("entry '" + name + "': shape does not match model " + shape.str());
  }
  std::vector<double> v(shape.numel());
  std::memcpy(v.data(), e.payload.data(), v.size() * 8);
  return v;
}

nlohmann::json ReadJson(const std::map<std::string, Entry>& entries, const std::string& name) {
  const Entry& e = Require(entries, name, DType::kBytes);
  try {
    return nlohmann::json::parse(e.payload);
  } catch (const nlohmann::json::exception& ex) {
    throw CheckpointError("entry '" + name + "': " + ex.what());
  }
}

}  // namespace

std::string SerializeCheckpoint(const TrainingState& state) {
  Writer w;
  w.Bytes("meta.model_config", ToJson(state.model.config).dump());
  w.Bytes("meta.train_config", ToJson(state.config).dump());
  w.U64s("meta.epoch", {static_cast<std::uint64_t>(state.epoch)});
  w.U64s("meta.rng", {state.shuffle_rng.state(), state.shuffle_rng.increment()});
  w.U64s("meta.optim_step", {state.optimizer.step});
  for (const auto& [name, t] : state.model.params) {
    w.Doubles("param." + name, t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
  }
  const auto write_moments = [&](const std::map<std::string, std::vector<double>>& moments,
                                 const char* suffix) {
    for (const auto& [name, t] : state.model.params) {
      auto it = moments.find(name);
      std::vector<double> v = it == moments.end() || it->second.empty()
                                  ? std::vector<double>(t.shape().numel(), 0.0)
                                  : it->second;
      w.Doubles("optim." + name + suffix, t.shape(), v);
    }
  };
  write_moments(state.optimizer.first, ".m");
  if (state.config.optimizer == OptimizerKind::kAdam) write_moments(state.optimizer.second, ".v");
  return w.Finish();
}

TrainingState ParseCheckpoint(std::string_view bytes) {
  const auto entries = ReadEntries(bytes);
  TrainingState state;
  try {
    state.config = TrainConfigFromJson(ReadJson(entries, "meta.train_config"));
    state.config.Validate();
    const ModelConfig model_cfg = ModelConfigFromJson(ReadJson(entries, "meta.model_config"));
    // Shapes come from the config; the stored tensors must agree with them.
    state.model = BuildModel(model_cfg, 0);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
  }
  state.epoch = static_cast<int>(ReadU64s(entries, "meta.epoch", 1)[0]);
  const auto rng = ReadU64s(entries, "meta.rng", 2);
  state.shuffle_rng.Restore(rng[0], rng[1]);
  state.optimizer.kind = state.config.optimizer;
  state.optimizer.step = ReadU64s(entries, "meta.optim_step", 1)[0];
  std::size_t expected = 5;
  for (auto& [name, t] : state.model.params) {
    t.Assign(ReadDoubles(entries, "param." + name, t.shape()));
    state.optimizer.first[name] = ReadDoubles(entries, "optim." + name + ".m", t.shape());
    expected += 2;
    if (state.config.optimizer == OptimizerKind::kAdam) {
      state.optimizer.second[name] = ReadDoubles(entries, "optim." + name + ".v", t.shape());
      ++expected;
    }
  }
  if (entries.size() != expected) {
    throw CheckpointError("checkpoint has " + std::to_string(entries.size()) +
                          " entries, model expects " + std::to_string(expected));
  }
  return state;
}

void SaveCheckpoint(const std::filesystem::path& path, const TrainingState& state) {
  const std::string bytes = SerializeCheckpoint(state);
  // Write beside the target and rename, so a crash never leaves a torn file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp.string(), "cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(tmp.string(), "write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(path.string(), "rename failed: " + ec.message());
}

TrainingState LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open checkpoint");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return ParseCheckpoint(buf.str());
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace attnseg
