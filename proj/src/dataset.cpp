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

#include "attnseg/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numbers>

#include "attnseg/error.hpp"
#include "json.hpp"

namespace attnseg {

namespace {

constexpr std::uint64_t kSplitStream = 0x73706c6974ULL;  // "split"

// Bilinear value noise on a (cells+1)^2 lattice of values in [-1, 1].
std::vector<double> ValueNoise(Pcg32& rng, int size, int cells) {
  const int side = cells + 1;
  std::vector<double> lattice(static_cast<std::size_t>(side) * side);
  for (double& v : lattice) v = rng.Uniform(-1.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(size) * size);
  const double step = static_cast<double>(cells) / size;
  for (int y = 0; y < size; ++y) {
    const double fy = (y + 0.5) * step;
    const int y0 = std::min(cells - 1, static_cast<int>(fy));
    const double ty = fy - y0;
    for (int x = 0; x < size; ++x) {
      const double fx = (x + 0.5) * step;
      const int x0 = std::min(cells - 1, static_cast<int>(fx));
      const double tx = fx - x0;
      const double a = lattice[y0 * side + x0];
      const double b = lattice[y0 * side + x0 + 1];
      const double c = lattice[(y0 + 1) * side + x0];
      const double d = lattice[(y0 + 1) * side + x0 + 1];
      out[y * size + x] = (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
    }
  }
  return out;
}

double Quantize6(double v) { return std::clamp(std::round(v * 1e6) / 1e6, 0.0, 1.0); }

struct Blob {
  double cx, cy, radius;
};

}  // namespace

std::string_view ToString(Difficulty d) { return d == Difficulty::kEasy ? "easy" : "hard"; }

Difficulty ParseDifficulty(std::string_view name) {
  if (name == "easy") return Difficulty::kEasy;
  if (name == "hard") return Difficulty::kHard;
  throw ConfigError("unknown difficulty '" + std::string(name) + "' (expected easy|hard)");
}

void GenConfig::Validate() const {
  if (count < 1) throw ConfigError("gen: count must be >= 1, got " + std::to_string(count));
  if (image_size < 16) throw ConfigError("gen: image size must be >= 16");
  if (min_blobs < 0 || max_blobs < min_blobs) throw ConfigError("gen: bad blob range");
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
    throw ConfigError("gen: train fraction must lie in [0,1]");
  }
}

Sample RenderSample(Pcg32& rng, const GenConfig& cfg) {
  const int s = cfg.image_size;
  const bool easy = cfg.difficulty == Difficulty::kEasy;
  const std::size_t plane = static_cast<std::size_t>(s) * s;

  // Ocean: base colour plus two octaves of low-amplitude value noise.
  double ocean[3] = {0.08, 0.22, 0.42};
  for (double& c : ocean) c += rng.Uniform(-0.04, 0.04);
  const auto coarse = ValueNoise(rng, s, std::max(2, s / 16));
  const auto fine = ValueNoise(rng, s, std::max(4, s / 8));
  const double amp_coarse = easy ? 0.05 : 0.10;
  const double amp_fine = easy ? 0.025 : 0.05;
  std::vector<double> pixels(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    const double n = amp_coarse * coarse[i] + amp_fine * fine[i];
    for (int c = 0; c < 3; ++c) pixels[c * plane + i] = ocean[c] + n;
  }

  Sample sample;
  std::vector<Blob> placed;
  const int blobs = rng.UniformInt(cfg.min_blobs, cfg.max_blobs);
  for (int b = 0; b < blobs; ++b) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      const double radius = s * (easy ? rng.Uniform(0.06, 0.12) : rng.Uniform(0.04, 0.10));
      const double cx = rng.Uniform(radius + 1.0, s - radius - 1.0);
      const double cy = rng.Uniform(radius + 1.0, s - radius - 1.0);
      const int vertices = rng.UniformInt(5, 9);
      const double phase = rng.Uniform(0.0, 2.0 * std::numbers::pi);
      const double step = 2.0 * std::numbers::pi / vertices;
      Polygon polygon;
      for (int v = 0; v < vertices; ++v) {
        const double theta = phase + v * step + rng.Uniform(-0.25, 0.25) * step;
        const double rho = radius * rng.Uniform(0.7, 1.0);
        polygon.push_back({Quantize6((cx + rho * std::cos(theta)) / s),
                           Quantize6((cy + rho * std::sin(theta)) / s)});
      }
      if (easy) {
        // Keep at least a 3 pixel gap between blobs.
        const bool clash = std::any_of(placed.begin(), placed.end(), [&](const Blob& o) {
          return std::hypot(o.cx - cx, o.cy - cy) < o.radius + radius + 3.0;
        });
        if (clash) continue;
      }
      InstanceAnnotation ann;
      try {
        ann = MakeAnnotation(0, std::move(polygon), s, s);
      } catch (const DegeneratePolygonError&) {
        continue;
      }
      double debris[3];
      if (easy) {
        const double base[3] = {0.82, 0.78, 0.70};
        for (int c = 0; c < 3; ++c) debris[c] = base[c] + rng.Uniform(-0.05, 0.05);
      } else {
        const double lift[3] = {0.18, 0.16, 0.10};
        for (int c = 0; c < 3; ++c) debris[c] = ocean[c] + lift[c] + rng.Uniform(-0.04, 0.04);
      }
      for (std::size_t i = 0; i < plane; ++i) {
        if (ann.mask.bits[i] == 0) continue;
        const double texture = 0.3 * amp_fine * fine[i];
        for (int c = 0; c < 3; ++c) pixels[c * plane + i] = debris[c] + texture;
      }
      placed.push_back({cx, cy, radius});
      sample.annotations.push_back(std::move(ann));
      break;
    }
  }

  if (!easy) {
    // Speckle: sparse bright glints anywhere in the scene.
    for (std::size_t i = 0; i < plane; ++i) {
      if (rng.Uniform() < 0.01) {
        const double glint = rng.Uniform(0.0, 0.3);
        for (int c = 0; c < 3; ++c) pixels[c * plane + i] += glint;
      }
    }
  }
  for (double& v : pixels) v = std::clamp(v, 0.0, 1.0);
  sample.image = Tensor::FromData({1, 3, s, s}, std::move(pixels));
  return sample;
}

Manifest SplitIds(const GenConfig& cfg) {
  cfg.Validate();
  std::vector<int> ids(cfg.count);
  for (int i = 0; i < cfg.count; ++i) ids[i] = i;
  Pcg32 rng(cfg.seed, kSplitStream);
  for (int i = cfg.count - 1; i > 0; --i) std::swap(ids[i], ids[rng.UniformInt(0, i)]);
  const auto train_count =
      static_cast<std::size_t>(std::llround(cfg.train_fraction * cfg.count));
  Manifest m;
  m.train.assign(ids.begin(), ids.begin() + train_count);
  m.test.assign(ids.begin() + train_count, ids.end());
  std::sort(m.train.begin(), m.train.end());
  std::sort(m.test.begin(), m.test.end());
  m.seed = cfg.seed;
  m.size = cfg.image_size;
  return m;
}

std::string ImageName(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05d.png", id);
  return buf;
}

std::string LabelName(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05d.txt", id);
  return buf;
}

Manifest GenerateDataset(const GenConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.Validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError((out_dir / "images").string(), ec.message());
  std::filesystem::create_directories(out_dir / "labels", ec);
  if (ec) throw IoError((out_dir / "labels").string(), ec.message());
  for (int id = 0; id < cfg.count; ++id) {
    Pcg32 rng(cfg.seed, static_cast<std::uint64_t>(id));
    Sample sample = RenderSample(rng, cfg);
    WritePngRgb(out_dir / "images" / ImageName(id), sample.image);
    SaveAnnotations(out_dir / "labels" / LabelName(id), sample.annotations);
  }
  Manifest manifest = SplitIds(cfg);
  SaveManifest(out_dir, manifest);
  return manifest;
}

void SaveManifest(const std::filesystem::path& dir, const Manifest& manifest) {
  nlohmann::ordered_json j;
  j["train"] = manifest.train;
  j["test"] = manifest.test;
  j["seed"] = manifest.seed;
  j["size"] = manifest.size;
  const auto path = dir / "manifest.json";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError(path.string(), "write failed");
}

Manifest LoadManifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open manifest");
  Manifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    m.train = j.at("train").get<std::vector<int>>();
    m.test = j.at("test").get<std::vector<int>>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.size = j.at("size").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string(), std::string("malformed manifest: ") + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// PNG

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void PngError(png_structp png, png_const_charp message) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  *text = message;
  png_longjmp(png, 1);
}

void PngWarning(png_structp, png_const_charp) {}

}  // namespace

void WritePngRgb(const std::filesystem::path& path, const Tensor& image) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("png: expected a (1,3,H,W) image, got " + s.str());
  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw IoError(path.string(), "cannot open for writing");
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  std::vector<png_byte> rows(plane * 3);
  const auto data = image.data();
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(data[c * plane + i], 0.0, 1.0);
      rows[i * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0));
    }
  }
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, PngError, PngWarning);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path.string(), "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path.string(), "png write failed: " + message);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, s.w, s.h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < s.h; ++y) png_write_row(png, rows.data() + static_cast<std::size_t>(y) * s.w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) throw IoError(path.string(), "write failed");
}

Tensor ReadPngRgb(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw IoError(path.string(), "cannot open image");
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, PngError, PngWarning);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string(), "libpng initialisation failed");
  }
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string(), "png read failed: " + message);
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  pixels.resize(static_cast<std::size_t>(width) * height * 3);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t plane = static_cast<std::size_t>(width) * height;
  std::vector<double> data(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) data[c * plane + i] = pixels[i * 3 + c] / 255.0;
  }
  return Tensor::FromData({1, 3, static_cast<int>(height), static_cast<int>(width)},
                          std::move(data));
}

Tensor LabelledImage::TargetMask() const {
  const Shape s = image.shape();
  std::vector<double> target(static_cast<std::size_t>(s.h) * s.w, 0.0);
  for (const auto& ann : annotations) {
    for (std::size_t i = 0; i < target.size(); ++i) {
      if (ann.mask.bits[i] != 0) target[i] = 1.0;
    }
  }
  return Tensor::FromData({1, 1, s.h, s.w}, std::move(target));
}

std::vector<LabelledImage> LoadSplit(const std::filesystem::path& dir,
                                     const std::vector<int>& ids) {
  std::vector<LabelledImage> out;
  out.reserve(ids.size());
  for (int id : ids) {
    LabelledImage item;
    item.id = id;
    item.image = ReadPngRgb(dir / "images" / ImageName(id));
    const Shape s = item.image.shape();
    item.annotations = LoadAnnotations(dir / "labels" / LabelName(id), s.w, s.h);
    out.push_back(std::move(item));
  }
  return out;
}

}  // namespace attnseg
