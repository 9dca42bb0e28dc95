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

#ifndef ATTNSEG_DATASET_HPP_
#define ATTNSEG_DATASET_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "attnseg/geometry.hpp"
#include "attnseg/rng.hpp"
#include "attnseg/tensor.hpp"

namespace attnseg {

// Normalised image coordinates in [0, 1].
struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

using Polygon = std::vector<Point>;

// One ground-truth instance: a labelled polygon and its derived raster.
struct InstanceAnnotation {
  int class_id = 0;
  Polygon polygon;
  Mask mask;
  Box box;
};

// Even-odd fill of `polygon` (normalised coords scaled by width/height),
// sampled at pixel centres (x + 0.5, y + 0.5). A centre exactly on a left
// edge is inside, on a right edge outside. Throws DegeneratePolygonError when
// fewer than 3 vertices are given or no pixel centre is covered.
Mask RasterizePolygon(const Polygon& polygon, int width, int height);

// Twice the signed area is summed; returns |area| in pixel units.
double PolygonArea(const Polygon& polygon, int width, int height);
// Perimeter in pixel units.
double PolygonPerimeter(const Polygon& polygon, int width, int height);

// Builds mask and box for a polygon.
InstanceAnnotation MakeAnnotation(int class_id, Polygon polygon, int width, int height);

// Parses `class x1 y1 ... xn yn` lines. Blank lines are ignored.
std::vector<InstanceAnnotation> ParseAnnotations(std::string_view text, int width, int height);
std::vector<InstanceAnnotation> LoadAnnotations(const std::filesystem::path& path, int width,
                                                int height);
// One line per annotation, coordinates with 6 decimals.
std::string FormatAnnotations(const std::vector<InstanceAnnotation>& annotations);
void SaveAnnotations(const std::filesystem::path& path,
                     const std::vector<InstanceAnnotation>& annotations);

enum class Difficulty { kEasy, kHard };
std::string_view ToString(Difficulty d);
Difficulty ParseDifficulty(std::string_view name);

struct GenConfig {
  int image_size = 64;
  int count = 100;
  std::uint64_t seed = 1;
  Difficulty difficulty = Difficulty::kEasy;
  int min_blobs = 0;
  int max_blobs = 4;
  // Fraction of images assigned to the train split (rounded to nearest).
  double train_fraction = 0.79;

  void Validate() const;
};

// A rendered scene: (1,3,S,S) image in [0,1] and its instances.
struct Sample {
  Tensor image;
  std::vector<InstanceAnnotation> annotations;
};

// Renders one scene from `rng` (which should be PCG32(seed, image index)).
Sample RenderSample(Pcg32& rng, const GenConfig& cfg);

struct Manifest {
  std::vector<int> train;
  std::vector<int> test;
  std::uint64_t seed = 0;
  int size = 0;
};

// Deterministic train/test partition of 0..count-1.
Manifest SplitIds(const GenConfig& cfg);

std::string ImageName(int id);   // "00042.png"
std::string LabelName(int id);   // "00042.txt"

// Writes images/, labels/ and manifest.json under out_dir.
Manifest GenerateDataset(const GenConfig& cfg, const std::filesystem::path& out_dir);

Manifest LoadManifest(const std::filesystem::path& dir);
void SaveManifest(const std::filesystem::path& dir, const Manifest& manifest);

// 8-bit RGB PNG I/O. Values are clamped to [0,1] and rounded to 1/255 steps.
void WritePngRgb(const std::filesystem::path& path, const Tensor& image);
Tensor ReadPngRgb(const std::filesystem::path& path);

// An image plus its annotations, as read back from disk.
struct LabelledImage {
  int id = 0;
  Tensor image;  // (1,3,S,S)
  std::vector<InstanceAnnotation> annotations;

  // Union of instance masks as a (1,1,S,S) 0/1 tensor.
  Tensor TargetMask() const;
};

std::vector<LabelledImage> LoadSplit(const std::filesystem::path& dir,
                                     const std::vector<int>& ids);

}  // namespace attnseg

#endif  // ATTNSEG_DATASET_HPP_
