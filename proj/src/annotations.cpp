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

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "attnseg/dataset.hpp"
#include "attnseg/error.hpp"

namespace attnseg {

Mask RasterizePolygon(const Polygon& polygon, int width, int height) {
  if (polygon.size() < 3) {
    throw DegeneratePolygonError("polygon needs at least 3 vertices, got " +
                                 std::to_string(polygon.size()));
  }
  if (width < 1 || height < 1) throw ConfigError("rasterize: empty raster");
  std::vector<double> px(polygon.size());
  std::vector<double> py(polygon.size());
  for (std::size_t i = 0; i < polygon.size(); ++i) {
    px[i] = polygon[i].x * width;
    py[i] = polygon[i].y * height;
  }
  Mask mask(width, height);
  std::vector<double> crossings;
  const std::size_t n = polygon.size();
  for (int y = 0; y < height; ++y) {
    const double yc = y + 0.5;
    crossings.clear();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      // Half-open in y: an edge counts when min(y) <= yc < max(y).
      if ((py[i] > yc) != (py[j] > yc)) {
        crossings.push_back((px[j] - px[i]) * (yc - py[i]) / (py[j] - py[i]) + px[i]);
      }
    }
    std::sort(crossings.begin(), crossings.end());
    for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
      // Centres x + 0.5 in [left, right).
      const int first = std::max(0, static_cast<int>(std::ceil(crossings[k] - 0.5)));
      const int last = std::min(width, static_cast<int>(std::ceil(crossings[k + 1] - 0.5)));
      for (int x = first; x < last; ++x) mask.set(x, y);
    }
  }
  if (mask.count() == 0) {
    throw DegeneratePolygonError("polygon covers no pixel centre");
  }
  return mask;
}

double PolygonArea(const Polygon& polygon, int width, int height) {
  double twice = 0.0;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    twice += (polygon[j].x * width) * (polygon[i].y * height) -
             (polygon[i].x * width) * (polygon[j].y * height);
  }
  return std::abs(twice) / 2.0;
}

double PolygonPerimeter(const Polygon& polygon, int width, int height) {
  double total = 0.0;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    total += std::hypot((polygon[i].x - polygon[j].x) * width,
                        (polygon[i].y - polygon[j].y) * height);
  }
  return total;
}

InstanceAnnotation MakeAnnotation(int class_id, Polygon polygon, int width, int height) {
  InstanceAnnotation ann;
  ann.class_id = class_id;
  ann.mask = RasterizePolygon(polygon, width, height);
  ann.box = BoundingBox(ann.mask);
  ann.polygon = std::move(polygon);
  return ann;
}

namespace {

std::vector<std::string_view> Tokens(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

std::vector<InstanceAnnotation> ParseAnnotations(std::string_view text, int width, int height) {
  std::vector<InstanceAnnotation> result;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const auto tokens = Tokens(line);
    if (tokens.empty()) {
      if (end == text.size()) break;
      continue;
    }
    int class_id = 0;
    {
      auto [ptr, ec] = std::from_chars(tokens[0].data(), tokens[0].data() + tokens[0].size(),
                                       class_id);
      if (ec != std::errc() || ptr != tokens[0].data() + tokens[0].size() || class_id < 0) {
        throw ParseError(line_no, "class id '" + std::string(tokens[0]) +
                                      "' is not a non-negative integer");
      }
    }
    const std::size_t coords = tokens.size() - 1;
    if (coords % 2 != 0) throw ParseError(line_no, "odd number of coordinates");
    if (coords < 6) {
      throw ParseError(line_no, "polygon needs at least 3 points, got " +
                                    std::to_string(coords / 2));
    }
    Polygon polygon;
    for (std::size_t t = 1; t < tokens.size(); t += 2) {
      double v[2];
      for (int k = 0; k < 2; ++k) {
        const std::string_view tok = tokens[t + k];
        auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v[k]);
        if (ec != std::errc() || ptr != tok.data() + tok.size()) {
          throw ParseError(line_no, "bad coordinate '" + std::string(tok) + "'");
        }
        if (!(v[k] >= 0.0 && v[k] <= 1.0)) {
          throw ParseError(line_no, "coordinate " + std::string(tok) + " outside [0,1]");
        }
      }
      polygon.push_back({v[0], v[1]});
    }
    try {
      result.push_back(MakeAnnotation(class_id, std::move(polygon), width, height));
    } catch (const DegeneratePolygonError& e) {
      throw ParseError(line_no, e.what());
    }
    if (end == text.size()) break;
  }
  return result;
}

std::vector<InstanceAnnotation> LoadAnnotations(const std::filesystem::path& path, int width,
                                                int height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open annotation file");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return ParseAnnotations(buffer.str(), width, height);
  } catch (const ParseError& e) {
    throw ParseError(e.line(), e.detail(), path.string());
  }
}

std::string FormatAnnotations(const std::vector<InstanceAnnotation>& annotations) {
  std::string out;
  char buf[32];
  for (const auto& ann : annotations) {
    out += std::to_string(ann.class_id);
    for (const auto& p : ann.polygon) {
      std::snprintf(buf, sizeof(buf), " %.6f %.6f", p.x, p.y);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void SaveAnnotations(const std::filesystem::path& path,
                     const std::vector<InstanceAnnotation>& annotations) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out << FormatAnnotations(annotations);
  if (!out) throw IoError(path.string(), "write failed");
}

}  // namespace attnseg
