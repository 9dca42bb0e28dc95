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

#ifndef ATTNSEG_GEOMETRY_HPP_
#define ATTNSEG_GEOMETRY_HPP_

#include <cstdint>
#include <vector>

namespace attnseg {

// Axis-aligned pixel box, half-open: [x_min, x_max) x [y_min, y_max).
struct Box {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  int width() const { return x_max - x_min; }
  int height() const { return y_max - y_min; }
  long area() const { return static_cast<long>(width()) * height(); }
  bool operator==(const Box&) const = default;
};

// Row-major binary raster.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v = true) {
    bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
  }
  long count() const {
    long n = 0;
    for (auto b : bits) n += b != 0;
    return n;
  }
  bool operator==(const Mask&) const = default;
};

// Tight half-open bounds of the set pixels. An empty mask yields an all-zero box.
Box BoundingBox(const Mask& mask);

}  // namespace attnseg

#endif  // ATTNSEG_GEOMETRY_HPP_
