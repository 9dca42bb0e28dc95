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

#ifndef ATTNSEG_RNG_HPP_
#define ATTNSEG_RNG_HPP_

#include <cstdint>

namespace attnseg {

// PCG32 (XSH-RR output, 64-bit LCG state), seeded exactly like the reference
// pcg32_srandom_r so that streams are reproducible in other implementations.
//
//   multiplier = 6364136223846793005
//   increment  = (stream << 1) | 1
//   seeding    : state = 0; step; state += seed; step
class Pcg32 {
 public:
  static constexpr std::uint64_t kMultiplier = 6364136223846793005ULL;

  Pcg32() : Pcg32(0x853c49e6748fea9bULL, 0xda3e39cb94b95bdbULL) {}
  Pcg32(std::uint64_t seed, std::uint64_t stream) { Seed(seed, stream); }

  void Seed(std::uint64_t seed, std::uint64_t stream) {
    state_ = 0;
    inc_ = (stream << 1u) | 1u;
    NextU32();
    state_ += seed;
    NextU32();
  }

  std::uint32_t NextU32() {
    std::uint64_t old = state_;
    state_ = old * kMultiplier + inc_;
    auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  // Uniform in [0, 1): NextU32() * 2^-32.
  double Uniform() { return NextU32() * (1.0 / 4294967296.0); }
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }

  // Uniform integer in [lo, hi], unbiased (rejection on the 32-bit draw).
  int UniformInt(int lo, int hi) {
    auto range = static_cast<std::uint32_t>(hi - lo) + 1u;
    std::uint32_t threshold = (-range) % range;
    for (;;) {
      std::uint32_t r = NextU32();
      if (r >= threshold) return lo + static_cast<int>(r % range);
    }
  }

  std::uint64_t state() const { return state_; }
  std::uint64_t increment() const { return inc_; }
  void Restore(std::uint64_t state, std::uint64_t increment) {
    state_ = state;
    inc_ = increment;
  }

  bool operator==(const Pcg32&) const = default;

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 1;
};

}  // namespace attnseg

#endif  // ATTNSEG_RNG_HPP_
