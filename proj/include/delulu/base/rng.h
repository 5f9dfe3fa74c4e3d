// include/delulu/base/rng.h

// Copyright 2026  The delulu Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <random>

namespace delulu {

// splitmix64 finalizer. Every per-item seed in the project is derived with
// this.
constexpr uint64_t SplitMix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr uint64_t DeriveSeed(uint64_t parent, uint64_t stream) {
  return SplitMix64(parent ^ SplitMix64(stream + 0x51ed2701ULL));
}

constexpr uint64_t DeriveSeed(uint64_t parent, uint64_t stream, uint64_t index) {
  return DeriveSeed(DeriveSeed(parent, stream), index);
}

using Rng = std::mt19937_64;

// Uniform double in [0, 1) from the top 53 bits.
inline double Uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double Uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * Uniform01(rng);
}

// Box-Muller, no cached second draw.
double Gaussian(Rng& rng);

// Uniform integer in [0, n).
inline uint64_t UniformIndex(Rng& rng, uint64_t n) {
  return static_cast<uint64_t>(Uniform01(rng) * static_cast<double>(n)) % n;
}

}  // namespace delulu
