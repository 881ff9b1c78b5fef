/* Copyright 2026 The amvi Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/


#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace amvi {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent substream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic seed for the substream identified by `path` under `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(seed);
  for (auto p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

/// Stream tags so that different consumers of one master seed never collide.
namespace stream {
inline constexpr std::uint64_t kSimulate = 0x51;
inline constexpr std::uint64_t kInitPosterior = 0x11;
inline constexpr std::uint64_t kInitPredictive = 0x12;
inline constexpr std::uint64_t kShuffle = 0x21;
inline constexpr std::uint64_t kLoss = 0x22;
inline constexpr std::uint64_t kPropagate = 0x31;
inline constexpr std::uint64_t kMcmc = 0x41;
inline constexpr std::uint64_t kKl = 0x61;
inline constexpr std::uint64_t kGrid = 0x71;
inline constexpr std::uint64_t kProblem = 0x81;
}  // namespace stream

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  return n01(rng);
}

inline void fill_standard_normal(Rng& rng, std::span<double> out) {
  std::normal_distribution<double> n01(0.0, 1.0);
  for (auto& v : out) v = n01(rng);
}

inline std::vector<double> standard_normal_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  fill_standard_normal(rng, v);
  return v;
}

inline double uniform01(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(rng);
}

}  // namespace amvi
