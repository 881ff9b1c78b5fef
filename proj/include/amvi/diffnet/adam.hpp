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

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "amvi/core/error.hpp"

namespace amvi::diffnet {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step_count = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;

  AdamState() = default;
  AdamState(std::size_t n, const AdamConfig& cfg)
      : config(cfg), first_moment(n, 0.0), second_moment(n, 0.0) {}
};

/// One bias-corrected Adam update in place. `learning_rate` overrides the
/// configured rate when positive (used by schedules).
inline void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state,
                      double learning_rate = -1.0) {
  if (grad.size() != params.size() || state.first_moment.size() != params.size())
    throw ShapeError("adam_step: gradient/state shape does not match parameters");
  for (double g : grad)
    if (!std::isfinite(g)) throw OptimizerError("adam_step: non-finite gradient", state.step_count + 1);

  const auto& c = state.config;
  const double lr = learning_rate > 0.0 ? learning_rate : c.learning_rate;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = c.beta1 * m + (1.0 - c.beta1) * grad[i];
    v = c.beta2 * v + (1.0 - c.beta2) * grad[i] * grad[i];
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + c.epsilon);
  }
}

/// Rescales `grad` so its Euclidean norm is at most `max_norm`. Returns the
/// norm before clipping.
inline double clip_by_norm(std::span<double> grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grad) g *= s;
  }
  return norm;
}

enum class LrSchedule { Constant, Cosine };

/// Learning rate at 0-based `iteration` of `total`. Cosine decays from `base`
/// to `base * final_fraction`.
inline double scheduled_learning_rate(LrSchedule kind, double base, double final_fraction,
                                      std::uint64_t iteration, std::uint64_t total) {
  if (kind == LrSchedule::Constant || total <= 1) return base;
  const double progress = static_cast<double>(iteration) / static_cast<double>(total - 1);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return base * (final_fraction + (1.0 - final_fraction) * cosine);
}

}  // namespace amvi::diffnet
