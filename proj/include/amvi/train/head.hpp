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
#include <span>
#include <vector>

#include "amvi/core/error.hpp"
#include "amvi/core/samples.hpp"
#include "amvi/diffnet/network.hpp"
#include "amvi/varfam.hpp"

namespace amvi::train {

using diffnet::NetworkParams;
using diffnet::NetworkSpec;
using diffnet::Tape;
using diffnet::Var;

/// Network mapping an observation y to a diagonal variational distribution.
///
/// The input is standardized with fixed (non-trainable) per-component
/// statistics of the amortization data. The outputs are [mu, log sigma], and
/// sigma is floored at `sigma_min`.
struct AmortizedHead {
  NetworkParams net;
  varfam::Family family = varfam::Family::GaussianDiag;
  std::vector<double> input_mean;
  std::vector<double> input_scale;
  double sigma_min = 1e-6;

  std::size_t input_dim() const noexcept { return net.spec.input_dim; }
  std::size_t target_dim() const noexcept { return net.spec.output_dim / 2; }

  std::vector<double> standardize(std::span<const double> y) const {
    if (y.size() != input_dim())
      throw ShapeError("AmortizedHead: observation has length " + std::to_string(y.size()) + ", expected " +
                       std::to_string(input_dim()));
    std::vector<double> x(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) x[i] = (y[i] - input_mean[i]) / input_scale[i];
    return x;
  }

  varfam::DistParams evaluate(std::span<const double> y) const {
    const auto out = diffnet::forward(net, standardize(y));
    const std::size_t d = target_dim();
    varfam::DistParams p{family, {}, {}};
    for (std::size_t i = 0; i < d; ++i) {
      p.mu.push_back(out[i]);
      p.sigma.push_back(diffnet::clamp_below(std::exp(out[d + i]), sigma_min));
    }
    return p;
  }

  varfam::BasicDistParams<Var> record(Tape& tape, std::span<const Var> leaves, std::span<const double> y) const {
    const auto out = diffnet::forward(tape, net, leaves, standardize(y));
    const std::size_t d = target_dim();
    varfam::BasicDistParams<Var> p{family, {}, {}};
    for (std::size_t i = 0; i < d; ++i) {
      p.mu.push_back(out[i]);
      p.sigma.push_back(diffnet::clamp_below(diffnet::exp(out[d + i]), sigma_min));
    }
    return p;
  }
};

/// Per-component mean and standard deviation of `ys` (unit scale for
/// degenerate components).
inline void standardization(const SampleSet& ys, std::vector<double>& mean, std::vector<double>& scale) {
  mean = ys.mean();
  scale = ys.variance();
  for (auto& s : scale) s = s > 0.0 ? std::sqrt(s) : 1.0;
}

/// He-initialized head; `ys` supplies the input standardization.
inline AmortizedHead make_head(const NetworkSpec& spec, varfam::Family family, const SampleSet& ys,
                               std::uint64_t seed, double sigma_min = 1e-6) {
  if (spec.output_dim % 2 != 0) throw ConfigError("AmortizedHead: output_dim must be even (mean and log-std)");
  if (ys.dim() != spec.input_dim) throw ShapeError("AmortizedHead: data dimension does not match input_dim");
  AmortizedHead h;
  h.net = diffnet::he_initialize(spec, seed);
  h.family = family;
  h.sigma_min = sigma_min;
  standardization(ys, h.input_mean, h.input_scale);
  return h;
}

/// Head with identity standardization.
inline AmortizedHead make_head(const NetworkSpec& spec, varfam::Family family, std::uint64_t seed,
                               double sigma_min = 1e-6) {
  AmortizedHead h;
  if (spec.output_dim % 2 != 0) throw ConfigError("AmortizedHead: output_dim must be even (mean and log-std)");
  h.net = diffnet::he_initialize(spec, seed);
  h.family = family;
  h.sigma_min = sigma_min;
  h.input_mean.assign(spec.input_dim, 0.0);
  h.input_scale.assign(spec.input_dim, 1.0);
  return h;
}

}  // namespace amvi::train
