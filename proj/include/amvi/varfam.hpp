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


// Diagonal Gaussian and diagonal log-normal variational families.
//
// All closed forms are templated on the scalar type so the same code evaluates
// plain doubles and records differentiable nodes on a diffnet::Tape.

#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "amvi/core/error.hpp"
#include "amvi/core/mvn.hpp"
#include "amvi/diffnet/tape.hpp"

namespace amvi::varfam {

enum class Family { GaussianDiag, LogNormalDiag };

inline std::string to_string(Family f) {
  return f == Family::GaussianDiag ? "gaussian" : "lognormal";
}

inline Family family_from_string(const std::string& s) {
  if (s == "gaussian" || s == "GaussianDiag") return Family::GaussianDiag;
  if (s == "lognormal" || s == "LogNormalDiag") return Family::LogNormalDiag;
  throw ConfigError("unknown variational family '" + s + "'");
}

/// Per-coordinate (mu, sigma). For LogNormalDiag both live in log-space.
template <class S>
struct BasicDistParams {
  Family family = Family::GaussianDiag;
  std::vector<S> mu;
  std::vector<S> sigma;

  std::size_t dim() const noexcept { return mu.size(); }
};

using DistParams = BasicDistParams<double>;

template <class S>
struct BasicMoments {
  std::vector<S> mean;
  std::vector<S> variance;
};

/// Natural-space mean and variance.
using MomentPair = BasicMoments<double>;

inline void validate(const DistParams& p) {
  if (p.mu.size() != p.sigma.size()) throw ShapeError("DistParams: mu/sigma length mismatch");
  for (double s : p.sigma)
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("DistParams: sigma must be positive and finite");
}

/// Gaussian: mu + sigma * noise; log-normal: exp(mu + sigma * noise).
template <class S>
std::vector<S> sample_reparam(const BasicDistParams<S>& p, std::span<const double> noise) {
  using std::exp;
  if (noise.size() != p.dim()) throw ShapeError("sample_reparam: noise dimension mismatch");
  std::vector<S> out;
  out.reserve(p.dim());
  for (std::size_t i = 0; i < p.dim(); ++i) {
    S g = p.mu[i] + p.sigma[i] * noise[i];
    out.push_back(p.family == Family::GaussianDiag ? g : exp(g));
  }
  return out;
}

/// Exact log-pdf. A log-normal evaluated at x_i <= 0 returns -infinity.
inline double log_density(const DistParams& p, std::span<const double> x) {
  if (x.size() != p.dim()) throw ShapeError("log_density: dimension mismatch");
  double lp = 0.0;
  for (std::size_t i = 0; i < p.dim(); ++i) {
    double u = x[i];
    if (p.family == Family::LogNormalDiag) {
      if (!(x[i] > 0.0)) return -std::numeric_limits<double>::infinity();
      u = std::log(x[i]);
      lp -= u;  // Jacobian of the log transform
    }
    const double r = (u - p.mu[i]) / p.sigma[i];
    lp += -0.5 * kLog2Pi - std::log(p.sigma[i]) - 0.5 * r * r;
  }
  return lp;
}

/// E_p[log p], the negative entropy.
template <class S>
S entropy_term(const BasicDistParams<S>& p) {
  using std::log;
  const double d = static_cast<double>(p.dim());
  S acc = p.family == Family::GaussianDiag ? log(p.sigma[0]) : p.mu[0] + log(p.sigma[0]);
  for (std::size_t i = 1; i < p.dim(); ++i)
    acc = acc + (p.family == Family::GaussianDiag ? log(p.sigma[i]) : p.mu[i] + log(p.sigma[i]));
  // Gaussian: -(d/2)(1 + log 2pi) - sum log sigma
  // log-normal: -sum(mu + 1/2 + 1/2 log(2 pi sigma^2)), the same plus -sum mu
  return -0.5 * d * (1.0 + kLog2Pi) - acc;
}

/// E_q[log N(theta; prior mean, prior cov)] for a diagonal Gaussian q.
template <class S>
S gaussian_prior_cross_term(const BasicDistParams<S>& q, const Mvn& prior) {
  if (q.family != Family::GaussianDiag)
    throw ContractError("gaussian_prior_cross_term: q must be GaussianDiag");
  if (q.dim() != prior.dim()) throw ShapeError("gaussian_prior_cross_term: dimension mismatch");
  const auto& P = prior.precision();
  const auto& m0 = prior.mean();
  const std::size_t d = q.dim();
  std::vector<S> diff;
  diff.reserve(d);
  for (std::size_t i = 0; i < d; ++i) diff.push_back(q.mu[i] - m0[static_cast<Eigen::Index>(i)]);
  S quad = P(0, 0) * (q.sigma[0] * q.sigma[0] + diff[0] * diff[0]);
  for (std::size_t i = 0; i < d; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    if (i > 0) quad = quad + P(ii, ii) * (q.sigma[i] * q.sigma[i] + diff[i] * diff[i]);
    for (std::size_t j = i + 1; j < d; ++j) {
      const double pij = P(ii, static_cast<Eigen::Index>(j));
      if (pij != 0.0) quad = quad + (2.0 * pij) * (diff[i] * diff[j]);
    }
  }
  return -0.5 * (static_cast<double>(d) * kLog2Pi + prior.log_det()) - 0.5 * quad;
}

/// Natural-space mean and variance.
template <class S>
BasicMoments<S> moments(const BasicDistParams<S>& p) {
  using std::exp;
  BasicMoments<S> m;
  for (std::size_t i = 0; i < p.dim(); ++i) {
    if (p.family == Family::GaussianDiag) {
      m.mean.push_back(p.mu[i]);
      m.variance.push_back(p.sigma[i] * p.sigma[i]);
    } else {
      const S s2 = p.sigma[i] * p.sigma[i];
      m.mean.push_back(exp(p.mu[i] + 0.5 * s2));
      m.variance.push_back((exp(s2) - 1.0) * exp(2.0 * p.mu[i] + s2));
    }
  }
  return m;
}

/// Plain-value copy of a recorded distribution.
inline DistParams values_of(const BasicDistParams<diffnet::Var>& p) {
  DistParams out{p.family, {}, {}};
  for (auto v : p.mu) out.mu.push_back(v.value());
  for (auto v : p.sigma) out.sigma.push_back(v.value());
  return out;
}

inline DistParams values_of(const DistParams& p) { return p; }

/// Draws one sample using `rng`.
inline std::vector<double> sample(const DistParams& p, Rng& rng) {
  const auto e = standard_normal_vector(rng, p.dim());
  return sample_reparam(p, e);
}

}  // namespace amvi::varfam
