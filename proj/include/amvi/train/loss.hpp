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

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "amvi/core/error.hpp"
#include "amvi/core/rng.hpp"
#include "amvi/diffnet/tape.hpp"
#include "amvi/problems.hpp"
#include "amvi/varfam.hpp"

namespace amvi::train {

struct LossWeights {
  double alpha1 = 1.0;  // predictive upper-bound term
  double alpha2 = 1.0;  // mean matching
  double alpha3 = 1.0;  // variance matching
};

/// Per-observation Monte Carlo sample counts of one loss evaluation.
struct LossSamples {
  std::size_t n1 = 1;    // theta samples for the likelihood term
  std::size_t n2 = 100;  // z samples from r
  std::size_t n3 = 1000; // inner theta samples for E_q log p(z | theta)
  std::size_t lp = 1000; // samples of z ~ p(z | y) for moment matching (aliases the first lp inner samples)
};

template <class S>
struct LossParts {
  S posterior{};       // E_q[log q - log p(y | theta) - log p(theta)]
  S predictive{};      // E_r[log r] - E_r E_q[log p(z | theta)]
  S regularization{};  // alpha2 |mean_r - mean_p|^2 + alpha3 |var_r - var_p|^2
  S total{};
};

namespace detail {

using diffnet::value_of;

inline double make_node(double v, std::span<const double>, std::span<const double>) { return v; }

inline diffnet::Var make_node(double v, std::span<const diffnet::Var> parents, std::span<const double> partials) {
  diffnet::Tape& tape = *parents.front().tape;
  for (std::size_t k = 0; k < parents.size(); ++k)
    if (partials[k] != 0.0) tape.add_edge(parents[k], partials[k]);
  return tape.push(v);
}

/// Average of x_k (power 1) or x_k^2 (power 2) as one node.
template <class S>
S fused_mean(std::span<const S> xs, int power) {
  const double inv = 1.0 / static_cast<double>(xs.size());
  double v = 0.0;
  std::vector<double> partial(xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double x = value_of(xs[k]);
    v += power == 1 ? x : x * x;
    partial[k] = power == 1 ? inv : 2.0 * x * inv;
  }
  return make_node(v * inv, xs, partial);
}

/// Unbiased sample variance as one node.
template <class S>
S fused_variance(std::span<const S> xs) {
  const auto n = static_cast<double>(xs.size());
  double m = 0.0;
  for (const auto& x : xs) m += value_of(x);
  m /= n;
  double v = 0.0;
  std::vector<double> partial(xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double d = value_of(xs[k]) - m;
    v += d * d;
    partial[k] = 2.0 * d / (n - 1.0);
  }
  return make_node(v / (n - 1.0), xs, partial);
}

/// First and second sample moments of z_a = T(mu + sigma eps_a), T the
/// identity (Gaussian) or exp (log-normal), each as one node on (mu, sigma).
template <class S>
std::array<S, 2> reparam_moments(varfam::Family family, const S& mu, const S& sigma, std::span<const double> eps) {
  const double m = value_of(mu), s = value_of(sigma);
  const double inv = 1.0 / static_cast<double>(eps.size());
  double m1 = 0, m1_mu = 0, m1_s = 0, m2 = 0, m2_mu = 0, m2_s = 0;
  for (double e : eps) {
    const double u = m + s * e;
    const double t = family == varfam::Family::GaussianDiag ? u : std::exp(u);
    const double dt = family == varfam::Family::GaussianDiag ? 1.0 : t;
    m1 += t;
    m1_mu += dt;
    m1_s += dt * e;
    m2 += t * t;
    m2_mu += 2 * t * dt;
    m2_s += 2 * t * dt * e;
  }
  const S parents[2] = {mu, sigma};
  const double p1[2] = {m1_mu * inv, m1_s * inv};
  const double p2[2] = {m2_mu * inv, m2_s * inv};
  return {make_node(m1 * inv, parents, p1), make_node(m2 * inv, parents, p2)};
}

template <class S>
varfam::BasicDistParams<S> detached(const varfam::BasicDistParams<S>& p) {
  varfam::BasicDistParams<S> out{p.family, {}, {}};
  for (const auto& v : p.mu) out.mu.push_back(diffnet::detach(v));
  for (const auto& v : p.sigma) out.sigma.push_back(diffnet::detach(v));
  return out;
}

inline std::vector<std::vector<double>> normal_rows(Rng& rng, std::size_t n, std::size_t dim) {
  std::vector<std::vector<double>> rows(n);
  for (auto& r : rows) r = standard_normal_vector(rng, dim);
  return rows;
}

template <class S>
S mean_of(const std::vector<S>& xs) {
  return diffnet::mean<S>(std::span<const S>(xs));
}

}  // namespace detail

/// Negative ELBO estimate at observation y. Entropy and prior terms are
/// closed form; only the likelihood is sampled (n1 reparameterized draws).
template <class S>
S elbo_loss(const problems::Problem& p, const varfam::BasicDistParams<S>& q, std::span<const double> y,
            std::size_t n1, Rng& rng) {
  if (q.family != varfam::Family::GaussianDiag) throw ContractError("elbo_loss: q must be GaussianDiag");
  if (q.dim() != p.theta_dim) throw ShapeError("elbo_loss: q dimension does not match theta_dim");
  if (n1 == 0) throw ConfigError("elbo_loss: n1 must be positive");
  const auto eps = detail::normal_rows(rng, n1, p.theta_dim);
  std::vector<S> ll;
  ll.reserve(n1);
  for (const auto& e : eps) {
    const auto theta = varfam::sample_reparam(q, e);
    ll.push_back(problems::log_likelihood<S>(p, theta, y));
  }
  return varfam::entropy_term(q) - varfam::gaussian_prior_cross_term(q, p.prior) - detail::mean_of(ll);
}

/// Jensen upper bound -E_r E_q[log p(z | theta)] from the moments of the z
/// samples and of H over the inner theta samples. The double average over all
/// (z, theta) pairs is evaluated exactly through those moments.
template <class S>
S predictive_cross_upper(const problems::Problem& p, const varfam::BasicDistParams<S>& r,
                         const std::vector<std::vector<double>>& eps_z, const std::vector<std::vector<S>>& h) {
  if (!p.pred_noise.is_diagonal()) throw ContractError("predictive term requires a diagonal predictive noise");
  S acc{};
  for (std::size_t i = 0; i < p.z_dim; ++i) {
    std::vector<double> e(eps_z.size());
    for (std::size_t a = 0; a < eps_z.size(); ++a) e[a] = eps_z[a][i];
    const auto zm = detail::reparam_moments(r.family, r.mu[i], r.sigma[i], std::span<const double>(e));
    std::vector<S> hi;
    hi.reserve(h.size());
    for (const auto& row : h) hi.push_back(row[i]);
    const S h1 = detail::fused_mean<S>(hi, 1);
    const S h2 = detail::fused_mean<S>(hi, 2);
    const double s2 = p.pred_noise.cov()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
    const S term = 0.5 * (kLog2Pi + std::log(s2)) + (zm[1] - 2.0 * zm[0] * h1 + h2) / (2.0 * s2);
    acc = i == 0 ? term : acc + term;
  }
  return acc;
}

/// Direct estimate of -E_r[log E_q p(z | theta)] (log-sum-exp over the inner
/// samples for every z sample).
inline double predictive_cross_direct(const problems::Problem& p, const std::vector<std::vector<double>>& z,
                                      const std::vector<std::vector<double>>& h) {
  double acc = 0.0;
  std::vector<double> lp(h.size());
  for (const auto& za : z) {
    for (std::size_t b = 0; b < h.size(); ++b) lp[b] = p.pred_noise.log_density(za, h[b]);
    const double mx = *std::max_element(lp.begin(), lp.end());
    double s = 0.0;
    for (double v : lp) s += std::exp(v - mx);
    acc += mx + std::log(s / static_cast<double>(h.size()));
  }
  return -acc / static_cast<double>(z.size());
}

/// Joint loss at y: the posterior part of elbo_loss plus the weighted
/// predictive upper bound and moment regularization. Random numbers are drawn
/// in a fixed order (likelihood, inner theta, z, eta), so with all weights
/// zero the result equals elbo_loss on the same stream.
template <class S>
LossParts<S> joint_loss(const problems::Problem& p, const varfam::BasicDistParams<S>& q,
                        const varfam::BasicDistParams<S>& r, std::span<const double> y, const LossWeights& w,
                        const LossSamples& n, Rng& rng, bool detach_inner = false) {
  if (r.dim() != p.z_dim) throw ShapeError("joint_loss: r dimension does not match z_dim");
  LossParts<S> out;
  out.posterior = elbo_loss(p, q, y, n.n1, rng);
  out.total = out.posterior;
  const bool predictive = w.alpha1 != 0.0;
  const bool regularize = w.alpha2 != 0.0 || w.alpha3 != 0.0;
  if (!predictive && !regularize) return out;
  if (n.n3 == 0 || n.n2 == 0 || (regularize && n.lp < 2)) throw ConfigError("joint_loss: sample counts too small");
  if (!p.pred_noise.is_diagonal()) throw ContractError("joint_loss: predictive noise must be diagonal");

  const std::size_t n_theta = std::max(predictive ? n.n3 : 0, regularize ? n.lp : 0);
  const auto eps_theta = detail::normal_rows(rng, n_theta, p.theta_dim);
  const auto eps_z = detail::normal_rows(rng, n.n2, p.z_dim);
  const auto eta = regularize ? detail::normal_rows(rng, n.lp, p.z_dim) : std::vector<std::vector<double>>{};

  std::vector<std::vector<S>> h;
  h.reserve(n_theta);
  for (const auto& e : eps_theta) {
    const auto theta = varfam::sample_reparam(q, e);
    h.push_back(p.H(std::span<const S>(theta)));
  }

  std::vector<std::vector<S>> h_inner(h.begin(), h.begin() + static_cast<std::ptrdiff_t>(predictive ? n.n3 : 0));
  if (detach_inner)
    for (auto& row : h_inner)
      for (auto& v : row) v = diffnet::detach(v);

  if (predictive) {
    out.predictive = varfam::entropy_term(r) + predictive_cross_upper(p, r, eps_z, h_inner);
    out.total = out.total + w.alpha1 * out.predictive;
  }
  if (regularize) {
    const auto mr = varfam::moments(r);
    S reg{};
    for (std::size_t i = 0; i < p.z_dim; ++i) {
      std::vector<S> zi;
      zi.reserve(n.lp);
      const double sd = std::sqrt(p.pred_noise.cov()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)));
      for (std::size_t k = 0; k < n.lp; ++k) zi.push_back(h[k][i] + sd * eta[k][i]);
      const S mean_p = detail::fused_mean<S>(zi, 1);
      const S var_p = detail::fused_variance<S>(zi);
      const S term = w.alpha2 * diffnet::square(mr.mean[i] - mean_p) + w.alpha3 * diffnet::square(mr.variance[i] - var_p);
      reg = i == 0 ? term : reg + term;
    }
    out.regularization = reg;
    out.total = out.total + reg;
  }
  return out;
}

}  // namespace amvi::train
