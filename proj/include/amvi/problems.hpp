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

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "amvi/core/error.hpp"
#include "amvi/core/mvn.hpp"
#include "amvi/core/rng.hpp"
#include "amvi/core/samples.hpp"
#include "amvi/diffnet/tape.hpp"
#include "amvi/fem/model.hpp"
#include "amvi/varfam.hpp"

namespace amvi::problems {

/// Forward-model evaluation counts, shared by every copy of a Problem.
struct EvalCounter {
  std::atomic<std::uint64_t> g{0};
  std::atomic<std::uint64_t> h{0};
  std::atomic<std::uint64_t> g_simulation{0};  // G calls spent drawing amortization data

  struct Snapshot {
    std::uint64_t g = 0, h = 0, g_simulation = 0;
    Snapshot operator-(const Snapshot& o) const { return {g - o.g, h - o.h, g_simulation - o.g_simulation}; }
  };
  Snapshot snapshot() const { return {g.load(), h.load(), g_simulation.load()}; }
};

/// Map output with an optional Jacobian (rows: outputs, cols: theta).
struct MapValue {
  std::vector<double> value;
  Eigen::MatrixXd jacobian;
};

using MapFn = std::function<MapValue(std::span<const double> theta, bool with_jacobian)>;

struct LinearProblemSpec {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  double obs_noise_var = 0.0;
  double pred_noise_var = 0.0;
};

/// An inference task: Gaussian prior on theta, y = G(theta) + eps,
/// z = H(theta) + eta with Gaussian noises.
class Problem {
 public:
  std::string name;
  std::size_t theta_dim = 0, y_dim = 0, z_dim = 0;
  Mvn prior;
  Mvn obs_noise;
  Mvn pred_noise;
  varfam::Family predictive_family = varfam::Family::GaussianDiag;
  std::optional<LinearProblemSpec> linear;
  std::shared_ptr<fem::FemModel> fem_model;  // set for the finite-element case

  Problem(std::string n, Mvn prior_, Mvn obs, Mvn pred, MapFn g, MapFn h)
      : name(std::move(n)), theta_dim(prior_.dim()), y_dim(obs.dim()), z_dim(pred.dim()),
        prior(std::move(prior_)), obs_noise(std::move(obs)), pred_noise(std::move(pred)),
        g_(std::move(g)), h_(std::move(h)), counter_(std::make_shared<EvalCounter>()) {}

  EvalCounter& counter() const { return *counter_; }

  std::vector<double> G(std::span<const double> theta) const { return eval(g_, theta, false, counter_->g, y_dim).value; }
  std::vector<double> H(std::span<const double> theta) const { return eval(h_, theta, false, counter_->h, z_dim).value; }
  MapValue G_jacobian(std::span<const double> theta) const { return eval(g_, theta, true, counter_->g, y_dim); }
  MapValue H_jacobian(std::span<const double> theta) const { return eval(h_, theta, true, counter_->h, z_dim); }

  /// G applied to recorded nodes: one tape node per output with the Jacobian
  /// as its local partials.
  std::vector<diffnet::Var> G(std::span<const diffnet::Var> theta) const { return record(g_, theta, counter_->g, y_dim); }
  std::vector<diffnet::Var> H(std::span<const diffnet::Var> theta) const { return record(h_, theta, counter_->h, z_dim); }

  /// Uncounted G used for amortization data; tallied separately.
  std::vector<double> G_simulation(std::span<const double> theta) const {
    return eval(g_, theta, false, counter_->g_simulation, y_dim).value;
  }

 private:
  MapValue eval(const MapFn& f, std::span<const double> theta, bool jac, std::atomic<std::uint64_t>& count,
                std::size_t out_dim) const {
    if (theta.size() != theta_dim)
      throw ShapeError(name + ": theta has length " + std::to_string(theta.size()) + ", expected " +
                       std::to_string(theta_dim));
    count.fetch_add(1, std::memory_order_relaxed);
    MapValue r = f(theta, jac);
    if (r.value.size() != out_dim) throw ShapeError(name + ": forward map returned the wrong length");
    return r;
  }

  std::vector<diffnet::Var> record(const MapFn& f, std::span<const diffnet::Var> theta,
                                   std::atomic<std::uint64_t>& count, std::size_t out_dim) const {
    if (theta.empty()) throw ShapeError(name + ": empty theta");
    std::vector<double> tv;
    tv.reserve(theta.size());
    for (auto t : theta) tv.push_back(t.value());
    const MapValue r = eval(f, tv, true, count, out_dim);
    diffnet::Tape& tape = *theta.front().tape;
    std::vector<diffnet::Var> out;
    out.reserve(out_dim);
    for (std::size_t i = 0; i < out_dim; ++i) {
      for (std::size_t j = 0; j < theta.size(); ++j) {
        const double d = r.jacobian(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        if (d != 0.0) tape.add_edge(theta[j], d);
      }
      out.push_back(tape.push(r.value[i]));
    }
    return out;
  }

  MapFn g_, h_;
  std::shared_ptr<EvalCounter> counter_;
};

namespace detail {

inline MapFn linear_map(Eigen::MatrixXd M, Eigen::VectorXd offset = {}) {
  if (offset.size() == 0) offset = Eigen::VectorXd::Zero(M.rows());
  return [M = std::move(M), offset = std::move(offset)](std::span<const double> theta, bool jac) {
    MapValue r;
    r.value = to_std(M * to_eigen(theta) + offset);
    if (jac) r.jacobian = M;
    return r;
  };
}

inline Eigen::MatrixXd uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  Eigen::MatrixXd M(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j) M(i, j) = lo + (hi - lo) * uniform01(rng);
  return M;
}

}  // namespace detail

/// Linear-Gaussian task y = A theta + eps, z = B theta + eta with a standard
/// normal prior.
inline Problem make_linear_problem(std::string name, const LinearProblemSpec& spec) {
  const auto d = static_cast<std::size_t>(spec.A.cols());
  if (spec.B.cols() != spec.A.cols()) throw ShapeError("make_linear_problem: A and B column counts differ");
  Problem p(std::move(name), Mvn::isotropic(d, 1.0),
            Mvn::isotropic(static_cast<std::size_t>(spec.A.rows()), spec.obs_noise_var),
            Mvn::isotropic(static_cast<std::size_t>(spec.B.rows()), spec.pred_noise_var),
            detail::linear_map(spec.A), detail::linear_map(spec.B));
  p.linear = spec;
  return p;
}

/// Case 3 matrices: entries of A then B drawn i.i.d. from U[0, 2].
inline LinearProblemSpec case3_spec(std::size_t d, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {stream::kProblem, d}));
  LinearProblemSpec s;
  s.A = detail::uniform_matrix(rng, d, d, 0.0, 2.0);
  s.B = detail::uniform_matrix(rng, d, d, 0.0, 2.0);
  s.obs_noise_var = 1e-4;
  s.pred_noise_var = 1e-3;
  return s;
}

inline std::shared_ptr<fem::FemModel> make_cook_model(const fem::CookGeometry& geometry = {},
                                                      fem::Formulation form = fem::Formulation::Incompatible,
                                                      fem::GradientMode mode = fem::GradientMode::Direct) {
  return std::make_shared<fem::FemModel>(fem::make_cook_membrane(geometry), form, mode);
}

/// Cook's membrane task: theta -> (E, nu), y = node-A displacement,
/// z = von Mises stress at two Gauss points, log-normal predictive family.
inline Problem make_fem_problem(std::shared_ptr<fem::FemModel> model) {
  if (!model) throw ConfigError("make_fem_problem: null model");
  auto g = [model](std::span<const double> theta, bool jac) {
    const auto r = model->evaluate({theta[0], theta[1]}, jac);
    MapValue v{{r.displacement[0], r.displacement[1]}, {}};
    if (jac) v.jacobian = r.d_displacement;
    return v;
  };
  auto h = [model](std::span<const double> theta, bool jac) {
    const auto r = model->evaluate({theta[0], theta[1]}, jac);
    MapValue v{{r.von_mises[0], r.von_mises[1]}, {}};
    if (jac) v.jacobian = r.d_von_mises;
    return v;
  };
  Problem p("case4", Mvn::isotropic(2, 1.0), Mvn::isotropic(2, 1e-1), Mvn::isotropic(2, 3e-3), g, h);
  p.predictive_family = varfam::Family::LogNormalDiag;
  p.fem_model = std::move(model);
  return p;
}

/// Dimension of a "case3-<d>" or "case3-d<d>" name; 5 for a bare "case3".
inline std::optional<std::size_t> case3_dimension(const std::string& name) {
  if (name == "case3") return 5;
  if (name.rfind("case3-", 0) != 0) return std::nullopt;
  std::string tail = name.substr(6);
  if (!tail.empty() && tail[0] == 'd') tail = tail.substr(1);
  if (tail.empty() || tail.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError("invalid case3 dimension in '" + name + "'");
  const auto d = static_cast<std::size_t>(std::stoul(tail));
  if (d == 0) throw ConfigError("case3 dimension must be positive");
  return d;
}

/// Benchmark tasks. The seed only affects case3 (its A and B matrices).
inline Problem make_case(const std::string& name, std::uint64_t seed = 0) {
  if (name == "case1a") {
    LinearProblemSpec s{Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::MatrixXd::Constant(1, 1, 3.0), 1e-4, 1e-3};
    return make_linear_problem("case1a", s);
  }
  if (name == "case1b") {
    auto g = [](std::span<const double> t, bool jac) {
      MapValue r{{0.2 * t[0] * t[0] + 0.1}, {}};
      if (jac) r.jacobian = Eigen::MatrixXd::Constant(1, 1, 0.4 * t[0]);
      return r;
    };
    auto h = [](std::span<const double> t, bool jac) {
      const double e = std::exp(t[0]);
      MapValue r{{e + 0.2}, {}};
      if (jac) r.jacobian = Eigen::MatrixXd::Constant(1, 1, e);
      return r;
    };
    return Problem("case1b", Mvn::isotropic(1, 1.0), Mvn::isotropic(1, 1e-2), Mvn::isotropic(1, 1e-3), g, h);
  }
  if (name == "case2") {
    auto g = [](std::span<const double> t, bool jac) {
      const double a = t[0], b = t[1];
      MapValue r{{2 * a * a + b + 2, b + b * b * b * b + a + 1}, {}};
      if (jac) {
        r.jacobian.resize(2, 2);
        r.jacobian << 4 * a, 1, 1, 1 + 4 * b * b * b;
      }
      return r;
    };
    auto h = [](std::span<const double> t, bool jac) {
      const double ea = std::exp(t[0]), eb = std::exp(t[1]);
      MapValue r{{ea + t[1] + 0.2, eb + t[0] + 0.1}, {}};
      if (jac) {
        r.jacobian.resize(2, 2);
        r.jacobian << ea, 1, 1, eb;
      }
      return r;
    };
    return Problem("case2", Mvn::isotropic(2, 1.0), Mvn::isotropic(2, 1e-1), Mvn::isotropic(2, 1e-2), g, h);
  }
  if (const auto d = case3_dimension(name)) {
    return make_linear_problem("case3-" + std::to_string(*d), case3_spec(*d, seed));
  }
  if (name == "case4") return make_fem_problem(make_cook_model());
  throw ConfigError("unknown case '" + name + "' (expected case1a, case1b, case2, case3-<d> or case4)");
}

/// n i.i.d. draws from the prior predictive p(y).
inline SampleSet simulate_observations(const Problem& p, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("simulate_observations: n must be at least 1");
  Rng rng(derive_seed(seed, {stream::kSimulate}));
  SampleSet ys(n, p.y_dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto theta = p.prior.sample(rng);
    const auto g = p.G_simulation(theta);
    const auto eps = p.obs_noise.sample_noise(rng);
    for (std::size_t j = 0; j < p.y_dim; ++j) ys[i][j] = g[j] + eps[j];
  }
  return ys;
}

/// log N(x; m, cov) with the quadratic form expanded so that `x` and `m` may
/// hold recorded nodes.
template <class X, class M>
auto gaussian_log_density(const Mvn& noise, std::span<const X> x, std::span<const M> m) {
  using S = decltype(std::declval<X>() - std::declval<M>());
  const auto& P = noise.precision();
  const std::size_t d = noise.dim();
  if (x.size() != d || m.size() != d) throw ShapeError("gaussian_log_density: dimension mismatch");
  std::vector<S> r;
  r.reserve(d);
  for (std::size_t i = 0; i < d; ++i) r.push_back(x[i] - m[i]);
  S quad = P(0, 0) * (r[0] * r[0]);
  for (std::size_t i = 0; i < d; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    if (i > 0) quad = quad + P(ii, ii) * (r[i] * r[i]);
    for (std::size_t j = i + 1; j < d; ++j) {
      const double pij = P(ii, static_cast<Eigen::Index>(j));
      if (pij != 0.0) quad = quad + (2.0 * pij) * (r[i] * r[j]);
    }
  }
  return -0.5 * (static_cast<double>(d) * kLog2Pi + noise.log_det()) - 0.5 * quad;
}

/// log p(y | theta) = log N(y; G(theta), obs noise).
template <class S>
S log_likelihood(const Problem& p, std::span<const S> theta, std::span<const double> y) {
  const auto g = p.G(theta);
  return S(gaussian_log_density(p.obs_noise, y, std::span<const S>(g)));
}

/// log p(z | theta) = log N(z; H(theta), predictive noise).
template <class S>
S log_pred_density(const Problem& p, std::span<const S> theta, std::span<const double> z) {
  const auto h = p.H(theta);
  return S(gaussian_log_density(p.pred_noise, z, std::span<const S>(h)));
}

}  // namespace amvi::problems
