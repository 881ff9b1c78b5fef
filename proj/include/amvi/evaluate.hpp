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
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "amvi/core/error.hpp"
#include "amvi/core/mvn.hpp"
#include "amvi/core/rng.hpp"
#include "amvi/core/samples.hpp"
#include "amvi/problems.hpp"
#include "amvi/reference.hpp"
#include "amvi/train/head.hpp"
#include "amvi/train/trainer.hpp"
#include "amvi/varfam.hpp"

namespace amvi::evaluate {

/// Exact KL(p || q) between multivariate Gaussians, clamped at zero against
/// round-off.
inline double kl_gaussian_closed(const Mvn& p, const Mvn& q) {
  if (p.dim() != q.dim()) throw ShapeError("kl_gaussian_closed: dimension mismatch");
  if (p.mean() == q.mean() && p.cov() == q.cov()) return 0.0;
  const Eigen::VectorXd dm = q.mean() - p.mean();
  const double trace = (q.precision() * p.cov()).trace();
  const double quad = dm.dot(q.precision() * dm);
  return std::max(0.0, 0.5 * (trace + quad - static_cast<double>(p.dim()) + q.log_det() - p.log_det()));
}

inline Mvn to_mvn(const varfam::DistParams& p) {
  if (p.family != varfam::Family::GaussianDiag) throw ContractError("to_mvn: distribution is not Gaussian");
  varfam::validate(p);
  Eigen::VectorXd var(static_cast<Eigen::Index>(p.dim()));
  for (std::size_t i = 0; i < p.dim(); ++i) var[static_cast<Eigen::Index>(i)] = p.sigma[i] * p.sigma[i];
  return {to_eigen(p.mu), var.asDiagonal()};
}

inline double kl_gaussian_closed(const varfam::DistParams& p, const Mvn& q) { return kl_gaussian_closed(to_mvn(p), q); }
inline double kl_gaussian_closed(const varfam::DistParams& p, const varfam::DistParams& q) {
  return kl_gaussian_closed(to_mvn(p), to_mvn(q));
}

/// Product-Gaussian kernel density estimate with Silverman's bandwidth
/// h_j = s_j (4 / ((d + 2) n))^(1 / (d + 4)).
class Kde {
 public:
  explicit Kde(const SampleSet& samples) : samples_(samples) {
    const std::size_t n = samples.size(), d = samples.dim();
    if (n < 2) throw ConfigError("Kde: need at least two samples");
    const auto var = samples.variance();
    const double factor = std::pow(4.0 / ((static_cast<double>(d) + 2.0) * static_cast<double>(n)),
                                   1.0 / (static_cast<double>(d) + 4.0));
    for (std::size_t j = 0; j < d; ++j) {
      if (!(var[j] > 0.0)) throw ConfigError("Kde: reference samples have zero variance in component " + std::to_string(j));
      bandwidth_.push_back(std::sqrt(var[j]) * factor);
    }
    log_norm_ = -std::log(static_cast<double>(n));
    for (double h : bandwidth_) log_norm_ -= 0.5 * kLog2Pi + std::log(h);
  }

  const std::vector<double>& bandwidth() const noexcept { return bandwidth_; }

  double log_density(std::span<const double> z) const {
    const std::size_t n = samples_.size(), d = samples_.dim();
    if (z.size() != d) throw ShapeError("Kde::log_density: dimension mismatch");
    terms_.resize(n);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      const auto x = samples_[k];
      double q = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double r = (z[j] - x[j]) / bandwidth_[j];
        q += r * r;
      }
      terms_[k] = -0.5 * q;
      mx = std::max(mx, terms_[k]);
    }
    double s = 0.0;
    for (double t : terms_) s += std::exp(t - mx);
    return log_norm_ + mx + std::log(s);
  }

  std::vector<double> sample(Rng& rng) const {
    std::uniform_int_distribution<std::size_t> pick(0, samples_.size() - 1);
    const auto x = samples_[pick(rng)];
    std::vector<double> z(x.begin(), x.end());
    for (std::size_t j = 0; j < z.size(); ++j) z[j] += bandwidth_[j] * standard_normal(rng);
    return z;
  }

 private:
  const SampleSet& samples_;
  std::vector<double> bandwidth_;
  double log_norm_ = 0.0;
  mutable std::vector<double> terms_;
};

/// An approximate predictive density: a diagonal family, a full Gaussian, or a
/// kernel density estimate of propagated samples.
using Approximation = std::variant<varfam::DistParams, Mvn, SampleSet>;

struct KlEstimate {
  double value = 0.0;
  double standard_error = 0.0;
};

/// Monte Carlo KL(approx || p_ref) with p_ref a KDE of the reference samples.
/// No floor on the reference size; kl_sample_based adds one.
template <class A>
KlEstimate kl_kde(const A& approx, const SampleSet& ref_samples, std::size_t n_mc, std::uint64_t seed) {
  if (n_mc < 2) throw ConfigError("kl_sample_based: n_mc must be at least 2");
  const Kde ref(ref_samples);
  std::optional<Kde> approx_kde;
  if constexpr (std::is_same_v<A, SampleSet>) approx_kde.emplace(approx);
  Rng rng(derive_seed(seed, {stream::kKl}));
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t i = 0; i < n_mc; ++i) {
    double la = 0.0;
    std::vector<double> z;
    if constexpr (std::is_same_v<A, varfam::DistParams>) {
      z = varfam::sample(approx, rng);
      la = varfam::log_density(approx, z);
    } else if constexpr (std::is_same_v<A, Mvn>) {
      z = approx.sample(rng);
      la = approx.log_density(z);
    } else {
      z = approx_kde->sample(rng);
      la = approx_kde->log_density(z);
    }
    const double t = la - ref.log_density(z);
    sum += t;
    sum2 += t * t;
  }
  const double n = static_cast<double>(n_mc);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum2 / n - mean * mean) * n / (n - 1.0));
  return {mean, std::sqrt(var / n)};
}

template <class A>
KlEstimate kl_sample_based(const A& approx, const SampleSet& ref_samples, std::size_t n_mc, std::uint64_t seed) {
  if (ref_samples.size() < 500) throw ConfigError("kl_sample_based: need at least 500 reference samples");
  return kl_kde(approx, ref_samples, n_mc, seed);
}

inline KlEstimate kl_sample_based(const Approximation& approx, const SampleSet& ref_samples, std::size_t n_mc,
                                  std::uint64_t seed) {
  return std::visit([&](const auto& a) { return kl_sample_based<std::decay_t<decltype(a)>>(a, ref_samples, n_mc, seed); },
                    approx);
}

struct MomentErrors {
  std::vector<double> mean;
  std::vector<double> variance;
  std::vector<bool> mean_absolute;  // reference component was zero: absolute error reported
  std::vector<bool> variance_absolute;
};

/// |a - r| / |r| per component; absolute error with a flag where r = 0.
inline MomentErrors moment_errors(const varfam::MomentPair& approx, const varfam::MomentPair& ref) {
  if (approx.mean.size() != ref.mean.size() || approx.variance.size() != ref.variance.size())
    throw ShapeError("moment_errors: dimension mismatch");
  MomentErrors e;
  auto rel = [](double a, double r, std::vector<double>& out, std::vector<bool>& flag) {
    const bool zero = r == 0.0;
    out.push_back(zero ? std::abs(a) : std::abs(a - r) / std::abs(r));
    flag.push_back(zero);
  };
  for (std::size_t i = 0; i < ref.mean.size(); ++i) rel(approx.mean[i], ref.mean[i], e.mean, e.mean_absolute);
  for (std::size_t i = 0; i < ref.variance.size(); ++i)
    rel(approx.variance[i], ref.variance[i], e.variance, e.variance_absolute);
  return e;
}

inline varfam::MomentPair sample_moments(const SampleSet& s) { return {s.mean(), s.variance()}; }

/// Full-covariance Gaussian with the sample mean and (1/n) covariance.
inline Mvn fit_gaussian(const SampleSet& s) {
  const auto d = static_cast<Eigen::Index>(s.dim());
  const Eigen::VectorXd m = to_eigen(s.mean());
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const Eigen::VectorXd x = to_eigen(s[i]) - m;
    C += x * x.transpose();
  }
  C /= static_cast<double>(s.size());
  return {m, C};
}

/// Diagonal log-normal whose natural-space mean and variance equal the sample
/// moments.
inline varfam::DistParams fit_lognormal(const SampleSet& s) {
  const auto m = s.mean(), v = s.variance();
  varfam::DistParams p{varfam::Family::LogNormalDiag, {}, {}};
  for (std::size_t j = 0; j < m.size(); ++j) {
    if (!(m[j] > 0.0)) throw ConfigError("fit_lognormal: sample mean must be positive");
    const double s2 = std::log1p(v[j] / (m[j] * m[j]));
    p.sigma.push_back(std::sqrt(s2));
    p.mu.push_back(std::log(m[j]) - 0.5 * s2);
  }
  return p;
}

// Evaluation grids.

/// Central 95% prior-predictive interval of each y component: exact for
/// linear-Gaussian tasks, empirical quantiles of `n` draws otherwise.
inline std::vector<std::array<double, 2>> central_intervals(const problems::Problem& p, std::uint64_t seed,
                                                         std::size_t n = 100000) {
  constexpr double kZ975 = 1.959963984540054;
  std::vector<std::array<double, 2>> out;
  if (p.linear) {
    const Eigen::MatrixXd& A = p.linear->A;
    const Eigen::VectorXd m = A * p.prior.mean();
    const Eigen::MatrixXd C = A * p.prior.cov() * A.transpose() + p.obs_noise.cov();
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double sd = std::sqrt(C(i, i));
      out.push_back({m[i] - kZ975 * sd, m[i] + kZ975 * sd});
    }
    return out;
  }
  Rng rng(derive_seed(seed, {stream::kGrid, 1}));
  std::vector<std::vector<double>> cols(p.y_dim, std::vector<double>(n));
  for (std::size_t k = 0; k < n; ++k) {
    const auto theta = p.prior.sample(rng);
    const auto g = p.G_simulation(theta);
    const auto e = p.obs_noise.sample_noise(rng);
    for (std::size_t j = 0; j < p.y_dim; ++j) cols[j][k] = g[j] + e[j];
  }
  for (auto& c : cols) {
    std::sort(c.begin(), c.end());
    auto q = [&](double f) { return c[static_cast<std::size_t>(f * static_cast<double>(n - 1))]; };
    out.push_back({q(0.025), q(0.975)});
  }
  return out;
}

/// Uniform tensor grid with `points` per component over the central intervals.
inline SampleSet interval_grid(const std::vector<std::array<double, 2>>& iv, std::size_t points) {
  const std::size_t d = iv.size();
  std::size_t total = 1;
  for (std::size_t j = 0; j < d; ++j) total *= points;
  SampleSet g(total, d);
  for (std::size_t k = 0; k < total; ++k) {
    std::size_t rest = k;
    for (std::size_t j = d; j-- > 0;) {
      const std::size_t idx = rest % points;
      rest /= points;
      g[k][j] = points == 1 ? 0.5 * (iv[j][0] + iv[j][1])
                            : iv[j][0] + (iv[j][1] - iv[j][0]) * static_cast<double>(idx) / static_cast<double>(points - 1);
    }
  }
  return g;
}

/// Default grid: 21 points (1D), 11 x 11 (2D), or 50 prior-predictive draws
/// (Case 3 and other higher-dimensional tasks).
inline SampleSet evaluation_grid(const problems::Problem& p, std::uint64_t seed) {
  if (p.y_dim == 1) return interval_grid(central_intervals(p, seed), 21);
  if (p.y_dim == 2 && !p.name.starts_with("case3")) return interval_grid(central_intervals(p, seed), 11);
  return simulate_observations(p, 50, derive_seed(seed, {stream::kGrid}));
}

// Case evaluation.

enum class ConventionalDensity { MomentMatched, Kde };

struct EvalConfig {
  std::size_t nc = 100000;       // conventional propagation samples per y
  std::size_t kl_mc = 2000;      // Monte Carlo draws of a sample-based KL
  reference::McmcConfig mcmc;    // for tasks without an analytic reference
  ConventionalDensity conventional_density = ConventionalDensity::MomentMatched;
  std::optional<std::filesystem::path> cache_dir;
  bool allow_reference_compute = true;
  std::uint64_t seed = 0;
};

/// Reference predictive at one y.
struct ReferenceAt {
  std::optional<Mvn> gaussian;
  SampleSet z_samples;  // empty when analytic
  varfam::MomentPair moments;
  double mcmc_acceptance = -1.0;
  bool mcmc_warning = false;
};

inline ReferenceAt reference_at(const problems::Problem& p, std::span<const double> y, const EvalConfig& cfg,
                                std::size_t y_index, const std::string& problem_id) {
  ReferenceAt r;
  if (p.linear) {
    const auto ref = reference::analytic_reference(p);
    r.gaussian = ref.predictive(y);
    r.moments.mean = to_std(r.gaussian->mean());
    r.moments.variance = to_std(r.gaussian->cov().diagonal());
    return r;
  }
  const std::uint64_t seed = derive_seed(cfg.seed, {stream::kMcmc, y_index});
  const auto mc = cfg.cache_dir
                      ? reference::cached_rwm_sample(*cfg.cache_dir, problem_id, p, y, cfg.mcmc, seed,
                                                     cfg.allow_reference_compute)
                      : reference::rwm_sample(p, y, cfg.mcmc, seed);
  r.z_samples = reference::reference_predictive(p, mc.samples, seed);
  r.moments = sample_moments(r.z_samples);
  r.mcmc_acceptance = mc.acceptance_rate;
  r.mcmc_warning = mc.acceptance_warning;
  return r;
}

struct Record {
  std::size_t y_index = 0;
  std::vector<double> y;
  std::string method;
  std::string kl_kind;  // "closed" or "kde"
  double kl = 0.0;
  double kl_se = 0.0;
  MomentErrors errors;
  varfam::MomentPair approx;
  varfam::MomentPair ref;
};

struct Aggregate {
  double kl = 0.0;
  double mean_rel_err = 0.0;
  double var_rel_err = 0.0;
  std::size_t count = 0;
};

using Counts = problems::EvalCounter::Snapshot;

struct ExperimentResult {
  std::string case_name;
  std::vector<Record> records;
  std::map<std::string, Aggregate> aggregate;
  std::map<std::string, Counts> online;  // G/H calls spent producing each method's predictive
  Counts reference_cost;
  std::size_t mcmc_warnings = 0;  // reference chains with acceptance outside the target band
  nlohmann::json manifest;
};

inline void accumulate(Counts& into, const Counts& d) {
  into.g += d.g;
  into.h += d.h;
  into.g_simulation += d.g_simulation;
}

/// Component-averaged errors of a record.
inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline void aggregate(ExperimentResult& res) {
  res.aggregate.clear();
  for (const auto& r : res.records) {
    auto& a = res.aggregate[r.method];
    a.kl += r.kl;
    a.mean_rel_err += mean_of(r.errors.mean);
    a.var_rel_err += mean_of(r.errors.variance);
    ++a.count;
  }
  for (auto& [m, a] : res.aggregate) {
    const double n = static_cast<double>(a.count);
    a.kl /= n;
    a.mean_rel_err /= n;
    a.var_rel_err /= n;
  }
}

/// Trained heads of the methods under evaluation.
struct TrainedMethods {
  std::optional<train::AmortizedHead> proposed_predictive;
  std::optional<train::AmortizedHead> conventional_posterior;
};

/// Scores every requested method against the reference on each grid value.
inline ExperimentResult run_case_evaluation(const problems::Problem& p, const TrainedMethods& methods,
                                            const SampleSet& y_grid, const EvalConfig& cfg,
                                            const std::string& problem_id) {
  ExperimentResult res;
  res.case_name = p.name;
  for (std::size_t k = 0; k < y_grid.size(); ++k) {
    const auto y = y_grid[k];
    auto mark = p.counter().snapshot();
    auto lap = [&]() {
      const auto now = p.counter().snapshot();
      const auto d = now - mark;
      mark = now;
      return d;
    };
    const ReferenceAt ref = reference_at(p, y, cfg, k, problem_id);
    accumulate(res.reference_cost, lap());
    if (ref.mcmc_warning) ++res.mcmc_warnings;
    auto score = [&](const std::string& method, const Approximation& approx, const varfam::MomentPair& am) {
      Record rec;
      rec.y_index = k;
      rec.y.assign(y.begin(), y.end());
      rec.method = method;
      const bool approx_gaussian =
          std::holds_alternative<Mvn>(approx) ||
          (std::holds_alternative<varfam::DistParams>(approx) &&
           std::get<varfam::DistParams>(approx).family == varfam::Family::GaussianDiag);
      if (ref.gaussian && approx_gaussian) {
        rec.kl_kind = "closed";
        rec.kl = std::holds_alternative<Mvn>(approx)
                     ? kl_gaussian_closed(std::get<Mvn>(approx), *ref.gaussian)
                     : kl_gaussian_closed(std::get<varfam::DistParams>(approx), *ref.gaussian);
      } else {
        rec.kl_kind = "kde";
        SampleSet drawn;
        const SampleSet* ref_samples = &ref.z_samples;
        if (ref.gaussian) {  // analytic reference scored against a non-Gaussian approximation
          Rng rng(derive_seed(cfg.seed, {stream::kKl, k, 7}));
          drawn = SampleSet(0, p.z_dim);
          for (std::size_t i = 0; i < std::max<std::size_t>(cfg.mcmc.n_samples, 500); ++i) drawn.push_back(ref.gaussian->sample(rng));
          ref_samples = &drawn;
        }
        const auto e = kl_sample_based(approx, *ref_samples, cfg.kl_mc, derive_seed(cfg.seed, {stream::kKl, k}));
        rec.kl = e.value;
        rec.kl_se = e.standard_error;
      }
      rec.approx = am;
      rec.ref = ref.moments;
      rec.errors = moment_errors(am, ref.moments);
      res.records.push_back(std::move(rec));
    };
    if (methods.proposed_predictive) {
      const auto r = methods.proposed_predictive->evaluate(y);
      accumulate(res.online["proposed"], lap());
      score("proposed", r, varfam::moments(r));
      lap();
    }
    if (methods.conventional_posterior) {
      const auto zs = train::propagate_predictive(p, *methods.conventional_posterior, y, cfg.nc,
                                                  derive_seed(cfg.seed, {stream::kPropagate, k}));
      accumulate(res.online["conventional"], lap());
      const auto am = sample_moments(zs);
      if (cfg.conventional_density == ConventionalDensity::Kde)
        score("conventional", zs, am);
      else if (p.predictive_family == varfam::Family::LogNormalDiag)
        score("conventional", fit_lognormal(zs), am);
      else
        score("conventional", fit_gaussian(zs), am);
    }
  }
  aggregate(res);
  return res;
}

// Output writers. Fixed formatting keeps repeated runs byte-identical.

namespace detail {

inline std::string join(const std::vector<double>& v, char sep = ';') {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? std::string(1, sep) : "") << v[i];
  return os.str();
}

}  // namespace detail

/// One row per (y, method, metric, component).
inline void write_results_csv(std::ostream& os, const ExperimentResult& res) {
  os << "y_index,y,method,metric,component,value,flag\n";
  os.precision(17);
  for (const auto& r : res.records) {
    const std::string head = std::to_string(r.y_index) + "," + detail::join(r.y) + "," + r.method + ",";
    os << head << "kl,," << r.kl << "," << r.kl_kind << "\n";
    os << head << "kl_se,," << r.kl_se << ",\n";
    for (std::size_t i = 0; i < r.errors.mean.size(); ++i)
      os << head << "mean_rel_err," << i << "," << r.errors.mean[i] << "," << (r.errors.mean_absolute[i] ? "absolute" : "")
         << "\n";
    for (std::size_t i = 0; i < r.errors.variance.size(); ++i)
      os << head << "var_rel_err," << i << "," << r.errors.variance[i] << ","
         << (r.errors.variance_absolute[i] ? "absolute" : "") << "\n";
  }
}

inline nlohmann::json aggregate_json(const ExperimentResult& res) {
  nlohmann::json j;
  j["case"] = res.case_name;
  for (const auto& [m, a] : res.aggregate)
    j["methods"][m] = {{"kl_divergence", a.kl}, {"mean_rel_err", a.mean_rel_err}, {"var_rel_err", a.var_rel_err},
                       {"n_observations", a.count}};
  return j;
}

/// KL-versus-y and moment tables for plotting.
inline void write_plotdata(const std::filesystem::path& dir, const ExperimentResult& res) {
  std::filesystem::create_directories(dir);
  std::ofstream kl(dir / "kl_vs_y.csv");
  kl.precision(17);
  kl << "y_index,y,method,kl,kl_se\n";
  for (const auto& r : res.records)
    kl << r.y_index << ',' << detail::join(r.y) << ',' << r.method << ',' << r.kl << ',' << r.kl_se << '\n';
  std::ofstream mo(dir / "moments.csv");
  mo.precision(17);
  mo << "y_index,y,method,component,approx_mean,ref_mean,approx_var,ref_var\n";
  for (const auto& r : res.records)
    for (std::size_t i = 0; i < r.ref.mean.size(); ++i)
      mo << r.y_index << ',' << detail::join(r.y) << ',' << r.method << ',' << i << ',' << r.approx.mean[i] << ','
         << r.ref.mean[i] << ',' << r.approx.variance[i] << ',' << r.ref.variance[i] << '\n';
}

}  // namespace amvi::evaluate
