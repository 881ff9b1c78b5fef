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
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "amvi/core/error.hpp"
#include "amvi/core/mvn.hpp"
#include "amvi/core/rng.hpp"
#include "amvi/core/samples.hpp"
#include "amvi/problems.hpp"
#include "amvi/train/trainer.hpp"

namespace amvi::reference {

/// Closed-form posterior and posterior predictive of a linear-Gaussian task;
/// both means are affine in y.
struct AnalyticGaussianRef {
  Eigen::MatrixXd posterior_gain;
  Eigen::VectorXd posterior_offset;
  Eigen::MatrixXd posterior_cov;
  Eigen::MatrixXd predictive_gain;
  Eigen::VectorXd predictive_offset;
  Eigen::MatrixXd predictive_cov;

  Eigen::VectorXd posterior_mean(std::span<const double> y) const { return posterior_gain * to_eigen(y) + posterior_offset; }
  Eigen::VectorXd predictive_mean(std::span<const double> y) const {
    return predictive_gain * to_eigen(y) + predictive_offset;
  }
  Mvn posterior(std::span<const double> y) const { return {posterior_mean(y), posterior_cov}; }
  Mvn predictive(std::span<const double> y) const { return {predictive_mean(y), predictive_cov}; }
};

/// Sigma1 = (Sigma0^-1 + A^T Se^-1 A)^-1, mean = Sigma1 (A^T Se^-1 y + Sigma0^-1 mu0);
/// predictive N(B mean, B Sigma1 B^T + Sh).
inline AnalyticGaussianRef analytic_reference(const problems::Problem& p) {
  if (!p.linear) throw UnsupportedProblemError("analytic_reference: '" + p.name + "' is not linear-Gaussian");
  const auto& A = p.linear->A;
  const auto& B = p.linear->B;
  const Eigen::MatrixXd& P0 = p.prior.precision();
  const Eigen::MatrixXd AtPe = A.transpose() * p.obs_noise.precision();
  const Eigen::MatrixXd prec = P0 + AtPe * A;
  const Eigen::LLT<Eigen::MatrixXd> llt(prec);
  if (llt.info() != Eigen::Success) throw LinalgError("analytic_reference: posterior precision is not SPD");
  AnalyticGaussianRef r;
  r.posterior_cov = llt.solve(Eigen::MatrixXd::Identity(prec.rows(), prec.cols()));
  r.posterior_cov = 0.5 * (r.posterior_cov + r.posterior_cov.transpose());
  r.posterior_gain = r.posterior_cov * AtPe;
  r.posterior_offset = r.posterior_cov * (P0 * p.prior.mean());
  r.predictive_gain = B * r.posterior_gain;
  r.predictive_offset = B * r.posterior_offset;
  r.predictive_cov = B * r.posterior_cov * B.transpose() + p.pred_noise.cov();
  r.predictive_cov = 0.5 * (r.predictive_cov + r.predictive_cov.transpose());
  return r;
}

struct McmcConfig {
  std::size_t n_samples = 10000;  // kept samples
  double burn_in_fraction = 0.2;
  std::size_t thinning = 5;
  double initial_step = 0.5;       // relative to the prior scale
  std::size_t adapt_window = 100;
  double target_acceptance = 0.3;
  bool adapt_covariance = true;    // proposal shape from burn-in samples
  double independence_probability = 0.1;  // share of proposals drawn from the prior
  std::size_t init_candidates = 100;

  void validate() const {
    if (n_samples == 0 || thinning == 0 || adapt_window == 0) throw ConfigError("McmcConfig: counts must be positive");
    if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0)) throw ConfigError("McmcConfig: burn_in_fraction must lie in [0, 1)");
    if (!(initial_step > 0.0)) throw ConfigError("McmcConfig: initial_step must be positive");
    if (!(independence_probability >= 0.0 && independence_probability < 1.0))
      throw ConfigError("McmcConfig: independence_probability must lie in [0, 1)");
  }

  std::size_t total_iterations() const {
    const double kept = static_cast<double>(n_samples * thinning);
    return static_cast<std::size_t>(std::ceil(kept / (1.0 - burn_in_fraction)));
  }
  std::size_t burn_in() const { return total_iterations() - n_samples * thinning; }
};

struct McmcResult {
  SampleSet samples;
  double acceptance_rate = 0.0;  // random-walk moves after burn-in
  double step_scale = 0.0;
  bool acceptance_warning = false;  // rate outside [0.05, 0.9]
};

/// Target for the generic sampler. `prior` (optional) supplies independence
/// proposals and the initial proposal shape; `log_likelihood` is then
/// log_density minus the prior log density.
struct McmcTarget {
  std::function<double(std::span<const double>)> log_density;
  const Mvn* prior = nullptr;
  std::function<double(std::span<const double>)> log_likelihood;  // required when prior is set
};

/// Random-walk Metropolis. During burn-in the step scale follows the
/// acceptance rate of each window toward the target and, optionally, the
/// proposal shape follows the empirical covariance of the chain; both are
/// frozen afterwards. With a prior attached, a fixed fraction of proposals are
/// independent prior draws accepted by the likelihood ratio, which lets the
/// chain move between separated modes.
inline McmcResult rwm_sample(const McmcTarget& target, std::vector<double> init, const McmcConfig& cfg,
                             std::uint64_t seed) {
  cfg.validate();
  const std::size_t d = init.size();
  const bool independence = target.prior != nullptr && cfg.independence_probability > 0.0;
  if (independence && !target.log_likelihood) throw ContractError("rwm_sample: prior moves need log_likelihood");
  Rng rng(derive_seed(seed, {stream::kMcmc}));
  const std::size_t total = cfg.total_iterations(), burn = cfg.burn_in();

  Eigen::MatrixXd L = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  if (target.prior) L = target.prior->chol();
  double log_scale = std::log(cfg.initial_step);
  std::vector<double> x = std::move(init), prop(d);
  double lp = target.log_density(x);
  double ll = independence ? target.log_likelihood(x) : 0.0;
  if (!std::isfinite(lp)) throw ContractError("rwm_sample: initial state has non-finite log density");

  McmcResult res;
  res.samples = SampleSet(0, d);
  std::size_t window_accept = 0, window_count = 0, window_index = 0;
  std::size_t post_accept = 0, post_count = 0;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  std::size_t n_stats = 0;
  const std::size_t stats_start = burn / 4;

  for (std::size_t it = 0; it < total; ++it) {
    const bool adapting = it < burn;
    const bool prior_move = independence && uniform01(rng) < cfg.independence_probability;
    double lp_new = 0.0, ll_new = 0.0, log_alpha = 0.0;
    if (prior_move) {
      prop = target.prior->sample(rng);
      ll_new = target.log_likelihood(prop);
      lp_new = target.log_density(prop);
      log_alpha = ll_new - ll;
    } else {
      const auto e = standard_normal_vector(rng, d);
      const double s = std::exp(log_scale);
      for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j <= i; ++j) acc += L(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * e[j];
        prop[i] = x[i] + s * acc;
      }
      lp_new = target.log_density(prop);
      if (independence) ll_new = target.log_likelihood(prop);
      log_alpha = lp_new - lp;
    }
    const bool accept = std::isfinite(lp_new) && std::log(uniform01(rng)) < log_alpha;
    if (accept) {
      x = prop;
      lp = lp_new;
      ll = ll_new;
    }
    if (!prior_move) {
      if (adapting) {
        window_accept += accept;
        ++window_count;
      } else {
        post_accept += accept;
        ++post_count;
      }
    }
    if (adapting) {
      if (it >= stats_start) {
        const Eigen::VectorXd xv = to_eigen(x);
        sum += xv;
        outer += xv * xv.transpose();
        ++n_stats;
      }
      if (window_count == cfg.adapt_window) {
        ++window_index;
        const double rate = static_cast<double>(window_accept) / static_cast<double>(window_count);
        log_scale += (rate - cfg.target_acceptance) * 2.0 / std::sqrt(static_cast<double>(window_index));
        window_accept = window_count = 0;
        if (cfg.adapt_covariance && it >= burn / 2 && n_stats > 10 * d + 10) {
          const Eigen::VectorXd m = sum / static_cast<double>(n_stats);
          Eigen::MatrixXd C = outer / static_cast<double>(n_stats) - m * m.transpose();
          C += 1e-12 * (1.0 + C.diagonal().maxCoeff()) *
               Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
          Eigen::LLT<Eigen::MatrixXd> llt(C);
          if (llt.info() == Eigen::Success) {
            const Eigen::MatrixXd Lnew = llt.matrixL();
            const double old_size = L.diagonal().array().abs().mean();
            const double new_size = Lnew.diagonal().array().abs().mean();
            if (new_size > 0.0 && old_size > 0.0) log_scale += std::log(old_size / new_size);
            L = Lnew;
          }
        }
      }
    } else if ((it - burn) % cfg.thinning == cfg.thinning - 1) {
      res.samples.push_back(x);
    }
  }
  res.acceptance_rate = post_count ? static_cast<double>(post_accept) / static_cast<double>(post_count) : 0.0;
  res.step_scale = std::exp(log_scale);
  res.acceptance_warning = res.acceptance_rate < 0.05 || res.acceptance_rate > 0.9;
  return res;
}

/// Posterior samples of theta given y: independent prior candidates pick the
/// starting point, then rwm_sample on log p(y | theta) + log p(theta).
inline McmcResult rwm_sample(const problems::Problem& p, std::span<const double> y, const McmcConfig& cfg,
                             std::uint64_t seed) {
  const std::vector<double> yv(y.begin(), y.end());
  McmcTarget target;
  target.log_likelihood = [&p, yv](std::span<const double> t) { return problems::log_likelihood<double>(p, t, yv); };
  target.log_density = [&p, ll = target.log_likelihood](std::span<const double> t) {
    return ll(t) + p.prior.log_density(t);
  };
  target.prior = &p.prior;
  Rng init_rng(derive_seed(seed, {stream::kMcmc, 1}));
  std::vector<double> best = to_std(p.prior.mean());
  double best_lp = target.log_density(best);
  for (std::size_t k = 0; k < cfg.init_candidates; ++k) {
    auto cand = p.prior.sample(init_rng);
    const double lp = target.log_density(cand);
    if (lp > best_lp) {
      best_lp = lp;
      best = std::move(cand);
    }
  }
  return rwm_sample(target, best, cfg, seed);
}

/// z = H(theta) + eta for every posterior sample.
inline SampleSet reference_predictive(const problems::Problem& p, const SampleSet& thetas, std::uint64_t seed) {
  return train::propagate_samples(p, thetas, seed);
}

// Disk cache of reference sample sets.

inline constexpr const char* kCacheMagic = "AMVI-SAMPLES";

/// 64-bit FNV-1a, used only for cache keys.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline nlohmann::json to_json(const McmcConfig& c) {
  return {{"n_samples", c.n_samples},       {"burn_in_fraction", c.burn_in_fraction},
          {"thinning", c.thinning},         {"initial_step", c.initial_step},
          {"adapt_window", c.adapt_window}, {"target_acceptance", c.target_acceptance},
          {"adapt_covariance", c.adapt_covariance}, {"independence_probability", c.independence_probability},
          {"init_candidates", c.init_candidates}};
}

inline std::string cache_key(const std::string& problem_id, std::span<const double> y, std::uint64_t seed,
                             const McmcConfig& cfg) {
  std::ostringstream os;
  os << problem_id << '|' << seed << '|' << to_json(cfg).dump() << '|';
  os << std::setprecision(17);
  for (double v : y) os << v << ',';
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << fnv1a(os.str());
  return hex.str();
}

inline void write_samples(const std::filesystem::path& path, const SampleSet& s, const nlohmann::json& meta) {
  nlohmann::json header = meta;
  header["count"] = s.size();
  header["dim"] = s.dim();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write sample file '" + path.string() + "'");
  os << kCacheMagic << '\n' << header.dump() << '\n';
  os.write(reinterpret_cast<const char*>(s.data().data()), static_cast<std::streamsize>(s.data().size() * sizeof(double)));
  if (!os) throw Error("failed writing sample file '" + path.string() + "'");
}

inline SampleSet read_samples(const std::filesystem::path& path, nlohmann::json* meta = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open sample file '" + path.string() + "'");
  std::string magic, line;
  std::getline(is, magic);
  if (magic != kCacheMagic) throw ConfigError("'" + path.string() + "' is not a sample file");
  std::getline(is, line);
  const auto header = nlohmann::json::parse(line);
  const auto n = header.at("count").get<std::size_t>(), d = header.at("dim").get<std::size_t>();
  std::vector<double> data(n * d);
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (is.gcount() != static_cast<std::streamsize>(data.size() * sizeof(double)))
    throw ConfigError("sample file '" + path.string() + "' is truncated");
  if (meta) *meta = header;
  return SampleSet(d, std::move(data));
}

/// rwm_sample through an on-disk cache keyed by (problem id, y, seed, config).
/// A miss with `allow_compute` false raises.
inline McmcResult cached_rwm_sample(const std::filesystem::path& dir, const std::string& problem_id,
                                    const problems::Problem& p, std::span<const double> y, const McmcConfig& cfg,
                                    std::uint64_t seed, bool allow_compute = true) {
  const auto file = dir / (cache_key(problem_id, y, seed, cfg) + ".bin");
  if (std::filesystem::exists(file)) {
    nlohmann::json meta;
    McmcResult r;
    r.samples = read_samples(file, &meta);
    r.acceptance_rate = meta.at("acceptance_rate").get<double>();
    r.step_scale = meta.at("step_scale").get<double>();
    r.acceptance_warning = meta.at("acceptance_warning").get<bool>();
    return r;
  }
  if (!allow_compute) throw CacheMissError("reference cache miss for '" + problem_id + "' and computation is disabled");
  McmcResult r = rwm_sample(p, y, cfg, seed);
  std::filesystem::create_directories(dir);
  write_samples(file, r.samples,
                {{"problem", problem_id}, {"seed", seed}, {"y", std::vector<double>(y.begin(), y.end())},
                 {"mcmc", to_json(cfg)}, {"acceptance_rate", r.acceptance_rate}, {"step_scale", r.step_scale},
                 {"acceptance_warning", r.acceptance_warning}});
  return r;
}

}  // namespace amvi::reference
