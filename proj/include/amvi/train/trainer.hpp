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
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "amvi/core/error.hpp"
#include "amvi/core/rng.hpp"
#include "amvi/core/samples.hpp"
#include "amvi/diffnet/adam.hpp"
#include "amvi/problems.hpp"
#include "amvi/train/head.hpp"
#include "amvi/train/loss.hpp"

namespace amvi::train {

enum class Method { Proposed, Conventional };

inline std::string to_string(Method m) { return m == Method::Proposed ? "proposed" : "conventional"; }

inline Method method_from_string(const std::string& s) {
  if (s == "proposed") return Method::Proposed;
  if (s == "conventional") return Method::Conventional;
  throw ConfigError("unknown method '" + s + "' (expected proposed or conventional)");
}

/// Sample counts of a full run. Training steps use `train_n1` likelihood
/// samples and `train_n2` z samples per observation together with n3 inner
/// samples; n1, n2, n3 and lp drive the reporting estimator. lr is unused by
/// the losses because r's moments are closed form.
struct SampleBudget {
  std::size_t n0 = 100000;
  std::size_t n1 = 10000;
  std::size_t n2 = 10000;
  std::size_t n3 = 1000;
  std::size_t lr = 10000;
  std::size_t lp = 1000;
  std::size_t batch_size = 200;
  std::size_t iterations = 3200;
  std::size_t nc = 100000;
  std::size_t train_n1 = 1;
  std::size_t train_n2 = 100;

  void validate() const {
    const std::pair<const char*, std::size_t> fields[] = {
        {"n0", n0}, {"n1", n1}, {"n2", n2}, {"n3", n3}, {"lr", lr}, {"lp", lp},
        {"batch_size", batch_size}, {"nc", nc}, {"train_n1", train_n1}, {"train_n2", train_n2}};
    for (const auto& [name, v] : fields)
      if (v == 0) throw ConfigError(std::string("budget.") + name + " must be positive");
    if (lp < 2) throw ConfigError("budget.lp must be at least 2");
  }

  LossSamples training() const { return {train_n1, train_n2, n3, std::min(lp, n3)}; }
  LossSamples reporting() const { return {n1, n2, n3, lp}; }
};

struct OptimConfig {
  diffnet::AdamConfig adam;
  diffnet::LrSchedule schedule = diffnet::LrSchedule::Constant;
  double final_lr_fraction = 1.0;
  double clip_norm = 1e3;
};

struct TrainConfig {
  Method method = Method::Proposed;
  SampleBudget budget;
  LossWeights weights;
  std::size_t posterior_hidden_layers = 1;
  std::size_t predictive_hidden_layers = 1;
  std::size_t hidden_width = 20;
  std::optional<varfam::Family> predictive_family;  // defaults to the problem's family
  OptimConfig optim;
  bool detach_inner = false;
  double sigma_min = 1e-6;
  std::uint64_t seed = 0;

  NetworkSpec posterior_spec(const problems::Problem& p) const {
    return {p.y_dim, 2 * p.theta_dim, posterior_hidden_layers, hidden_width, diffnet::Activation::ReLU};
  }
  NetworkSpec predictive_spec(const problems::Problem& p) const {
    return {p.y_dim, 2 * p.z_dim, predictive_hidden_layers, hidden_width, diffnet::Activation::ReLU};
  }
};

struct LossRecord {
  std::uint64_t iteration = 0;
  double posterior = 0.0;
  double predictive = 0.0;
  double regularization = 0.0;
  double total = 0.0;
  std::size_t skipped = 0;  // batch members dropped for a non-finite loss or gradient
};

struct TrainState {
  AmortizedHead posterior;
  std::optional<AmortizedHead> predictive;
  diffnet::AdamState adam_posterior;
  diffnet::AdamState adam_predictive;
  std::uint64_t iteration = 0;
  std::vector<LossRecord> history;
};

inline void write_history_csv(std::ostream& os, const std::vector<LossRecord>& history) {
  os << "iteration,posterior_term,predictive_term,reg_term,total\n";
  os.precision(17);
  for (const auto& r : history)
    os << r.iteration << ',' << r.posterior << ',' << r.predictive << ',' << r.regularization << ',' << r.total
       << '\n';
}

/// Loss of one observation recorded on `tape`; leaves are the parameters of
/// the posterior head followed by those of the predictive head.
inline LossParts<Var> record_loss(Tape& tape, const problems::Problem& p, const AmortizedHead& q,
                                  const AmortizedHead* r, std::span<const double> y, const LossWeights& w,
                                  const LossSamples& n, Rng& rng, bool detach_inner, std::vector<Var>& leaves_q,
                                  std::vector<Var>& leaves_r) {
  tape.clear();
  leaves_q = tape.leaves(q.net.values);
  const auto qd = q.record(tape, leaves_q, y);
  if (r == nullptr) {
    leaves_r.clear();
    LossParts<Var> parts;
    parts.posterior = elbo_loss(p, qd, y, n.n1, rng);
    parts.total = parts.posterior;
    return parts;
  }
  leaves_r = tape.leaves(r->net.values);
  const auto rd = r->record(tape, leaves_r, y);
  return joint_loss(p, qd, rd, y, w, n, rng, detach_inner);
}

/// Amortized training: N0 prior-predictive observations, shuffled each epoch
/// into mini-batches (the incomplete tail batch is dropped), one Adam step per
/// head per batch on the batch-mean loss. Observations whose loss or gradient
/// is non-finite are left out of that mean; an iteration with none left counts
/// as non-finite.
inline TrainState train_amortized(const problems::Problem& p, const TrainConfig& cfg, const SampleSet& ys);

inline TrainState train_amortized(const problems::Problem& p, const TrainConfig& cfg) {
  cfg.budget.validate();
  return train_amortized(p, cfg, simulate_observations(p, cfg.budget.n0, cfg.seed));
}

/// Training on given amortization observations; budget.n0 is taken from `ys`.
inline TrainState train_amortized(const problems::Problem& p, const TrainConfig& cfg_in, const SampleSet& ys) {
  TrainConfig cfg = cfg_in;
  cfg.budget.n0 = ys.size();
  cfg.budget.validate();
  if (ys.dim() != p.y_dim) throw ShapeError("train_amortized: observations do not match y_dim");
  const auto& b = cfg.budget;
  const bool proposed = cfg.method == Method::Proposed;

  TrainState st;
  st.posterior = make_head(cfg.posterior_spec(p), varfam::Family::GaussianDiag, ys,
                           derive_seed(cfg.seed, {stream::kInitPosterior}), cfg.sigma_min);
  st.adam_posterior = diffnet::AdamState(st.posterior.net.size(), cfg.optim.adam);
  if (proposed) {
    st.predictive = make_head(cfg.predictive_spec(p), cfg.predictive_family.value_or(p.predictive_family), ys,
                              derive_seed(cfg.seed, {stream::kInitPredictive}), cfg.sigma_min);
    st.adam_predictive = diffnet::AdamState(st.predictive->net.size(), cfg.optim.adam);
  }

  const std::size_t batch = std::min(b.batch_size, b.n0);
  const std::size_t per_epoch = b.n0 / batch;
  const LossSamples samples = b.training();
  std::vector<std::size_t> order(b.n0);
  std::iota(order.begin(), order.end(), 0);

  Tape tape;
  std::vector<Var> leaves_q, leaves_r;
  std::vector<double> grad_q(st.posterior.net.size()), grad_r(proposed ? st.predictive->net.size() : 0);
  int non_finite = 0;
  for (std::uint64_t it = 0; it < b.iterations; ++it) {
    if (it % per_epoch == 0) {
      Rng shuffle_rng(derive_seed(cfg.seed, {stream::kShuffle, it / per_epoch}));
      std::shuffle(order.begin(), order.end(), shuffle_rng);
    }
    std::fill(grad_q.begin(), grad_q.end(), 0.0);
    std::fill(grad_r.begin(), grad_r.end(), 0.0);
    LossRecord rec{it};
    const std::size_t start = (it % per_epoch) * batch;
    std::size_t used = 0;  // observations with a finite loss and gradient
    for (std::size_t k = 0; k < batch; ++k) {
      const auto y = ys[order[start + k]];
      Rng rng(derive_seed(cfg.seed, {stream::kLoss, it, k}));
      const auto parts = record_loss(tape, p, st.posterior, proposed ? &*st.predictive : nullptr, y, cfg.weights,
                                     samples, rng, cfg.detach_inner, leaves_q, leaves_r);
      if (!std::isfinite(parts.total.value())) continue;
      const auto adj = tape.backward(parts.total);
      const auto finite_adj = [&](const std::vector<Var>& leaves) {
        return std::all_of(leaves.begin(), leaves.end(), [&](Var v) { return std::isfinite(adj[v.id]); });
      };
      if (!finite_adj(leaves_q) || !finite_adj(leaves_r)) continue;
      ++used;
      for (std::size_t j = 0; j < leaves_q.size(); ++j) grad_q[j] += adj[leaves_q[j].id];
      for (std::size_t j = 0; j < leaves_r.size(); ++j) grad_r[j] += adj[leaves_r[j].id];
      rec.posterior += parts.posterior.value();
      if (proposed) {
        if (cfg.weights.alpha1 != 0.0) rec.predictive += parts.predictive.value();
        if (cfg.weights.alpha2 != 0.0 || cfg.weights.alpha3 != 0.0) rec.regularization += parts.regularization.value();
      }
      rec.total += parts.total.value();
    }
    if (used == 0) rec.total = std::numeric_limits<double>::quiet_NaN();
    rec.skipped = batch - used;
    const double inv = used ? 1.0 / static_cast<double>(used) : 1.0;
    rec.posterior *= inv;
    rec.predictive *= inv;
    rec.regularization *= inv;
    rec.total *= inv;
    for (auto& g : grad_q) g *= inv;
    for (auto& g : grad_r) g *= inv;
    st.history.push_back(rec);
    st.iteration = it + 1;

    const auto finite = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    if (!std::isfinite(rec.total) || !finite(grad_q) || !finite(grad_r)) {
      if (++non_finite >= 3) {
        std::ostringstream msg;
        msg << "training diverged: 3 consecutive non-finite losses at iteration " << it << "; recent totals:";
        for (std::size_t h = st.history.size() > 10 ? st.history.size() - 10 : 0; h < st.history.size(); ++h)
          msg << ' ' << st.history[h].total;
        throw OptimizerError(msg.str(), it);
      }
      continue;
    }
    non_finite = 0;
    const double lr = diffnet::scheduled_learning_rate(cfg.optim.schedule, cfg.optim.adam.learning_rate,
                                                       cfg.optim.final_lr_fraction, it, b.iterations);
    diffnet::clip_by_norm(grad_q, cfg.optim.clip_norm);
    diffnet::adam_step(st.posterior.net.values, grad_q, st.adam_posterior, lr);
    if (proposed) {
      diffnet::clip_by_norm(grad_r, cfg.optim.clip_norm);
      diffnet::adam_step(st.predictive->net.values, grad_r, st.adam_predictive, lr);
    }
  }
  return st;
}

/// z = H(theta) + eta for every theta in `thetas`.
inline SampleSet propagate_samples(const problems::Problem& p, const SampleSet& thetas, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {stream::kPropagate}));
  SampleSet zs(thetas.size(), p.z_dim);
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    const auto h = p.H(thetas[i]);
    const auto eta = p.pred_noise.sample_noise(rng);
    for (std::size_t j = 0; j < p.z_dim; ++j) zs[i][j] = h[j] + eta[j];
  }
  return zs;
}

/// Conventional second stage: nc draws theta ~ q(. | y) pushed through H.
inline SampleSet propagate_predictive(const problems::Problem& p, const AmortizedHead& q, std::span<const double> y,
                                      std::size_t nc, std::uint64_t seed) {
  if (nc == 0) throw ConfigError("propagate_predictive: nc must be positive");
  const auto qd = q.evaluate(y);
  Rng rng(derive_seed(seed, {stream::kPropagate, 1}));
  SampleSet thetas(nc, p.theta_dim);
  for (std::size_t i = 0; i < nc; ++i) {
    const auto t = varfam::sample(qd, rng);
    std::copy(t.begin(), t.end(), thetas[i].begin());
  }
  return propagate_samples(p, thetas, seed);
}

}  // namespace amvi::train
