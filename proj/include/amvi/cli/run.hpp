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

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "amvi/cli/config.hpp"
#include "amvi/evaluate.hpp"
#include "amvi/train/checkpoint.hpp"
#include "amvi/train/trainer.hpp"

#ifndef AMVI_CODE_HASH
#define AMVI_CODE_HASH "unknown"
#endif

namespace amvi::cli {

namespace fs = std::filesystem;
using nlohmann::json;

/// G and H evaluation counts per method, split into the offline (training)
/// and online (per-prediction) phases.
struct CostLedger {
  struct Entry {
    std::uint64_t offline_g = 0, offline_h = 0;
    std::uint64_t online_g = 0, online_h = 0;
    std::uint64_t online_queries = 0;  // observations predicted online
    std::uint64_t simulation_g = 0;    // G calls that drew amortization data

    double online_h_per_query() const {
      return online_queries ? static_cast<double>(online_h) / static_cast<double>(online_queries) : 0.0;
    }
  };
  std::map<std::string, Entry> methods;
};

inline json to_json(const CostLedger& l) {
  json j = json::object();
  for (const auto& [m, e] : l.methods)
    j[m] = {{"offline_g", e.offline_g},           {"offline_h", e.offline_h},
            {"online_g", e.online_g},             {"online_h", e.online_h},
            {"online_queries", e.online_queries}, {"simulation_g", e.simulation_g}};
  return j;
}

inline CostLedger ledger_from_json(const json& j) {
  CostLedger l;
  for (const auto& [m, v] : j.items()) {
    auto& e = l.methods[m];
    e.offline_g = v.at("offline_g");
    e.offline_h = v.at("offline_h");
    e.online_g = v.at("online_g");
    e.online_h = v.at("online_h");
    e.online_queries = v.at("online_queries");
    e.simulation_g = v.value("simulation_g", std::uint64_t{0});
  }
  return l;
}

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write '" + path.string() + "'");
  os << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read '" + path.string() + "'");
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

inline std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
    rows.push_back(r);
  }
  return rows;
}

/// Amortization data: prior-predictive draws, or the evaluation grid repeated
/// up to n0 observations.
inline SampleSet amortization_data(const problems::Problem& p, const RunConfig& cfg) {
  const std::uint64_t seed = derive_seed(cfg.seed, {0x4000ULL});
  if (cfg.amortization == Amortization::Prior) return problems::simulate_observations(p, cfg.budget.n0, seed);
  const auto grid = evaluate::evaluation_grid(p, derive_seed(cfg.seed, {0x5000ULL}));
  SampleSet ys(0, p.y_dim);
  for (std::size_t k = 0; k < cfg.budget.n0; ++k) ys.push_back(grid[k % grid.size()]);
  return ys;
}

inline std::string problem_id(const RunConfig& cfg) {
  std::ostringstream os;
  os << cfg.case_name << "-s" << cfg.seed;
  if (cfg.case_name == "case4") {
    const std::string yaml = to_yaml(cfg);
    os << "-fem" << hex(reference::fnv1a(yaml.substr(yaml.find("fem:"))));
  }
  return os.str();
}

}  // namespace detail

struct RunOutcome {
  fs::path dir;
  evaluate::ExperimentResult result;
  CostLedger ledger;
  std::map<std::string, train::TrainState> trained;
};

inline json base_manifest(const RunConfig& cfg) {
  const std::string yaml = to_yaml(cfg);
  json m;
  m["status"] = "RUNNING";
  m["case"] = cfg.case_name;
  m["preset"] = to_string(cfg.preset);
  m["seed"] = cfg.seed;
  m["config_hash"] = detail::hex(reference::fnv1a(yaml));
  m["code_hash"] = AMVI_CODE_HASH;
  m["seeds"] = {{"master", cfg.seed},
                {"proposed", train_config(cfg, train::Method::Proposed).seed},
                {"conventional", train_config(cfg, train::Method::Conventional).seed},
                {"evaluation", eval_config(cfg).seed}};
  m["budget"] = {{"n0", cfg.budget.n0}, {"n1", cfg.budget.n1}, {"n2", cfg.budget.n2}, {"n3", cfg.budget.n3},
                 {"lr", cfg.budget.lr}, {"lp", cfg.budget.lp}, {"batch_size", cfg.budget.batch_size},
                 {"iterations", cfg.budget.iterations}, {"nc", cfg.budget.nc},
                 {"train_n1", cfg.budget.train_n1}, {"train_n2", cfg.budget.train_n2}};
  m["decisions"] = {
      {"conventional_density", cfg.eval.conventional_density == evaluate::ConventionalDensity::Kde
                                   ? "kde of propagated samples"
                                   : "moment-matched full-covariance Gaussian (log-normal for case4)"},
      {"kde_bandwidth", "silverman per dimension"},
      {"mcmc", reference::to_json(cfg.mcmc)},
      {"mcmc_sampler", "random-walk metropolis, adapted scale and shape during burn-in, prior-independence mixture"},
      {"amortization", cfg.amortization == Amortization::Grid ? "evaluation grid" : "prior predictive draws"},
      {"fem", {{"plane", "stress"}, {"element", cfg.fem.formulation == fem::Formulation::Bilinear ? "bilinear q4" : "q4 with incompatible modes"}}}};
  return m;
}

inline void write_manifest(const fs::path& dir, const json& m) { detail::write_text(dir / "manifest.json", m.dump(2) + "\n"); }

/// Trains the requested methods, evaluates them against the reference on the
/// grid and writes every artifact into the run directory. On failure the
/// manifest is marked INCOMPLETE and the error is rethrown.
inline RunOutcome run(const RunConfig& cfg, std::ostream* log = nullptr) {
  validate(cfg);
  RunOutcome out;
  out.dir = resolve_output_dir(cfg);
  fs::create_directories(out.dir / "checkpoints");
  fs::create_directories(out.dir / "plotdata");
  const std::string yaml = to_yaml(cfg);
  detail::write_text(out.dir / "config.yaml", yaml);
  json manifest = base_manifest(cfg);
  write_manifest(out.dir, manifest);
  auto say = [&](const std::string& s) {
    if (log) *log << s << std::endl;
  };
  try {
    const auto t_start = std::chrono::steady_clock::now();
    const problems::Problem p = build_problem(cfg);
    if (p.linear) {
      manifest["case3_matrices"] = {{"A", detail::matrix_json(p.linear->A)}, {"B", detail::matrix_json(p.linear->B)}};
    }
    const auto sim0 = p.counter().snapshot();
    const SampleSet ys = detail::amortization_data(p, cfg);
    const auto sim_g = (p.counter().snapshot() - sim0).g_simulation;

    for (const auto method : {train::Method::Proposed, train::Method::Conventional}) {
      const std::string name = train::to_string(method);
      if (!cfg.wants(name)) continue;
      say("training " + name + " (" + std::to_string(cfg.budget.iterations) + " iterations)");
      const auto t0 = std::chrono::steady_clock::now();
      const auto before = p.counter().snapshot();
      auto st = train::train_amortized(p, train_config(cfg, method), ys);
      const auto used = p.counter().snapshot() - before;
      auto& e = out.ledger.methods[name];
      e.offline_g = used.g;
      e.offline_h = used.h;
      e.simulation_g = sim_g;
      manifest["timing"]["train_" + name] = detail::seconds_since(t0);

      train::Checkpoint ck{cfg.case_name, name, st.posterior, st.predictive,
                           {{"config_yaml", yaml}, {"seed", cfg.seed}, {"iterations", st.iteration}}};
      train::save_checkpoint((out.dir / "checkpoints" / (name + ".ckpt")).string(), ck);
      std::ofstream hist(out.dir / ("loss_history_" + name + ".csv"), std::ios::binary);
      train::write_history_csv(hist, st.history);
      out.trained.emplace(name, std::move(st));
    }

    if (cfg.wants("reference")) {
      say("evaluating on the grid");
      const auto t0 = std::chrono::steady_clock::now();
      evaluate::TrainedMethods tm;
      if (out.trained.count("proposed")) tm.proposed_predictive = out.trained.at("proposed").predictive;
      if (out.trained.count("conventional")) tm.conventional_posterior = out.trained.at("conventional").posterior;
      const auto grid = evaluate::evaluation_grid(p, derive_seed(cfg.seed, {0x5000ULL}));
      out.result = evaluate::run_case_evaluation(p, tm, grid, eval_config(cfg), detail::problem_id(cfg));
      manifest["timing"]["evaluate"] = detail::seconds_since(t0);
      for (const auto& [m, c] : out.result.online) {
        auto& e = out.ledger.methods[m];
        e.online_g = c.g;
        e.online_h = c.h;
        e.online_queries = grid.size();
      }
      auto& r = out.ledger.methods["reference"];
      r.online_g = out.result.reference_cost.g;
      r.online_h = out.result.reference_cost.h;
      r.online_queries = grid.size();

      std::ofstream csv(out.dir / "results.csv", std::ios::binary);
      evaluate::write_results_csv(csv, out.result);
      detail::write_text(out.dir / "aggregate.json", evaluate::aggregate_json(out.result).dump(2) + "\n");
      evaluate::write_plotdata(out.dir / "plotdata", out.result);
      manifest["mcmc_acceptance_warnings"] = out.result.mcmc_warnings;
    }
    if (cfg.ledger) detail::write_text(out.dir / "ledger.json", to_json(out.ledger).dump(2) + "\n");
    manifest["timing"]["total"] = detail::seconds_since(t_start);
    manifest["status"] = "COMPLETE";
    write_manifest(out.dir, manifest);
  } catch (const std::exception& e) {
    manifest["status"] = "INCOMPLETE";
    manifest["error"] = e.what();
    write_manifest(out.dir, manifest);
    throw;
  }
  return out;
}

inline RunConfig load_run_config(const fs::path& dir) { return load_config(dir / "config.yaml"); }

/// Online phase from a checkpoint.
struct Prediction {
  std::string case_name;
  std::string method;
  varfam::DistParams posterior;
  std::optional<varfam::DistParams> predictive;   // proposed checkpoints
  varfam::MomentPair predictive_moments;          // natural space
  std::optional<SampleSet> propagated;            // conventional checkpoints
  evaluate::Counts evaluations;                   // G/H calls spent in the online phase
  double seconds = 0.0;                           // online computation only
};

/// Problem and checkpoint loaded once; predict() is then pure online work.
class Predictor {
 public:
  explicit Predictor(const fs::path& checkpoint)
      : ck_(train::load_checkpoint(checkpoint.string())),
        cfg_(config_from_yaml(YAML::Load(ck_.meta.at("config_yaml").get<std::string>()))),
        problem_(build_problem(cfg_)) {}

  const problems::Problem& problem() const noexcept { return problem_; }
  const train::Checkpoint& checkpoint() const noexcept { return ck_; }
  const RunConfig& config() const noexcept { return cfg_; }

  Prediction predict(std::span<const double> y, std::uint64_t seed = 0) const {
    if (y.size() != ck_.posterior.input_dim())
      throw ShapeError("predict: y has length " + std::to_string(y.size()) + ", checkpoint expects " +
                       std::to_string(ck_.posterior.input_dim()));
    Prediction out;
    out.case_name = ck_.case_name;
    out.method = ck_.method;
    const auto before = problem_.counter().snapshot();
    const auto t0 = std::chrono::steady_clock::now();
    out.posterior = ck_.posterior.evaluate(y);
    if (ck_.predictive) {
      out.predictive = ck_.predictive->evaluate(y);
      out.predictive_moments = varfam::moments(*out.predictive);
    } else {
      out.propagated = train::propagate_predictive(problem_, ck_.posterior, y, cfg_.budget.nc, seed);
      out.predictive_moments = evaluate::sample_moments(*out.propagated);
    }
    out.seconds = detail::seconds_since(t0);
    out.evaluations = problem_.counter().snapshot() - before;
    return out;
  }

 private:
  train::Checkpoint ck_;
  RunConfig cfg_;
  problems::Problem problem_;
};

inline Prediction predict(const fs::path& checkpoint, std::span<const double> y, std::uint64_t seed = 0) {
  return Predictor(checkpoint).predict(y, seed);
}

inline void print_prediction(std::ostream& os, const Prediction& p) {
  os << std::setprecision(10);
  auto vec = [&](const std::vector<double>& v) {
    os << '[';
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
    os << ']';
  };
  os << "case " << p.case_name << " method " << p.method << "\n";
  os << "posterior (" << varfam::to_string(p.posterior.family) << ") mu ";
  vec(p.posterior.mu);
  os << " sigma ";
  vec(p.posterior.sigma);
  os << "\n";
  if (p.predictive) {
    os << "predictive (" << varfam::to_string(p.predictive->family) << ") mu ";
    vec(p.predictive->mu);
    os << " sigma ";
    vec(p.predictive->sigma);
    os << "\n";
  } else {
    os << "predictive from " << p.propagated->size() << " propagated samples\n";
  }
  os << "predictive mean ";
  vec(p.predictive_moments.mean);
  os << " variance ";
  vec(p.predictive_moments.variance);
  os << "\n";
  os << "online evaluations G " << p.evaluations.g << " H " << p.evaluations.h << "\n";
}

/// Re-runs the grid evaluation of an existing run from its checkpoints.
inline evaluate::ExperimentResult evaluate_run(const fs::path& dir) {
  const RunConfig cfg = load_run_config(dir);
  const problems::Problem p = build_problem(cfg);
  evaluate::TrainedMethods tm;
  for (const char* m : {"proposed", "conventional"}) {
    const auto path = dir / "checkpoints" / (std::string(m) + ".ckpt");
    if (!fs::exists(path)) continue;
    auto ck = train::load_checkpoint(path.string());
    if (std::string(m) == "proposed") tm.proposed_predictive = ck.predictive;
    else tm.conventional_posterior = ck.posterior;
  }
  const auto grid = evaluate::evaluation_grid(p, derive_seed(cfg.seed, {0x5000ULL}));
  auto res = evaluate::run_case_evaluation(p, tm, grid, eval_config(cfg), detail::problem_id(cfg));
  std::ofstream csv(dir / "results.csv", std::ios::binary);
  evaluate::write_results_csv(csv, res);
  detail::write_text(dir / "aggregate.json", evaluate::aggregate_json(res).dump(2) + "\n");
  evaluate::write_plotdata(dir / "plotdata", res);
  return res;
}

inline CostLedger ledger_report(const fs::path& dir) {
  const auto path = dir / "ledger.json";
  if (!fs::exists(path)) throw ConfigError("ledger_report: '" + dir.string() + "' has no ledger.json");
  return ledger_from_json(json::parse(detail::read_text(path)));
}

inline void print_ledger(std::ostream& os, const CostLedger& l) {
  os << std::left << std::setw(14) << "method" << std::right << std::setw(14) << "offline G" << std::setw(14)
     << "offline H" << std::setw(12) << "online G" << std::setw(12) << "online H" << std::setw(14) << "H per y"
     << "\n";
  for (const auto& [m, e] : l.methods)
    os << std::left << std::setw(14) << m << std::right << std::setw(14) << e.offline_g << std::setw(14)
       << e.offline_h << std::setw(12) << e.online_g << std::setw(12) << e.online_h << std::setw(14)
       << e.online_h_per_query() << "\n";
}

}  // namespace amvi::cli
