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

#include <yaml-cpp/yaml.h>

#include <array>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "amvi/core/error.hpp"
#include "amvi/evaluate.hpp"
#include "amvi/fem/mesh.hpp"
#include "amvi/fem/model.hpp"
#include "amvi/problems.hpp"
#include "amvi/reference.hpp"
#include "amvi/train/trainer.hpp"

namespace amvi::cli {

enum class Preset { Full, Desk };

inline std::string to_string(Preset p) { return p == Preset::Full ? "full" : "desk"; }

inline Preset preset_from_string(const std::string& s) {
  if (s == "full") return Preset::Full;
  if (s == "desk") return Preset::Desk;
  throw ConfigError("unknown preset '" + s + "' (expected full or desk)");
}

/// Source of the amortization observations.
enum class Amortization { Prior, Grid };

struct FemConfig {
  fem::CookGeometry geometry;
  fem::Formulation formulation = fem::Formulation::Incompatible;
  fem::GradientMode gradient = fem::GradientMode::Direct;
  double fd_step = 1e-6;
};

struct EvalSettings {
  std::size_t kl_mc = 2000;
  evaluate::ConventionalDensity conventional_density = evaluate::ConventionalDensity::MomentMatched;
  std::optional<std::filesystem::path> reference_cache;
  bool allow_reference_compute = true;
};

/// Everything a run needs. Defaults are the full-scale settings; see
/// apply_preset for the desk scaling.
struct RunConfig {
  std::string case_name;
  Preset preset = Preset::Full;
  std::vector<std::string> methods{"proposed", "conventional", "reference"};
  train::SampleBudget budget;
  train::LossWeights weights;
  std::size_t posterior_hidden_layers = 1;
  std::size_t predictive_hidden_layers = 1;
  std::size_t hidden_width = 20;
  std::optional<varfam::Family> predictive_family;
  train::OptimConfig optim;
  bool detach_inner = false;
  double sigma_min = 1e-6;
  Amortization amortization = Amortization::Prior;
  reference::McmcConfig mcmc;
  EvalSettings eval;
  FemConfig fem;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  bool ledger = true;

  bool wants(const std::string& method) const {
    return std::find(methods.begin(), methods.end(), method) != methods.end();
  }
};

/// Hidden layers per case: one for Cases 1a and 3, three otherwise.
inline std::size_t default_hidden_layers(const std::string& case_name) {
  return case_name == "case1a" || problems::case3_dimension(case_name) ? 1 : 3;
}

inline bool is_expensive_case(const std::string& case_name) {
  return case_name == "case4" || problems::case3_dimension(case_name).has_value();
}

/// Resets every preset-controlled field for `cfg.case_name`.
inline void apply_preset(RunConfig& cfg, Preset preset) {
  cfg.preset = preset;
  cfg.budget = {};
  cfg.mcmc = {};
  cfg.optim = {};
  cfg.posterior_hidden_layers = cfg.predictive_hidden_layers = default_hidden_layers(cfg.case_name);
  cfg.hidden_width = 20;
  cfg.budget.nc = is_expensive_case(cfg.case_name) ? 10000 : 100000;
  cfg.mcmc.n_samples = cfg.case_name == "case4" ? 10000 : 100000;
  if (preset == Preset::Full) return;
  auto scale = [](std::size_t v) { return std::max<std::size_t>(1, v / 50); };
  auto& b = cfg.budget;
  b.n0 = scale(b.n0);
  b.n1 = scale(b.n1);
  b.n2 = scale(b.n2);
  b.n3 = scale(b.n3);
  b.lr = scale(b.lr);
  b.lp = scale(b.lp);
  b.nc = scale(b.nc);
  b.batch_size = 64;
  b.iterations = 1500;
  cfg.mcmc.n_samples = std::max<std::size_t>(500, scale(cfg.mcmc.n_samples));
  cfg.optim.adam.learning_rate = 1e-2;
  cfg.optim.adam.beta2 = 0.99;
  cfg.optim.schedule = diffnet::LrSchedule::Cosine;
  cfg.optim.final_lr_fraction = 0.01;
}

inline RunConfig default_config(const std::string& case_name, Preset preset = Preset::Full, std::uint64_t seed = 0) {
  RunConfig cfg;
  cfg.case_name = case_name;
  cfg.seed = seed;
  apply_preset(cfg, preset);
  return cfg;
}

/// Output directory with AMVI_OUTPUT_ROOT prepended to relative paths.
inline std::filesystem::path resolve_output_dir(const RunConfig& cfg) {
  std::filesystem::path dir = cfg.output_dir.empty()
                                  ? std::filesystem::path("runs") / (cfg.case_name + "-" + to_string(cfg.preset) + "-s" +
                                                                     std::to_string(cfg.seed))
                                  : cfg.output_dir;
  if (dir.is_relative())
    if (const char* root = std::getenv("AMVI_OUTPUT_ROOT"); root && *root) dir = std::filesystem::path(root) / dir;
  return dir;
}

inline void validate(const RunConfig& cfg) {
  if (cfg.case_name.empty()) throw ConfigError("config: missing required field 'case'");
  if (cfg.case_name != "case1a" && cfg.case_name != "case1b" && cfg.case_name != "case2" && cfg.case_name != "case4" &&
      !problems::case3_dimension(cfg.case_name))
    throw ConfigError("config: unknown case '" + cfg.case_name + "'");
  cfg.budget.validate();
  cfg.mcmc.validate();
  if (cfg.methods.empty()) throw ConfigError("config: 'methods' must list at least one method");
  for (const auto& m : cfg.methods)
    if (m != "proposed" && m != "conventional" && m != "reference")
      throw ConfigError("config: unknown method '" + m + "'");
  if (cfg.hidden_width == 0) throw ConfigError("config: network.hidden_width must be positive");
  if (cfg.eval.kl_mc < 2) throw ConfigError("config: evaluation.kl_mc must be at least 2");
  if (!(cfg.sigma_min > 0.0)) throw ConfigError("config: training.sigma_min must be positive");
}

// YAML reading and writing.

namespace detail {

template <class T>
void read(const YAML::Node& node, const char* key, T& out, const std::string& where) {
  if (const auto v = node[key]) {
    try {
      out = v.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError("config: field '" + where + key + "' has the wrong type");
    }
  }
}

inline void check_keys(const YAML::Node& node, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!node.IsMap()) throw ConfigError("config: section '" + where + "' must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError("config: unknown field '" + where + key + "'");
  }
}

}  // namespace detail

/// Parses a YAML run configuration. `preset` is applied first, then every
/// explicit field overrides it.
inline RunConfig config_from_yaml(const YAML::Node& root) {
  using detail::check_keys;
  using detail::read;
  if (!root || !root.IsMap()) throw ConfigError("config: top level must be a mapping");
  check_keys(root,
             {"case", "preset", "seed", "methods", "output_dir", "ledger", "budget", "weights", "network",
              "predictive_family", "optimizer", "training", "mcmc", "evaluation", "fem"},
             "");
  if (!root["case"]) throw ConfigError("config: missing required field 'case'");
  RunConfig cfg;
  cfg.case_name = root["case"].as<std::string>();
  std::string preset = "full";
  read(root, "preset", preset, "");
  apply_preset(cfg, preset_from_string(preset));
  read(root, "seed", cfg.seed, "");
  read(root, "methods", cfg.methods, "");
  std::string out;
  read(root, "output_dir", out, "");
  if (!out.empty()) cfg.output_dir = out;
  read(root, "ledger", cfg.ledger, "");

  if (const auto b = root["budget"]) {
    check_keys(b, {"n0", "n1", "n2", "n3", "lr", "lp", "batch_size", "iterations", "nc", "train_n1", "train_n2"},
               "budget.");
    auto& x = cfg.budget;
    for (auto [k, v] : {std::pair{"n0", &x.n0}, {"n1", &x.n1}, {"n2", &x.n2}, {"n3", &x.n3}, {"lr", &x.lr},
                        {"lp", &x.lp}, {"batch_size", &x.batch_size}, {"iterations", &x.iterations}, {"nc", &x.nc},
                        {"train_n1", &x.train_n1}, {"train_n2", &x.train_n2}})
      read(b, k, *v, "budget.");
  }
  if (const auto w = root["weights"]) {
    check_keys(w, {"alpha1", "alpha2", "alpha3"}, "weights.");
    read(w, "alpha1", cfg.weights.alpha1, "weights.");
    read(w, "alpha2", cfg.weights.alpha2, "weights.");
    read(w, "alpha3", cfg.weights.alpha3, "weights.");
  }
  if (const auto n = root["network"]) {
    check_keys(n, {"posterior_hidden_layers", "predictive_hidden_layers", "hidden_width"}, "network.");
    read(n, "posterior_hidden_layers", cfg.posterior_hidden_layers, "network.");
    read(n, "predictive_hidden_layers", cfg.predictive_hidden_layers, "network.");
    read(n, "hidden_width", cfg.hidden_width, "network.");
  }
  if (const auto f = root["predictive_family"]) cfg.predictive_family = varfam::family_from_string(f.as<std::string>());
  if (const auto o = root["optimizer"]) {
    check_keys(o, {"learning_rate", "beta1", "beta2", "epsilon", "schedule", "final_lr_fraction", "clip_norm"},
               "optimizer.");
    read(o, "learning_rate", cfg.optim.adam.learning_rate, "optimizer.");
    read(o, "beta1", cfg.optim.adam.beta1, "optimizer.");
    read(o, "beta2", cfg.optim.adam.beta2, "optimizer.");
    read(o, "epsilon", cfg.optim.adam.epsilon, "optimizer.");
    std::string sched;
    read(o, "schedule", sched, "optimizer.");
    if (sched == "constant") cfg.optim.schedule = diffnet::LrSchedule::Constant;
    else if (sched == "cosine") cfg.optim.schedule = diffnet::LrSchedule::Cosine;
    else if (!sched.empty()) throw ConfigError("config: optimizer.schedule must be constant or cosine");
    read(o, "final_lr_fraction", cfg.optim.final_lr_fraction, "optimizer.");
    read(o, "clip_norm", cfg.optim.clip_norm, "optimizer.");
  }
  if (const auto t = root["training"]) {
    check_keys(t, {"detach_inner", "sigma_min", "amortization"}, "training.");
    read(t, "detach_inner", cfg.detach_inner, "training.");
    read(t, "sigma_min", cfg.sigma_min, "training.");
    std::string a;
    read(t, "amortization", a, "training.");
    if (a == "prior") cfg.amortization = Amortization::Prior;
    else if (a == "grid") cfg.amortization = Amortization::Grid;
    else if (!a.empty()) throw ConfigError("config: training.amortization must be prior or grid");
  }
  if (const auto m = root["mcmc"]) {
    check_keys(m, {"n_samples", "burn_in_fraction", "thinning", "initial_step", "adapt_window", "target_acceptance",
                   "adapt_covariance", "independence_probability", "init_candidates"},
               "mcmc.");
    auto& c = cfg.mcmc;
    read(m, "n_samples", c.n_samples, "mcmc.");
    read(m, "burn_in_fraction", c.burn_in_fraction, "mcmc.");
    read(m, "thinning", c.thinning, "mcmc.");
    read(m, "initial_step", c.initial_step, "mcmc.");
    read(m, "adapt_window", c.adapt_window, "mcmc.");
    read(m, "target_acceptance", c.target_acceptance, "mcmc.");
    read(m, "adapt_covariance", c.adapt_covariance, "mcmc.");
    read(m, "independence_probability", c.independence_probability, "mcmc.");
    read(m, "init_candidates", c.init_candidates, "mcmc.");
  }
  if (const auto e = root["evaluation"]) {
    check_keys(e, {"kl_mc", "conventional_density", "reference_cache", "allow_reference_compute"}, "evaluation.");
    read(e, "kl_mc", cfg.eval.kl_mc, "evaluation.");
    std::string d;
    read(e, "conventional_density", d, "evaluation.");
    if (d == "moment_matched") cfg.eval.conventional_density = evaluate::ConventionalDensity::MomentMatched;
    else if (d == "kde") cfg.eval.conventional_density = evaluate::ConventionalDensity::Kde;
    else if (!d.empty()) throw ConfigError("config: evaluation.conventional_density must be moment_matched or kde");
    std::string cache;
    read(e, "reference_cache", cache, "evaluation.");
    if (!cache.empty()) cfg.eval.reference_cache = cache;
    read(e, "allow_reference_compute", cfg.eval.allow_reference_compute, "evaluation.");
  }
  if (const auto f = root["fem"]) {
    check_keys(f, {"corners", "nx", "ny", "load", "stress_element", "stress_points", "formulation", "gradient", "fd_step"},
               "fem.");
    auto& g = cfg.fem.geometry;
    if (const auto c = f["corners"]) {
      const auto v = c.as<std::vector<std::array<double, 2>>>();
      if (v.size() != 4) throw ConfigError("config: fem.corners must list four points");
      for (int k = 0; k < 4; ++k) g.corners[k] = {v[k][0], v[k][1]};
    }
    read(f, "nx", g.nx, "fem.");
    read(f, "ny", g.ny, "fem.");
    read(f, "load", g.load_resultant, "fem.");
    read(f, "stress_element", g.stress_element, "fem.");
    read(f, "stress_points", g.stress_points, "fem.");
    std::string s;
    read(f, "formulation", s, "fem.");
    if (!s.empty()) cfg.fem.formulation = fem::formulation_from_string(s);
    s.clear();
    read(f, "gradient", s, "fem.");
    if (!s.empty()) cfg.fem.gradient = fem::gradient_mode_from_string(s);
    read(f, "fd_step", cfg.fem.fd_step, "fem.");
  }
  validate(cfg);
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::Exception& e) {
    throw ConfigError("config: cannot parse '" + path.string() + "': " + e.what());
  }
  return config_from_yaml(root);
}

/// Fully resolved configuration as YAML; config_from_yaml(to_yaml(c)) == c.
inline std::string to_yaml(const RunConfig& c) {
  YAML::Emitter y;
  y.SetDoublePrecision(17);
  y << YAML::BeginMap;
  y << YAML::Key << "case" << YAML::Value << c.case_name;
  y << YAML::Key << "preset" << YAML::Value << to_string(c.preset);
  y << YAML::Key << "seed" << YAML::Value << c.seed;
  y << YAML::Key << "methods" << YAML::Value << YAML::Flow << c.methods;
  if (!c.output_dir.empty()) y << YAML::Key << "output_dir" << YAML::Value << c.output_dir.string();
  y << YAML::Key << "ledger" << YAML::Value << c.ledger;
  const auto& b = c.budget;
  y << YAML::Key << "budget" << YAML::Value << YAML::BeginMap << YAML::Key << "n0" << YAML::Value << b.n0
    << YAML::Key << "n1" << YAML::Value << b.n1 << YAML::Key << "n2" << YAML::Value << b.n2 << YAML::Key << "n3"
    << YAML::Value << b.n3 << YAML::Key << "lr" << YAML::Value << b.lr << YAML::Key << "lp" << YAML::Value << b.lp
    << YAML::Key << "batch_size" << YAML::Value << b.batch_size << YAML::Key << "iterations" << YAML::Value
    << b.iterations << YAML::Key << "nc" << YAML::Value << b.nc << YAML::Key << "train_n1" << YAML::Value
    << b.train_n1 << YAML::Key << "train_n2" << YAML::Value << b.train_n2 << YAML::EndMap;
  y << YAML::Key << "weights" << YAML::Value << YAML::BeginMap << YAML::Key << "alpha1" << YAML::Value
    << c.weights.alpha1 << YAML::Key << "alpha2" << YAML::Value << c.weights.alpha2 << YAML::Key << "alpha3"
    << YAML::Value << c.weights.alpha3 << YAML::EndMap;
  y << YAML::Key << "network" << YAML::Value << YAML::BeginMap << YAML::Key << "posterior_hidden_layers"
    << YAML::Value << c.posterior_hidden_layers << YAML::Key << "predictive_hidden_layers" << YAML::Value
    << c.predictive_hidden_layers << YAML::Key << "hidden_width" << YAML::Value << c.hidden_width << YAML::EndMap;
  if (c.predictive_family)
    y << YAML::Key << "predictive_family" << YAML::Value << varfam::to_string(*c.predictive_family);
  const auto& o = c.optim;
  y << YAML::Key << "optimizer" << YAML::Value << YAML::BeginMap << YAML::Key << "learning_rate" << YAML::Value
    << o.adam.learning_rate << YAML::Key << "beta1" << YAML::Value << o.adam.beta1 << YAML::Key << "beta2"
    << YAML::Value << o.adam.beta2 << YAML::Key << "epsilon" << YAML::Value << o.adam.epsilon << YAML::Key
    << "schedule" << YAML::Value << (o.schedule == diffnet::LrSchedule::Cosine ? "cosine" : "constant")
    << YAML::Key << "final_lr_fraction" << YAML::Value << o.final_lr_fraction << YAML::Key << "clip_norm"
    << YAML::Value << o.clip_norm << YAML::EndMap;
  y << YAML::Key << "training" << YAML::Value << YAML::BeginMap << YAML::Key << "detach_inner" << YAML::Value
    << c.detach_inner << YAML::Key << "sigma_min" << YAML::Value << c.sigma_min << YAML::Key << "amortization"
    << YAML::Value << (c.amortization == Amortization::Grid ? "grid" : "prior") << YAML::EndMap;
  const auto& m = c.mcmc;
  y << YAML::Key << "mcmc" << YAML::Value << YAML::BeginMap << YAML::Key << "n_samples" << YAML::Value
    << m.n_samples << YAML::Key << "burn_in_fraction" << YAML::Value << m.burn_in_fraction << YAML::Key
    << "thinning" << YAML::Value << m.thinning << YAML::Key << "initial_step" << YAML::Value << m.initial_step
    << YAML::Key << "adapt_window" << YAML::Value << m.adapt_window << YAML::Key << "target_acceptance"
    << YAML::Value << m.target_acceptance << YAML::Key << "adapt_covariance" << YAML::Value << m.adapt_covariance
    << YAML::Key << "independence_probability" << YAML::Value << m.independence_probability << YAML::Key
    << "init_candidates" << YAML::Value << m.init_candidates << YAML::EndMap;
  y << YAML::Key << "evaluation" << YAML::Value << YAML::BeginMap << YAML::Key << "kl_mc" << YAML::Value
    << c.eval.kl_mc << YAML::Key << "conventional_density" << YAML::Value
    << (c.eval.conventional_density == evaluate::ConventionalDensity::Kde ? "kde" : "moment_matched");
  if (c.eval.reference_cache) y << YAML::Key << "reference_cache" << YAML::Value << c.eval.reference_cache->string();
  y << YAML::Key << "allow_reference_compute" << YAML::Value << c.eval.allow_reference_compute << YAML::EndMap;
  const auto& g = c.fem.geometry;
  y << YAML::Key << "fem" << YAML::Value << YAML::BeginMap << YAML::Key << "corners" << YAML::Value << YAML::Flow
    << YAML::BeginSeq;
  for (const auto& pt : g.corners) y << YAML::Flow << std::vector<double>{pt[0], pt[1]};
  y << YAML::EndSeq << YAML::Key << "nx" << YAML::Value << g.nx << YAML::Key << "ny" << YAML::Value << g.ny
    << YAML::Key << "load" << YAML::Value << g.load_resultant << YAML::Key << "stress_element" << YAML::Value
    << g.stress_element << YAML::Key << "stress_points" << YAML::Value << YAML::Flow
    << std::vector<int>{g.stress_points[0], g.stress_points[1]} << YAML::Key << "formulation" << YAML::Value
    << (c.fem.formulation == fem::Formulation::Bilinear ? "bilinear" : "incompatible") << YAML::Key << "gradient"
    << YAML::Value << fem::to_string(c.fem.gradient) << YAML::Key << "fd_step" << YAML::Value << c.fem.fd_step
    << YAML::EndMap;
  y << YAML::EndMap;
  return std::string(y.c_str()) + "\n";
}

// Construction of the task and of the module configurations.

inline problems::Problem build_problem(const RunConfig& cfg) {
  if (cfg.case_name == "case4") {
    auto model = std::make_shared<fem::FemModel>(fem::make_cook_membrane(cfg.fem.geometry), cfg.fem.formulation,
                                                 cfg.fem.gradient, cfg.fem.fd_step);
    return problems::make_fem_problem(model);
  }
  return problems::make_case(cfg.case_name, cfg.seed);
}

inline train::TrainConfig train_config(const RunConfig& cfg, train::Method method) {
  train::TrainConfig t;
  t.method = method;
  t.budget = cfg.budget;
  t.weights = cfg.weights;
  t.posterior_hidden_layers = cfg.posterior_hidden_layers;
  t.predictive_hidden_layers = cfg.predictive_hidden_layers;
  t.hidden_width = cfg.hidden_width;
  t.predictive_family = cfg.predictive_family;
  t.optim = cfg.optim;
  t.detach_inner = cfg.detach_inner;
  t.sigma_min = cfg.sigma_min;
  t.seed = derive_seed(cfg.seed, {method == train::Method::Proposed ? 0x1000ULL : 0x2000ULL});
  return t;
}

inline evaluate::EvalConfig eval_config(const RunConfig& cfg) {
  evaluate::EvalConfig e;
  e.nc = cfg.budget.nc;
  e.kl_mc = cfg.eval.kl_mc;
  e.mcmc = cfg.mcmc;
  e.conventional_density = cfg.eval.conventional_density;
  e.cache_dir = cfg.eval.reference_cache;
  e.allow_reference_compute = cfg.eval.allow_reference_compute;
  e.seed = derive_seed(cfg.seed, {0x3000ULL});
  return e;
}

}  // namespace amvi::cli
