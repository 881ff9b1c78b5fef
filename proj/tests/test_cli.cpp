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


#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "amvi/cli/run.hpp"

namespace cli = amvi::cli;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("amvi_cli_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

cli::RunConfig parse(const std::string& text) { return cli::config_from_yaml(YAML::Load(text)); }

std::string config_error(const std::string& text) {
  try {
    parse(text);
  } catch (const amvi::ConfigError& e) {
    return e.what();
  }
  return "";
}

// One desk-scale case1a run shared by several tests.
const cli::RunOutcome& desk_case1a() {
  static const cli::RunOutcome out = [] {
    auto cfg = cli::default_config("case1a", cli::Preset::Desk, 7);
    cfg.output_dir = scratch("desk1a");
    return cli::run(cfg);
  }();
  return out;
}

}  // namespace

TEST(Config, FullPresetDefaults) {
  const auto c = parse("case: case1a\n");
  EXPECT_EQ(c.preset, cli::Preset::Full);
  EXPECT_EQ(c.budget.n0, 100000u);
  EXPECT_EQ(c.budget.n1, 10000u);
  EXPECT_EQ(c.budget.n2, 10000u);
  EXPECT_EQ(c.budget.lr, 10000u);
  EXPECT_EQ(c.budget.n3, 1000u);
  EXPECT_EQ(c.budget.lp, 1000u);
  EXPECT_EQ(c.budget.iterations, 3200u);
  EXPECT_EQ(c.budget.batch_size, 200u);
  EXPECT_EQ(c.budget.nc, 100000u);
  EXPECT_EQ(c.weights.alpha1, 1.0);
  EXPECT_EQ(c.weights.alpha2, 1.0);
  EXPECT_EQ(c.weights.alpha3, 1.0);
  EXPECT_EQ(c.hidden_width, 20u);
  EXPECT_EQ(c.posterior_hidden_layers, 1u);
  EXPECT_EQ(c.predictive_hidden_layers, 1u);
  EXPECT_EQ(c.methods.size(), 3u);
}

TEST(Config, ArchitecturesAndNcPerCase) {
  for (const char* name : {"case1b", "case2", "case4"}) {
    const auto c = cli::default_config(name);
    EXPECT_EQ(c.posterior_hidden_layers, 3u) << name;
    EXPECT_EQ(c.predictive_hidden_layers, 3u) << name;
  }
  EXPECT_EQ(cli::default_config("case3-10").posterior_hidden_layers, 1u);
  EXPECT_EQ(cli::default_config("case2").budget.nc, 100000u);
  EXPECT_EQ(cli::default_config("case3-5").budget.nc, 10000u);
  EXPECT_EQ(cli::default_config("case4").budget.nc, 10000u);
  EXPECT_EQ(cli::default_config("case4").mcmc.n_samples, 10000u);
  EXPECT_EQ(cli::default_config("case1a").mcmc.n_samples, 100000u);
}

TEST(Config, DeskPresetScalesBudgets) {
  const auto c = parse("case: case1a\npreset: desk\n");
  EXPECT_EQ(c.budget.n0, 2000u);
  EXPECT_EQ(c.budget.n1, 200u);
  EXPECT_EQ(c.budget.n3, 20u);
  EXPECT_EQ(c.budget.batch_size, 64u);
  EXPECT_EQ(c.budget.iterations, 1500u);
  EXPECT_EQ(c.budget.nc, 2000u);
  EXPECT_EQ(cli::default_config("case4", cli::Preset::Desk).budget.nc, 200u);
}

TEST(Config, ExplicitFieldsOverridePreset) {
  const auto c = parse(
      "case: case2\npreset: desk\nseed: 9\nmethods: [proposed]\nbudget: {iterations: 10, nc: 77}\n"
      "weights: {alpha2: 0.5}\noptimizer: {learning_rate: 0.002, schedule: constant}\n"
      "training: {detach_inner: true, amortization: grid}\nevaluation: {conventional_density: kde}\n");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.methods, std::vector<std::string>{"proposed"});
  EXPECT_EQ(c.budget.iterations, 10u);
  EXPECT_EQ(c.budget.nc, 77u);
  EXPECT_EQ(c.budget.n0, 2000u);
  EXPECT_EQ(c.weights.alpha2, 0.5);
  EXPECT_EQ(c.optim.adam.learning_rate, 0.002);
  EXPECT_EQ(c.optim.schedule, amvi::diffnet::LrSchedule::Constant);
  EXPECT_TRUE(c.detach_inner);
  EXPECT_EQ(c.amortization, cli::Amortization::Grid);
  EXPECT_EQ(c.eval.conventional_density, amvi::evaluate::ConventionalDensity::Kde);
}

TEST(Config, MissingCaseNamesTheField) {
  EXPECT_NE(config_error("seed: 3\n").find("'case'"), std::string::npos);
  cli::RunConfig c;
  try {
    cli::validate(c);
    FAIL();
  } catch (const amvi::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("'case'"), std::string::npos);
  }
}

TEST(Config, RejectsUnknownAndInvalidFields) {
  EXPECT_NE(config_error("case: case1a\nbudget: {n00: 3}\n").find("'budget.n00'"), std::string::npos);
  EXPECT_NE(config_error("case: case1a\ncolour: red\n").find("'colour'"), std::string::npos);
  EXPECT_NE(config_error("case: case1a\nbudget: {n0: abc}\n").find("'budget.n0'"), std::string::npos);
  EXPECT_NE(config_error("case: case1a\nmethods: [bayes]\n").find("bayes"), std::string::npos);
  EXPECT_FALSE(config_error("case: case1a\nbudget: {batch_size: 0}\n").empty());
  EXPECT_FALSE(config_error("case: case1a\npreset: huge\n").empty());
  EXPECT_NE(config_error("case: case9\n").find("unknown case 'case9'"), std::string::npos);
  EXPECT_FALSE(config_error("case: case3-x\n").empty());
}

TEST(Config, YamlRoundTrip) {
  auto c = cli::default_config("case4", cli::Preset::Desk, 5);
  c.fem.geometry.nx = 8;
  c.fem.geometry.ny = 4;
  c.fem.formulation = amvi::fem::Formulation::Bilinear;
  c.optim.adam.learning_rate = 0.0123456789012345;
  c.eval.reference_cache = "/tmp/cache";
  c.predictive_family = amvi::varfam::Family::LogNormalDiag;
  const auto text = cli::to_yaml(c);
  const auto back = parse(text);
  EXPECT_EQ(cli::to_yaml(back), text);
  EXPECT_EQ(back.fem.geometry.nx, 8u);
  EXPECT_EQ(back.optim.adam.learning_rate, c.optim.adam.learning_rate);
  EXPECT_EQ(back.eval.reference_cache, c.eval.reference_cache);
}

TEST(Config, OutputDirectoryResolution) {
  auto c = cli::default_config("case1b", cli::Preset::Desk, 4);
  EXPECT_EQ(cli::resolve_output_dir(c).filename(), "case1b-desk-s4");
  c.output_dir = "/abs/dir";
  EXPECT_EQ(cli::resolve_output_dir(c), fs::path("/abs/dir"));
}

TEST(Run, DeskCase1aCompletesWithBothMethods) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& out = desk_case1a();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 300.0);
  for (const char* f : {"config.yaml", "manifest.json", "results.csv", "aggregate.json", "ledger.json",
                        "checkpoints/proposed.ckpt", "checkpoints/conventional.ckpt", "loss_history_proposed.csv",
                        "loss_history_conventional.csv", "plotdata/kl_vs_y.csv", "plotdata/moments.csv"})
    EXPECT_TRUE(fs::exists(out.dir / f)) << f;
  const auto csv = slurp(out.dir / "results.csv");
  EXPECT_NE(csv.find(",proposed,kl,"), std::string::npos);
  EXPECT_NE(csv.find(",conventional,kl,"), std::string::npos);
  const auto manifest = json::parse(slurp(out.dir / "manifest.json"));
  EXPECT_EQ(manifest.at("status"), "COMPLETE");
  EXPECT_EQ(manifest.at("code_hash").get<std::string>().size(), 40u);
  EXPECT_TRUE(manifest.contains("config_hash"));
  EXPECT_TRUE(manifest.at("seeds").contains("proposed"));
  const auto agg = json::parse(slurp(out.dir / "aggregate.json"));
  EXPECT_EQ(agg.at("methods").at("proposed").at("n_observations"), 21);
  // A run directory reproduces its configuration.
  EXPECT_EQ(cli::to_yaml(cli::load_run_config(out.dir)), slurp(out.dir / "config.yaml"));
}

TEST(Run, SameSeedGivesByteIdenticalResults) {
  const auto& first = desk_case1a();
  auto cfg = cli::load_run_config(first.dir);
  cfg.output_dir = scratch("desk1a_rerun");
  const auto again = cli::run(cfg);
  EXPECT_EQ(slurp(again.dir / "results.csv"), slurp(first.dir / "results.csv"));
  const auto a = amvi::train::load_checkpoint((again.dir / "checkpoints/proposed.ckpt").string());
  const auto b = amvi::train::load_checkpoint((first.dir / "checkpoints/proposed.ckpt").string());
  EXPECT_EQ(a.posterior.net.values, b.posterior.net.values);
  EXPECT_EQ(a.predictive->net.values, b.predictive->net.values);
}

TEST(Run, EvaluateRunReproducesResults) {
  const auto& out = desk_case1a();
  const auto before = slurp(out.dir / "results.csv");
  cli::evaluate_run(out.dir);
  EXPECT_EQ(slurp(out.dir / "results.csv"), before);
}

TEST(Run, FailureMarksManifestIncomplete) {
  auto cfg = cli::default_config("case1b", cli::Preset::Desk, 1);
  cfg.budget.iterations = 2;
  cfg.output_dir = scratch("incomplete");
  cfg.eval.reference_cache = scratch("empty_cache");
  cfg.eval.allow_reference_compute = false;
  EXPECT_THROW(cli::run(cfg), amvi::CacheMissError);
  const auto manifest = json::parse(slurp(cfg.output_dir / "manifest.json"));
  EXPECT_EQ(manifest.at("status"), "INCOMPLETE");
  EXPECT_NE(manifest.at("error").get<std::string>().find("cache"), std::string::npos);
}

TEST(Predict, Case1aCheckpointGivesAnalyticPredictiveWithoutModelCalls) {
  const auto& out = desk_case1a();
  const std::vector<double> y{1.0};
  const auto pred = cli::predict(out.dir / "checkpoints/proposed.ckpt", y);
  ASSERT_TRUE(pred.predictive);
  EXPECT_NEAR(pred.predictive->mu[0], 6.0 / (4.0 + 1e-4), 5e-3);
  EXPECT_NEAR(pred.predictive_moments.mean[0], 1.499963, 5e-3);
  EXPECT_EQ(pred.evaluations.g, 0u);
  EXPECT_EQ(pred.evaluations.h, 0u);
  std::ostringstream os;
  cli::print_prediction(os, pred);
  EXPECT_NE(os.str().find("online evaluations G 0 H 0"), std::string::npos);
  const std::vector<double> bad{1.0, 2.0};
  EXPECT_THROW(cli::predict(out.dir / "checkpoints/proposed.ckpt", bad), amvi::ShapeError);
}

TEST(Predict, ConventionalCheckpointPropagatesNcSamples) {
  const auto& out = desk_case1a();
  const std::vector<double> y{1.0};
  const auto pred = cli::predict(out.dir / "checkpoints/conventional.ckpt", y, 3);
  EXPECT_FALSE(pred.predictive);
  ASSERT_TRUE(pred.propagated);
  EXPECT_EQ(pred.propagated->size(), 2000u);
  EXPECT_EQ(pred.evaluations.h, 2000u);
  EXPECT_EQ(pred.evaluations.g, 0u);
}

TEST(Predict, Case4GivesPositiveLogNormalPredictive) {
  auto cfg = cli::default_config("case4", cli::Preset::Desk, 2);
  cfg.methods = {"proposed"};
  cfg.budget.n0 = 32;
  cfg.budget.batch_size = 8;
  cfg.budget.iterations = 8;
  cfg.budget.n3 = 4;
  cfg.budget.lp = 4;
  cfg.output_dir = scratch("case4");
  const auto out = cli::run(cfg);
  const std::vector<double> y{-18.6, 24.7};
  const auto pred = cli::predict(out.dir / "checkpoints/proposed.ckpt", y);
  ASSERT_TRUE(pred.predictive);
  EXPECT_EQ(pred.predictive->family, amvi::varfam::Family::LogNormalDiag);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_GT(pred.predictive_moments.mean[i], 0.0);
    EXPECT_GT(pred.predictive_moments.variance[i], 0.0);
  }
  EXPECT_EQ(pred.evaluations.g + pred.evaluations.h, 0u);
}

TEST(Ledger, CountsPerMethod) {
  const auto& out = desk_case1a();
  const auto l = cli::ledger_report(out.dir);
  const auto& prop = l.methods.at("proposed");
  const auto& conv = l.methods.at("conventional");
  const std::size_t steps = 1500 * 64;
  EXPECT_EQ(prop.offline_g, steps);
  EXPECT_EQ(prop.offline_h, steps * 20);
  EXPECT_EQ(conv.offline_g, steps);
  EXPECT_EQ(conv.offline_h, 0u);
  EXPECT_EQ(prop.online_g, 0u);
  EXPECT_EQ(prop.online_h, 0u);
  EXPECT_EQ(conv.online_g, 0u);
  EXPECT_EQ(conv.online_h_per_query(), 2000.0);
  EXPECT_EQ(conv.online_queries, 21u);
  EXPECT_EQ(prop.simulation_g, 2000u);
  std::ostringstream os;
  cli::print_ledger(os, l);
  EXPECT_NE(os.str().find("proposed"), std::string::npos);
}

TEST(Ledger, TrainingCountsFollowTheBudget) {
  // Offline counts are measured, so a reduced budget checks the per-step
  // accounting behind iterations x batch x (1 G, N3 H).
  auto cfg = cli::default_config("case1a", cli::Preset::Full, 1);
  cfg.methods = {"proposed", "conventional"};
  cfg.budget.n0 = 400;
  cfg.budget.iterations = 3;
  cfg.output_dir = scratch("full_counts");
  const auto out = cli::run(cfg);
  EXPECT_EQ(out.ledger.methods.at("proposed").offline_g, 3u * 200u);
  EXPECT_EQ(out.ledger.methods.at("proposed").offline_h, 3u * 200u * 1000u);
  const auto full = cli::default_config("case1a");
  EXPECT_EQ(full.budget.iterations * full.budget.batch_size * full.budget.train_n1, 640000u);
  EXPECT_EQ(full.budget.iterations * full.budget.batch_size * full.budget.n3, 640000000u);
}

TEST(Ledger, FullScaleProposedCounts) {
  if (!std::getenv("AMVI_LONG_TESTS")) GTEST_SKIP() << "set AMVI_LONG_TESTS=1 (about 6 minutes)";
  auto cfg = cli::default_config("case1a", cli::Preset::Full, 1);
  cfg.methods = {"proposed"};
  cfg.output_dir = scratch("full_scale");
  const auto out = cli::run(cfg);
  EXPECT_EQ(out.ledger.methods.at("proposed").offline_g, 640000u);
  EXPECT_EQ(out.ledger.methods.at("proposed").offline_h, 640000000u);
}

TEST(Ledger, ZeroIterationRunHasNoOfflineCost) {
  auto cfg = cli::default_config("case2", cli::Preset::Desk, 1);
  cfg.methods = {"proposed", "conventional"};
  cfg.budget.iterations = 0;
  cfg.output_dir = scratch("zero_iter");
  cli::run(cfg);
  const auto l = cli::ledger_report(cfg.output_dir);
  for (const auto& [m, e] : l.methods) {
    EXPECT_EQ(e.offline_g, 0u) << m;
    EXPECT_EQ(e.offline_h, 0u) << m;
  }
  EXPECT_THROW(cli::ledger_report(scratch("nothing")), amvi::ConfigError);
}

TEST(Executable, VerbsAndExitCodes) {
  const std::string exe = AMVI_CLI_PATH;
  const auto dir = scratch("exe");
  fs::create_directories(dir);
  const auto quiet = " >" + (dir / "out.txt").string() + " 2>&1";
  EXPECT_NE(std::system((exe + " run" + quiet).c_str()), 0);
  EXPECT_NE(std::system((exe + " run --case nope" + quiet).c_str()), 0);
  EXPECT_NE(std::system((exe + " frobnicate" + quiet).c_str()), 0);
  EXPECT_EQ(std::system((exe + " mesh-dump --out " + (dir / "mesh.txt").string() + quiet).c_str()), 0);
  EXPECT_GT(fs::file_size(dir / "mesh.txt"), 0u);

  const auto run_dir = dir / "run";
  const auto cmd = exe + " run --case case1a --preset desk --seed 2 --method proposed --out " + run_dir.string();
  ASSERT_EQ(std::system((cmd + quiet).c_str()), 0);
  EXPECT_EQ(std::system((exe + " ledger " + run_dir.string() + quiet).c_str()), 0);
  EXPECT_NE(slurp(dir / "out.txt").find("proposed"), std::string::npos);
  const auto ck = (run_dir / "checkpoints" / "proposed.ckpt").string();
  EXPECT_EQ(std::system((exe + " predict --checkpoint " + ck + " --y 1.0" + quiet).c_str()), 0);
  EXPECT_NE(slurp(dir / "out.txt").find("online evaluations G 0 H 0"), std::string::npos);
  EXPECT_NE(std::system((exe + " predict --checkpoint " + ck + " --y 1.0,2.0" + quiet).c_str()), 0);
}
