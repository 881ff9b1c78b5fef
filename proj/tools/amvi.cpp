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


// Command-line front end: run, predict, evaluate, ledger, mesh-dump.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "amvi/cli/run.hpp"
#include "amvi/fem/mesh.hpp"

namespace {

std::vector<double> parse_vector(const std::string& s) {
  std::vector<double> v;
  std::string tok;
  std::stringstream ss(s);
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t used = 0;
    const double x = std::stod(tok, &used);
    if (used != tok.size()) throw amvi::ConfigError("cannot parse '" + tok + "' as a number");
    v.push_back(x);
  }
  if (v.empty()) throw amvi::ConfigError("empty observation vector");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace amvi;
  CLI::App app{"amvi: amortized posterior and predictive inference"};
  app.require_subcommand(1);

  std::string case_name, config_path, out_dir, preset = "desk";
  std::vector<std::string> methods;
  std::uint64_t seed = 0;
  bool seed_set = false;
  auto* run = app.add_subcommand("run", "train, evaluate and write a run directory");
  run->add_option("--case", case_name, "case1a, case1b, case2, case3-<d>, case4");
  run->add_option("--method", methods, "proposed, conventional, reference (repeatable)");
  run->add_option("--seed", seed, "master seed")->each([&](const std::string&) { seed_set = true; });
  run->add_option("--preset", preset, "full or desk");
  run->add_option("--config", config_path, "YAML configuration file");
  run->add_option("--out", out_dir, "output directory");

  std::string checkpoint, y_text;
  auto* pred = app.add_subcommand("predict", "online prediction from a checkpoint");
  pred->add_option("--checkpoint", checkpoint)->required();
  pred->add_option("--y", y_text, "comma-separated observation")->required();
  pred->add_option("--seed", seed, "seed for sample propagation");

  std::string run_dir;
  auto* eval = app.add_subcommand("evaluate", "re-evaluate a run directory from its checkpoints");
  eval->add_option("dir", run_dir)->required();

  auto* ledger = app.add_subcommand("ledger", "print the G/H cost ledger of a run");
  ledger->add_option("dir", run_dir)->required();

  std::string mesh_out;
  auto* mesh = app.add_subcommand("mesh-dump", "write the default Cook membrane mesh");
  mesh->add_option("--out", mesh_out, "file (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      cli::RunConfig cfg;
      if (!config_path.empty()) {
        cfg = cli::load_config(config_path);
        if (!case_name.empty()) cfg.case_name = case_name;
      } else {
        if (case_name.empty()) throw ConfigError("config: missing required field 'case'");
        cfg = cli::default_config(case_name, cli::preset_from_string(preset), seed);
      }
      if (seed_set) cfg.seed = seed;
      if (!methods.empty()) cfg.methods = methods;
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      const auto res = cli::run(cfg, &std::cerr);
      std::cout << "run directory " << res.dir.string() << "\n";
      for (const auto& [m, a] : res.result.aggregate)
        std::cout << m << ": kl " << a.kl << " mean_rel_err " << a.mean_rel_err << " var_rel_err " << a.var_rel_err
                  << " (" << a.count << " observations)\n";
    } else if (*pred) {
      const auto y = parse_vector(y_text);
      cli::print_prediction(std::cout, cli::predict(checkpoint, y, seed));
    } else if (*eval) {
      const auto res = cli::evaluate_run(run_dir);
      for (const auto& [m, a] : res.aggregate)
        std::cout << m << ": kl " << a.kl << " mean_rel_err " << a.mean_rel_err << " var_rel_err " << a.var_rel_err
                  << "\n";
    } else if (*ledger) {
      cli::print_ledger(std::cout, cli::ledger_report(run_dir));
    } else if (*mesh) {
      const auto m = fem::make_cook_membrane(fem::CookGeometry{});
      if (mesh_out.empty()) {
        fem::dump_mesh(m, std::cout);
      } else {
        std::ofstream os(mesh_out);
        if (!os) throw Error("cannot write '" + mesh_out + "'");
        fem::dump_mesh(m, os);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return EXIT_FAILURE;
  }
  return EXIT_SUCCESS;
}
