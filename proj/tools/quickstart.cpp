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


// Library usage without the CLI: train the proposed method on Case 1a at
// desk budgets and compare its predictive head with the analytic predictive.

#include <cstdio>

#include "amvi/evaluate.hpp"
#include "amvi/reference.hpp"
#include "amvi/train/trainer.hpp"

int main() {
  namespace tr = amvi::train;
  const auto problem = amvi::problems::make_case("case1a");

  tr::TrainConfig cfg;
  cfg.method = tr::Method::Proposed;
  cfg.budget.n0 = 2000;
  cfg.budget.n3 = 20;
  cfg.budget.lp = 20;
  cfg.budget.batch_size = 64;
  cfg.budget.iterations = 1500;
  cfg.optim.adam.learning_rate = 1e-2;
  cfg.optim.adam.beta2 = 0.99;
  cfg.optim.schedule = amvi::diffnet::LrSchedule::Cosine;
  cfg.optim.final_lr_fraction = 0.01;
  cfg.seed = 1;
  const auto state = tr::train_amortized(problem, cfg);

  const auto ref = amvi::reference::analytic_reference(problem);
  for (double y : {-2.0, 0.5, 1.0, 3.0}) {
    const std::vector<double> yv{y};
    const auto r = state.predictive->evaluate(yv);
    const double kl = amvi::evaluate::kl_gaussian_closed(r, ref.predictive(yv));
    std::printf("y=%5.2f  predictive mean %.5f (exact %.5f)  KL %.2e\n", y, r.mu[0], ref.predictive_mean(yv)[0], kl);
  }
}
