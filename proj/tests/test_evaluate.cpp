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

#include <cmath>
#include <numeric>
#include <sstream>

#include "amvi/evaluate.hpp"

namespace ev = amvi::evaluate;
namespace pr = amvi::problems;
namespace vf = amvi::varfam;
using amvi::Mvn;
using amvi::Rng;
using amvi::SampleSet;

namespace {

// Sum of independent 1D Gaussian KLs; valid for diagonal pairs only.
double kl_diag_oracle(const std::vector<double>& m1, const std::vector<double>& v1, const std::vector<double>& m2,
                      const std::vector<double>& v2) {
  double kl = 0.0;
  for (std::size_t i = 0; i < m1.size(); ++i)
    kl += 0.5 * (v1[i] / v2[i] + (m1[i] - m2[i]) * (m1[i] - m2[i]) / v2[i] - 1.0 + std::log(v2[i] / v1[i]));
  return kl;
}

Mvn diag_mvn(std::vector<double> m, std::vector<double> v) {
  Eigen::VectorXd var = amvi::to_eigen(v);
  return {amvi::to_eigen(m), var.asDiagonal()};
}

SampleSet draw(const Mvn& p, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  SampleSet s(0, p.dim());
  for (std::size_t i = 0; i < n; ++i) s.push_back(p.sample(rng));
  return s;
}

Mvn random_spd(std::size_t d, Rng& rng) {
  Eigen::MatrixXd M(d, d);
  for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = amvi::standard_normal(rng);
  Eigen::VectorXd m(d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m[i] = amvi::standard_normal(rng);
  return {m, M * M.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d)};
}

}  // namespace

TEST(KlClosed, Examples) {
  const auto a = Mvn::isotropic(3, 1.7, 0.4);
  EXPECT_EQ(ev::kl_gaussian_closed(a, a), 0.0);
  EXPECT_NEAR(ev::kl_gaussian_closed(Mvn::isotropic(1, 1.0, 0.0), Mvn::isotropic(1, 1.0, 1.0)), 0.5, 1e-15);
  const double expected = 2.0 * 0.5 * (2.0 - 1.0 - std::log(2.0));
  EXPECT_NEAR(ev::kl_gaussian_closed(Mvn::isotropic(2, 2.0), Mvn::isotropic(2, 1.0)), expected, 1e-14);
  EXPECT_NEAR(expected, 0.306853, 1e-6);
}

TEST(KlClosed, MatchesDiagonalOracleAndDistParams) {
  const std::vector<double> m1{0.3, -1.0}, v1{0.5, 2.0}, m2{1.0, 0.2}, v2{1.5, 0.7};
  const double oracle = kl_diag_oracle(m1, v1, m2, v2);
  EXPECT_NEAR(ev::kl_gaussian_closed(diag_mvn(m1, v1), diag_mvn(m2, v2)), oracle, 1e-13);
  const vf::DistParams p{vf::Family::GaussianDiag, m1, {std::sqrt(v1[0]), std::sqrt(v1[1])}};
  const vf::DistParams q{vf::Family::GaussianDiag, m2, {std::sqrt(v2[0]), std::sqrt(v2[1])}};
  EXPECT_NEAR(ev::kl_gaussian_closed(p, q), oracle, 1e-13);
}

TEST(KlClosed, NonNegativeOnRandomPairsAndRejectsNonSpd) {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    const auto p = random_spd(4, rng), q = random_spd(4, rng);
    EXPECT_GE(ev::kl_gaussian_closed(p, q), 0.0);
    EXPECT_NEAR(ev::kl_gaussian_closed(p, p), 0.0, 1e-12);
  }
  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(Mvn(Eigen::VectorXd::Zero(2), bad), amvi::LinalgError);
}

TEST(KlSample, MomentMatchedApproxAgreesWithClosedForm) {
  const Mvn ref(Eigen::Vector2d(0.5, -0.3), (Eigen::Matrix2d() << 1.0, 0.3, 0.3, 0.6).finished());
  const auto samples = draw(ref, 10000, 5);
  const auto m = samples.mean(), v = samples.variance();
  const vf::DistParams approx{vf::Family::GaussianDiag, m, {std::sqrt(v[0]), std::sqrt(v[1])}};
  const auto est = ev::kl_sample_based(approx, samples, 4000, 9);
  const double closed = ev::kl_gaussian_closed(approx, ev::fit_gaussian(samples));
  EXPECT_NEAR(est.value, closed, std::max(0.05, 3.0 * est.standard_error));
  EXPECT_GT(closed, 0.0);  // the diagonal fit ignores the correlation
}

TEST(KlSample, SelfGeneratedReferenceIsSmall) {
  const vf::DistParams n01{vf::Family::GaussianDiag, {0.0}, {1.0}};
  const auto samples = draw(Mvn::isotropic(1, 1.0), 10000, 2);
  const auto est = ev::kl_sample_based(n01, samples, 4000, 3);
  EXPECT_LE(est.value, 0.05);
  EXPECT_GE(est.value, -3.0 * est.standard_error);
}

TEST(KlSample, GrossMismatchIsLarge) {
  const vf::DistParams far{vf::Family::GaussianDiag, {10.0}, {1.0}};
  const auto samples = draw(Mvn::isotropic(1, 1.0), 1000, 2);
  EXPECT_GT(ev::kl_sample_based(far, samples, 500, 3).value, 10.0);
}

TEST(KlSample, Preconditions) {
  const vf::DistParams n01{vf::Family::GaussianDiag, {0.0, 0.0}, {1.0, 1.0}};
  auto degenerate = draw(Mvn::isotropic(2, 1.0), 600, 1);
  for (std::size_t i = 0; i < degenerate.size(); ++i) degenerate[i][1] = 2.0;
  EXPECT_THROW(ev::kl_sample_based(n01, degenerate, 100, 0), amvi::ConfigError);
  EXPECT_THROW(ev::kl_sample_based(n01, draw(Mvn::isotropic(2, 1.0), 499, 1), 100, 0), amvi::ConfigError);
}

TEST(KlSample, ErrorShrinksWithReferenceSize) {
  // Gaussian pair with a known KL; reference sizes 1e2, 1e3, 1e4.
  const Mvn ref(Eigen::Vector2d(0.0, 0.0), (Eigen::Matrix2d() << 1.0, 0.0, 0.0, 1.0).finished());
  const vf::DistParams approx{vf::Family::GaussianDiag, {0.4, -0.2}, {0.8, 1.2}};
  const double truth = ev::kl_gaussian_closed(approx, ref);
  const std::size_t sizes[] = {100, 1000, 10000};
  double err[3] = {0, 0, 0};
  for (std::uint64_t s = 0; s < 5; ++s)
    for (int k = 0; k < 3; ++k) err[k] += std::abs(ev::kl_kde(approx, draw(ref, sizes[k], 100 + s), 4000, s).value - truth) / 5;
  EXPECT_GT(err[0], err[1]);
  EXPECT_GT(err[1], err[2]);
  EXPECT_LE(err[2], 0.05);
}

TEST(MomentErrors, Examples) {
  const vf::MomentPair a{{1.1, 2.0}, {4.0, 0.5}};
  const auto same = ev::moment_errors(a, a);
  for (double e : same.mean) EXPECT_EQ(e, 0.0);
  for (double e : same.variance) EXPECT_EQ(e, 0.0);
  const auto e = ev::moment_errors(a, {{1.0, 0.0}, {4.0, 1.0}});
  EXPECT_NEAR(e.mean[0], 0.1, 1e-15);
  EXPECT_FALSE(e.mean_absolute[0]);
  EXPECT_TRUE(e.mean_absolute[1]);
  EXPECT_EQ(e.mean[1], 2.0);
  EXPECT_EQ(e.variance[1], 0.5);
  EXPECT_THROW(ev::moment_errors(a, {{1.0}, {1.0}}), amvi::ShapeError);
}

TEST(Fits, LogNormalReproducesSampleMoments) {
  const vf::DistParams ln{vf::Family::LogNormalDiag, {-1.0, 0.5}, {0.3, 0.1}};
  Rng rng(4);
  SampleSet s(0, 2);
  for (int i = 0; i < 5000; ++i) s.push_back(vf::sample(ln, rng));
  const auto fit = ev::fit_lognormal(s);
  const auto m = vf::moments(fit);
  const auto sm = s.mean(), sv = s.variance();
  for (int j = 0; j < 2; ++j) {
    EXPECT_NEAR(m.mean[j], sm[j], 1e-12 * sm[j]);
    EXPECT_NEAR(m.variance[j], sv[j], 1e-10 * sv[j]);
    EXPECT_NEAR(fit.mu[j], ln.mu[j], 0.02);
  }
  SampleSet neg(2, std::vector<double>{-1.0, -2.0});
  EXPECT_THROW(ev::fit_lognormal(neg), amvi::ConfigError);
}

TEST(Grids, ShapesAndIntervals) {
  const auto c1a = pr::make_case("case1a");
  const auto g1 = ev::evaluation_grid(c1a, 0);
  ASSERT_EQ(g1.size(), 21u);
  const double half = 1.959963984540054 * std::sqrt(4.0 + 1e-4);
  EXPECT_NEAR(g1[0][0], -half, 1e-12);
  EXPECT_NEAR(g1[20][0], half, 1e-12);
  EXPECT_NEAR(g1[10][0], 0.0, 1e-12);
  const auto c2 = pr::make_case("case2");
  const auto g2 = ev::evaluation_grid(c2, 0);
  EXPECT_EQ(g2.size(), 121u);
  EXPECT_EQ(g2.dim(), 2u);
  const auto iv = ev::central_intervals(c2, 0);
  {
    // Independent quantile oracle from fresh prior draws.
    Rng rng(77);
    std::vector<double> y1, y2;
    for (int k = 0; k < 200000; ++k) {
      const double a = amvi::standard_normal(rng), b = amvi::standard_normal(rng);
      y1.push_back(2 * a * a + b + 2 + std::sqrt(0.1) * amvi::standard_normal(rng));
      y2.push_back(b + std::pow(b, 4) + a + 1 + std::sqrt(0.1) * amvi::standard_normal(rng));
    }
    std::sort(y1.begin(), y1.end());
    std::sort(y2.begin(), y2.end());
    EXPECT_NEAR(iv[0][0], y1[5000], 0.05);
    EXPECT_NEAR(iv[0][1], y1[195000], 0.3);
    EXPECT_NEAR(iv[1][0], y2[5000], 0.05);
    EXPECT_NEAR(iv[1][1], y2[195000], 1.0);
  }
  EXPECT_EQ(g2[0][0], iv[0][0]);
  EXPECT_EQ(g2[120][1], iv[1][1]);
  const auto g3 = ev::evaluation_grid(pr::make_case("case3-5", 1), 0);
  EXPECT_EQ(g3.size(), 50u);
  EXPECT_EQ(g3.dim(), 5u);
}

TEST(Aggregate, IsArithmeticMeanOfRecords) {
  ev::ExperimentResult res;
  for (int k = 0; k < 4; ++k) {
    ev::Record r;
    r.method = k % 2 ? "conventional" : "proposed";
    r.kl = 0.1 * (k + 1);
    r.errors.mean = {0.01 * k, 0.03};
    r.errors.variance = {0.2, 0.4 * k};
    res.records.push_back(r);
  }
  ev::aggregate(res);
  EXPECT_EQ(res.aggregate["proposed"].kl, (0.1 + 0.3) / 2);
  EXPECT_EQ(res.aggregate["conventional"].kl, (0.2 + 0.4) / 2);
  EXPECT_EQ(res.aggregate["proposed"].mean_rel_err, ((0.0 + 0.03) / 2 + (0.02 + 0.03) / 2) / 2);
  EXPECT_EQ(res.aggregate["conventional"].var_rel_err, ((0.2 + 0.4) / 2 + (0.2 + 1.2) / 2) / 2);
}

namespace {

amvi::train::TrainConfig small_config(amvi::train::Method m) {
  amvi::train::TrainConfig c;
  c.method = m;
  c.budget.n0 = 400;
  c.budget.batch_size = 32;
  c.budget.iterations = 150;
  c.budget.n3 = 20;
  c.budget.lp = 20;
  c.optim.adam.learning_rate = 1e-2;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(RunCaseEvaluation, Case1aRecordsAndInvariants) {
  const auto p = pr::make_case("case1a");
  const auto prop = amvi::train::train_amortized(p, small_config(amvi::train::Method::Proposed));
  const auto conv = amvi::train::train_amortized(p, small_config(amvi::train::Method::Conventional));
  ev::TrainedMethods m{prop.predictive, conv.posterior};
  ev::EvalConfig cfg;
  cfg.nc = 2000;
  const auto grid = ev::evaluation_grid(p, 0);
  const auto before = p.counter().snapshot();
  const auto res = ev::run_case_evaluation(p, m, grid, cfg, "case1a");
  const auto used = p.counter().snapshot() - before;
  EXPECT_EQ(used.h, 21u * 2000u);
  EXPECT_EQ(used.g, 0u);
  ASSERT_EQ(res.records.size(), 42u);
  for (const auto& r : res.records) {
    EXPECT_EQ(r.kl_kind, "closed");
    EXPECT_GE(r.kl, 0.0);
    for (double e : r.errors.mean) EXPECT_GE(e, 0.0);
    for (double e : r.errors.variance) EXPECT_GE(e, 0.0);
  }
  std::ostringstream a, b;
  ev::write_results_csv(a, res);
  ev::write_results_csv(b, ev::run_case_evaluation(p, m, grid, cfg, "case1a"));
  const std::string csv = a.str();
  EXPECT_EQ(csv, b.str());
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 42 * 4);
  const auto j = ev::aggregate_json(res);
  EXPECT_EQ(j["methods"]["proposed"]["n_observations"], 21);

  cfg.conventional_density = ev::ConventionalDensity::Kde;
  cfg.kl_mc = 200;
  ev::TrainedMethods conv_only{std::nullopt, conv.posterior};
  const auto kde = ev::run_case_evaluation(p, conv_only, grid, cfg, "case1a");
  ASSERT_EQ(kde.records.size(), 21u);
  for (const auto& r : kde.records) {
    EXPECT_EQ(r.kl_kind, "kde");
    EXPECT_GE(r.kl, -3.0 * r.kl_se);
  }
}
