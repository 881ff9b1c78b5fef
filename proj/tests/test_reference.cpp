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

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "amvi/reference.hpp"

namespace pr = amvi::problems;
namespace rf = amvi::reference;
using amvi::Mvn;
using amvi::SampleSet;

namespace {

// Standard error of a chain average by non-overlapping batch means.
double batch_means_se(const std::vector<double>& x, std::size_t batches = 50) {
  const std::size_t len = x.size() / batches;
  std::vector<double> m(batches, 0.0);
  for (std::size_t b = 0; b < batches; ++b) {
    for (std::size_t i = 0; i < len; ++i) m[b] += x[b * len + i];
    m[b] /= static_cast<double>(len);
  }
  double mean = 0.0, var = 0.0;
  for (double v : m) mean += v / batches;
  for (double v : m) var += (v - mean) * (v - mean) / (batches - 1);
  return std::sqrt(var / batches);
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

// Posterior and predictive moments of Case 1a by adaptive quadrature over a
// window around the least-squares estimate y/2.
struct QuadMoments {
  double post_mean, post_var, pred_mean, pred_var;
};

QuadMoments case1a_quadrature(const pr::Problem& p, double y) {
  using boost::math::quadrature::gauss_kronrod;
  const double center = y / 2.0, half = 0.2;
  const double ref_lp = pr::log_likelihood<double>(p, std::vector<double>{center}, std::vector<double>{y}) +
                        p.prior.log_density(std::vector<double>{center});
  auto density = [&](double t) {
    const std::vector<double> th{t};
    return std::exp(pr::log_likelihood<double>(p, th, std::vector<double>{y}) + p.prior.log_density(th) - ref_lp);
  };
  auto integrate = [&](auto f) {
    return gauss_kronrod<double, 61>::integrate(f, center - half, center + half, 12, 1e-11);
  };
  const double z = integrate(density);
  const double m1 = integrate([&](double t) { return t * density(t); }) / z;
  const double m2 = integrate([&](double t) { return (t - m1) * (t - m1) * density(t); }) / z;
  const double s2 = p.pred_noise.cov()(0, 0);
  const double h1 = integrate([&](double t) { return p.H(std::vector<double>{t})[0] * density(t); }) / z;
  const double h2 = integrate([&](double t) {
    const double h = p.H(std::vector<double>{t})[0] - h1;
    return (h * h + s2) * density(t);
  }) / z;
  return {m1, m2, h1, h2};
}

}  // namespace

TEST(Analytic, Case1aExamples) {
  const auto p = pr::make_case("case1a");
  const auto ref = rf::analytic_reference(p);
  EXPECT_EQ(ref.posterior_mean(std::vector<double>{0.0})[0], 0.0);
  EXPECT_EQ(ref.predictive_mean(std::vector<double>{0.0})[0], 0.0);
  EXPECT_NEAR(ref.posterior_cov(0, 0), 1.0 / (1.0 + 4e4), 1e-18);
  EXPECT_NEAR(ref.posterior_cov(0, 0), 2.49994e-5, 1e-10);
  EXPECT_NEAR(ref.posterior_mean(std::vector<double>{1.0})[0], 2.0 / (4.0 + 1e-4), 1e-15);
  EXPECT_NEAR(ref.predictive_mean(std::vector<double>{1.0})[0], 6.0 / (4.0 + 1e-4), 1e-14);
  EXPECT_NEAR(ref.predictive_cov(0, 0), 9.0 / (1.0 + 4e4) + 1e-3, 1e-16);
}

TEST(Analytic, Case1aMatchesQuadrature) {
  const auto p = pr::make_case("case1a");
  const auto ref = rf::analytic_reference(p);
  for (double y : {-3.0, -0.4, 0.7, 2.5}) {
    const auto q = case1a_quadrature(p, y);
    const std::vector<double> yv{y};
    EXPECT_LE(rel(ref.posterior_mean(yv)[0], q.post_mean), 1e-8);
    EXPECT_LE(rel(ref.posterior_cov(0, 0), q.post_var), 1e-8);
    EXPECT_LE(rel(ref.predictive_mean(yv)[0], q.pred_mean), 1e-8);
    EXPECT_LE(rel(ref.predictive_cov(0, 0), q.pred_var), 1e-8);
  }
}

TEST(Analytic, Case3MatchesStackedLeastSquares) {
  const auto p = pr::make_case("case3-5", 4);
  const auto ref = rf::analytic_reference(p);
  const Eigen::MatrixXd& A = p.linear->A;
  const Eigen::MatrixXd& B = p.linear->B;
  const double se = std::sqrt(p.linear->obs_noise_var);
  // Posterior mean minimizes |(y - A t)/se|^2 + |t|^2: a stacked least-squares problem.
  Eigen::MatrixXd M(A.rows() + 5, 5);
  M << A / se, Eigen::MatrixXd::Identity(5, 5);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(M);
  const Eigen::MatrixXd R = qr.matrixQR().topRows(5).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd Rinv = R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(5, 5));
  const Eigen::MatrixXd cov = Rinv * Rinv.transpose();
  const Eigen::MatrixXd pcov = B * cov * B.transpose() + p.linear->pred_noise_var * Eigen::MatrixXd::Identity(B.rows(), B.rows());
  EXPECT_LE((ref.posterior_cov - cov).norm() / cov.norm(), 1e-8);
  EXPECT_LE((ref.predictive_cov - pcov).norm() / pcov.norm(), 1e-8);
  const auto ys = pr::simulate_observations(p, 5, 8);
  for (std::size_t k = 0; k < ys.size(); ++k) {
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(A.rows() + 5);
    rhs.head(A.rows()) = amvi::to_eigen(ys[k]) / se;
    const Eigen::VectorXd mean = qr.solve(rhs);
    EXPECT_LE((ref.posterior_mean(ys[k]) - mean).norm() / mean.norm(), 1e-8);
    EXPECT_LE((ref.predictive_mean(ys[k]) - B * mean).norm() / (B * mean).norm(), 1e-8);
  }
}

TEST(Analytic, NonlinearIsUnsupported) {
  for (const char* name : {"case1b", "case2"})
    EXPECT_THROW(rf::analytic_reference(pr::make_case(name)), amvi::UnsupportedProblemError);
}

TEST(McmcConfig, ValidationAndIterationCounts) {
  rf::McmcConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.total_iterations(), 62500u);
  EXPECT_EQ(c.burn_in(), 12500u);
  auto bad = c;
  bad.n_samples = 0;
  EXPECT_THROW(bad.validate(), amvi::ConfigError);
  bad = c;
  bad.burn_in_fraction = 1.0;
  EXPECT_THROW(bad.validate(), amvi::ConfigError);
  bad = c;
  bad.initial_step = 0.0;
  EXPECT_THROW(bad.validate(), amvi::ConfigError);
}

TEST(Rwm, Case1aReproducesAnalyticPosterior) {
  const auto p = pr::make_case("case1a");
  const auto ref = rf::analytic_reference(p);
  const std::vector<double> y{1.0};
  const double mean = ref.posterior_mean(y)[0], var = ref.posterior_cov(0, 0);
  double mean_err = 0.0, var_err = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto r = rf::rwm_sample(p, y, {}, s);
    ASSERT_EQ(r.samples.size(), 10000u);
    EXPECT_FALSE(r.acceptance_warning);
    EXPECT_GE(r.acceptance_rate, 0.1);
    EXPECT_LE(r.acceptance_rate, 0.6);
    EXPECT_LE(rel(r.samples.mean()[0], mean), 0.02) << "seed " << s;
    mean_err += rel(r.samples.mean()[0], mean) / 5;
    var_err += rel(r.samples.variance()[0], var) / 5;
  }
  EXPECT_LE(mean_err, 0.02);
  EXPECT_LE(var_err, 0.02);
}

TEST(Rwm, SymmetricTargetAndChainConsistency) {
  const auto p = pr::make_case("case1a");
  const auto a = rf::rwm_sample(p, std::vector<double>{0.0}, {}, 21);
  const auto ca = a.samples.column(0);
  EXPECT_LE(std::abs(a.samples.mean()[0]), 3.0 * batch_means_se(ca));
  const auto b = rf::rwm_sample(p, std::vector<double>{1.3}, {}, 22);
  const auto c = rf::rwm_sample(p, std::vector<double>{1.3}, {}, 23);
  const double se = std::hypot(batch_means_se(b.samples.column(0)), batch_means_se(c.samples.column(0)));
  EXPECT_LE(std::abs(b.samples.mean()[0] - c.samples.mean()[0]), 3.0 * se);
  EXPECT_NE(b.samples.data(), c.samples.data());
}

TEST(Rwm, DeterministicPerSeed) {
  const auto p = pr::make_case("case2");
  rf::McmcConfig cfg;
  cfg.n_samples = 500;
  const std::vector<double> y{3.0, 2.0};
  EXPECT_EQ(rf::rwm_sample(p, y, cfg, 5).samples.data(), rf::rwm_sample(p, y, cfg, 5).samples.data());
}

TEST(Rwm, KolmogorovSmirnovOnStandardNormal) {
  rf::McmcTarget t;
  t.log_density = [](std::span<const double> x) { return -0.5 * x[0] * x[0]; };
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto r = rf::rwm_sample(t, {0.0}, {}, s);
    auto x = r.samples.column(0);
    std::sort(x.begin(), x.end());
    const boost::math::normal_distribution<> n01;
    double ks = 0.0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double F = boost::math::cdf(n01, x[i]);
      ks = std::max({ks, F - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - F});
    }
    EXPECT_LT(ks, 0.02) << "seed " << s;
  }
}

TEST(Rwm, LinearCasesConvergeSeedAveraged) {
  const auto p = pr::make_case("case3-5", 2);
  const auto ref = rf::analytic_reference(p);
  const auto y = pr::simulate_observations(p, 1, 6);
  const Eigen::VectorXd mean = ref.posterior_mean(y[0]);
  double mean_err = 0.0, cov_err = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto r = rf::rwm_sample(p, y[0], {}, 40 + s);
    const Eigen::VectorXd m = amvi::to_eigen(r.samples.mean());
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(5, 5);
    for (std::size_t i = 0; i < r.samples.size(); ++i) {
      const Eigen::VectorXd d = amvi::to_eigen(r.samples[i]) - m;
      C += d * d.transpose() / static_cast<double>(r.samples.size());
    }
    mean_err += (m - mean).norm() / mean.norm() / 5;
    cov_err += (C - ref.posterior_cov).norm() / ref.posterior_cov.norm() / 5;
  }
  EXPECT_LE(mean_err, 0.02);
  EXPECT_LE(cov_err, 0.02);
}

TEST(Rwm, Case3LongRunWithinOnePercent) {
  const auto p = pr::make_case("case3-5", 1);
  const auto ref = rf::analytic_reference(p);
  const auto y = pr::simulate_observations(p, 1, 3);
  rf::McmcConfig cfg;
  cfg.n_samples = 100000;
  const auto r = rf::rwm_sample(p, y[0], cfg, 17);
  const Eigen::VectorXd m = amvi::to_eigen(r.samples.mean());
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(5, 5);
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    const Eigen::VectorXd d = amvi::to_eigen(r.samples[i]) - m;
    C += d * d.transpose() / static_cast<double>(r.samples.size());
  }
  const Eigen::VectorXd mean = ref.posterior_mean(y[0]);
  EXPECT_LE((m - mean).norm() / mean.norm(), 0.01);
  EXPECT_LE((C - ref.posterior_cov).norm() / ref.posterior_cov.norm(), 0.01);
}

TEST(ReferencePredictive, Examples) {
  const auto p = pr::make_case("case1a");
  const auto ref = rf::analytic_reference(p);
  const std::vector<double> y{0.8};
  const auto post = ref.posterior(y);
  amvi::Rng rng(3);
  SampleSet th(0, 1);
  for (int i = 0; i < 100000; ++i) th.push_back(post.sample(rng));
  const auto z = rf::reference_predictive(p, th, 4);
  ASSERT_EQ(z.size(), 100000u);
  const double se = std::sqrt(z.variance()[0] / 1e5);
  EXPECT_LE(std::abs(z.mean()[0] - 6 * 0.8 / (4 + 1e-4)), 3 * se);

  auto constant = [](std::span<const double>, bool) { return pr::MapValue{{2.5}, Eigen::MatrixXd::Zero(1, 1)}; };
  const pr::Problem c("const", Mvn::isotropic(1, 1.0), Mvn::isotropic(1, 1.0), Mvn::isotropic(1, 1e-300), constant,
                      constant);
  const auto zc = rf::reference_predictive(c, th, 1);
  for (double v : zc.data()) ASSERT_NEAR(v, 2.5, 1e-12);
  SampleSet one(0, 1);
  one.push_back(std::vector<double>{0.1});
  const auto z1 = rf::reference_predictive(p, one, 2);
  EXPECT_EQ(z1.size(), 1u);
  EXPECT_EQ(z1.dim(), 1u);
  EXPECT_TRUE(std::isfinite(z1[0][0]));
}

TEST(Cache, RoundTripAndMissWithComputeDisabled) {
  const auto dir = std::filesystem::temp_directory_path() / "amvi_test_cache";
  std::filesystem::remove_all(dir);
  const auto p = pr::make_case("case1b");
  rf::McmcConfig cfg;
  cfg.n_samples = 300;
  const std::vector<double> y{0.5};
  EXPECT_THROW(rf::cached_rwm_sample(dir, "case1b", p, y, cfg, 1, false), amvi::CacheMissError);
  const auto first = rf::cached_rwm_sample(dir, "case1b", p, y, cfg, 1);
  const auto before = p.counter().snapshot();
  const auto again = rf::cached_rwm_sample(dir, "case1b", p, y, cfg, 1, false);
  EXPECT_EQ((p.counter().snapshot() - before).g, 0u);
  EXPECT_EQ(first.samples.data(), again.samples.data());
  EXPECT_EQ(first.acceptance_rate, again.acceptance_rate);
  EXPECT_NE(rf::cache_key("case1b", y, 1, cfg), rf::cache_key("case1b", y, 2, cfg));
  cfg.thinning = 4;
  EXPECT_NE(rf::cache_key("case1b", y, 1, cfg), rf::cache_key("case1b", y, 1, {}));
  EXPECT_THROW(rf::cached_rwm_sample(dir, "case1b", p, y, cfg, 1, false), amvi::CacheMissError);

  const auto bad = dir / "bad.bin";
  { std::ofstream(bad) << "nonsense\n"; }
  EXPECT_THROW(rf::read_samples(bad), amvi::ConfigError);
  std::filesystem::remove_all(dir);
}
