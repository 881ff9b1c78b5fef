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

#include "amvi/problems.hpp"

namespace pr = amvi::problems;
using amvi::diffnet::Tape;
using amvi::diffnet::Var;

namespace {

// Central differences of every output of a map, straight from G/H values.
Eigen::MatrixXd fd_jacobian(const pr::Problem& p, std::vector<double> theta, bool use_h, double step = 1e-6) {
  const std::size_t out = use_h ? p.z_dim : p.y_dim;
  Eigen::MatrixXd J(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(theta.size()));
  for (std::size_t j = 0; j < theta.size(); ++j) {
    auto tp = theta, tm = theta;
    tp[j] += step;
    tm[j] -= step;
    const auto fp = use_h ? p.H(tp) : p.G(tp);
    const auto fm = use_h ? p.H(tm) : p.G(tm);
    for (std::size_t i = 0; i < out; ++i)
      J(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (fp[i] - fm[i]) / (2 * step);
  }
  return J;
}

}  // namespace

TEST(MakeCase, ForwardMapExamples) {
  const auto c1a = pr::make_case("case1a");
  EXPECT_DOUBLE_EQ(c1a.G(std::vector<double>{1.0})[0], 2.0);
  EXPECT_DOUBLE_EQ(c1a.H(std::vector<double>{1.0})[0], 3.0);
  const auto c1b = pr::make_case("case1b");
  EXPECT_DOUBLE_EQ(c1b.G(std::vector<double>{0.0})[0], 0.1);
  EXPECT_DOUBLE_EQ(c1b.H(std::vector<double>{0.0})[0], 1.2);
  const auto c2 = pr::make_case("case2");
  const auto g = c2.G(std::vector<double>{0.0, 0.0});
  const auto h = c2.H(std::vector<double>{0.0, 0.0});
  EXPECT_DOUBLE_EQ(g[0], 2.0);
  EXPECT_DOUBLE_EQ(g[1], 1.0);
  EXPECT_DOUBLE_EQ(h[0], 1.2);
  EXPECT_DOUBLE_EQ(h[1], 1.1);
}

TEST(MakeCase, NoiseLevelsAndPriors) {
  const struct {
    const char* name;
    double obs, pred;
  } expected[] = {{"case1a", 1e-4, 1e-3}, {"case1b", 1e-2, 1e-3}, {"case2", 1e-1, 1e-2},
                  {"case3-5", 1e-4, 1e-3}, {"case4", 1e-1, 3e-3}};
  for (const auto& e : expected) {
    const auto p = pr::make_case(e.name, 3);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(p.y_dim); ++i) EXPECT_DOUBLE_EQ(p.obs_noise.cov()(i, i), e.obs);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(p.z_dim); ++i) EXPECT_DOUBLE_EQ(p.pred_noise.cov()(i, i), e.pred);
    EXPECT_TRUE(p.prior.cov().isIdentity(0.0));
    EXPECT_TRUE(p.prior.mean().isZero(0.0));
  }
  EXPECT_EQ(pr::make_case("case4").predictive_family, amvi::varfam::Family::LogNormalDiag);
  EXPECT_EQ(pr::make_case("case2").predictive_family, amvi::varfam::Family::GaussianDiag);
}

TEST(MakeCase, UnknownNameIsConfigError) {
  EXPECT_THROW(pr::make_case("case9"), amvi::ConfigError);
  EXPECT_THROW(pr::make_case("case3-x"), amvi::ConfigError);
}

TEST(MakeCase, Case3MatricesDeterministicAndUniform) {
  const auto a = pr::make_case("case3-10", 17);
  const auto b = pr::make_case("case3-d10", 17);
  const auto c = pr::make_case("case3-10", 18);
  ASSERT_TRUE(a.linear && b.linear && c.linear);
  EXPECT_EQ(a.theta_dim, 10u);
  EXPECT_TRUE(a.linear->A == b.linear->A);
  EXPECT_TRUE(a.linear->B == b.linear->B);
  EXPECT_FALSE(a.linear->A == c.linear->A);
  EXPECT_GE(a.linear->A.minCoeff(), 0.0);
  EXPECT_LE(a.linear->A.maxCoeff(), 2.0);
  EXPECT_NEAR(a.linear->A.mean(), 1.0, 0.2);
  const std::vector<double> theta(10, 0.5);
  const auto y = a.G(theta);
  const Eigen::VectorXd ref = a.linear->A * Eigen::VectorXd::Constant(10, 0.5);
  for (int i = 0; i < 10; ++i) EXPECT_NEAR(y[static_cast<std::size_t>(i)], ref[i], 1e-14);
}

TEST(SimulateObservations, Case1aMomentsAndDeterminism) {
  const auto p = pr::make_case("case1a");
  const std::size_t n = 200000;
  const auto ys = pr::simulate_observations(p, n, 5);
  const double var_true = 4.0 + 1e-4;
  const double se_mean = std::sqrt(var_true / n);
  const double se_var = var_true * std::sqrt(2.0 / n);
  EXPECT_LE(std::abs(ys.mean()[0]), 3 * se_mean);
  EXPECT_LE(std::abs(ys.variance()[0] - var_true), 3 * se_var);
  EXPECT_EQ(pr::simulate_observations(p, 10, 5).data(), pr::simulate_observations(p, 10, 5).data());
  EXPECT_THROW(pr::simulate_observations(p, 0, 5), amvi::ConfigError);
  EXPECT_EQ(p.counter().g.load(), 0u);
  EXPECT_EQ(p.counter().g_simulation.load(), n + 20);
}

TEST(Densities, Case1aExamples) {
  const auto p = pr::make_case("case1a");
  const std::vector<double> one{1.0}, two{2.0}, zero{0.0};
  EXPECT_NEAR(pr::log_likelihood<double>(p, one, two), -0.5 * std::log(2 * M_PI * 1e-4), 1e-12);
  EXPECT_NEAR(pr::log_likelihood<double>(p, one, two), 3.686232, 1e-6);
  EXPECT_NEAR(pr::log_pred_density<double>(p, zero, zero), -0.5 * std::log(2 * M_PI * 1e-3), 1e-12);
  Tape tape;
  const Var t = tape.leaf(1.0);
  const Var ll = pr::log_likelihood<Var>(p, std::span<const Var>(&t, 1), two);
  EXPECT_NEAR(ll.value(), 3.686232, 1e-6);
  EXPECT_EQ(tape.backward(ll)[t.id], 0.0);
}

TEST(Densities, GradientMatchesFiniteDifference) {
  const auto p = pr::make_case("case2");
  const std::vector<double> theta{0.3, -0.7}, y{2.5, 0.4};
  Tape tape;
  const auto t = tape.leaves(theta);
  const Var ll = pr::log_likelihood<Var>(p, t, y);
  const auto g = amvi::diffnet::gradient(tape, ll, t);
  for (std::size_t j = 0; j < 2; ++j) {
    auto tp = theta, tm = theta;
    tp[j] += 1e-6;
    tm[j] -= 1e-6;
    const double fd = (pr::log_likelihood<double>(p, tp, y) - pr::log_likelihood<double>(p, tm, y)) / 2e-6;
    EXPECT_NEAR(g[j], fd, 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST(ForwardMaps, JacobiansMatchFiniteDifferences) {
  amvi::Rng rng(4);
  for (const char* name : {"case1a", "case1b", "case2", "case3-5", "case4"}) {
    const auto p = pr::make_case(name, 9);
    for (int rep = 0; rep < 3; ++rep) {
      const auto theta = p.prior.sample(rng);
      for (bool use_h : {false, true}) {
        const auto mv = use_h ? p.H_jacobian(theta) : p.G_jacobian(theta);
        const auto fd = fd_jacobian(p, theta, use_h);
        const double scale = std::max(0.1, fd.cwiseAbs().maxCoeff());
        EXPECT_LE((mv.jacobian - fd).cwiseAbs().maxCoeff(), 1e-5 * scale) << name << " h=" << use_h;
      }
    }
  }
}

TEST(ForwardMaps, TapeNodesCarryJacobian) {
  const auto p = pr::make_case("case2");
  Tape tape;
  const auto t = tape.leaves(std::vector<double>{0.2, 0.1});
  const auto h = p.H(std::span<const Var>(t));
  const auto g0 = amvi::diffnet::gradient(tape, h[0], t);
  EXPECT_NEAR(g0[0], std::exp(0.2), 1e-14);
  EXPECT_NEAR(g0[1], 1.0, 1e-14);
  EXPECT_EQ(p.counter().h.load(), 1u);
}
