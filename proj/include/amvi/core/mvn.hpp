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
#include <numbers>
#include <span>
#include <vector>

#include "amvi/core/error.hpp"
#include "amvi/core/rng.hpp"

namespace amvi {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Multivariate normal with a precomputed Cholesky factor.
class Mvn {
 public:
  Mvn() = default;

  Mvn(Eigen::VectorXd mean, Eigen::MatrixXd cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
    if (cov_.rows() != cov_.cols() || cov_.rows() != mean_.size())
      throw ShapeError("Mvn: covariance shape does not match mean");
    if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + cov_.cwiseAbs().maxCoeff()))
      throw LinalgError("Mvn: covariance is not symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(cov_);
    if (llt.info() != Eigen::Success)
      throw LinalgError("Mvn: covariance is not positive definite");
    chol_ = llt.matrixL();
    precision_ = llt.solve(Eigen::MatrixXd::Identity(cov_.rows(), cov_.cols()));
    log_det_ = 2.0 * chol_.diagonal().array().log().sum();
  }

  static Mvn isotropic(std::size_t dim, double variance, double mean = 0.0) {
    return {Eigen::VectorXd::Constant(static_cast<Eigen::Index>(dim), mean),
            variance * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim),
                                                 static_cast<Eigen::Index>(dim))};
  }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(mean_.size()); }
  const Eigen::VectorXd& mean() const noexcept { return mean_; }
  const Eigen::MatrixXd& cov() const noexcept { return cov_; }
  const Eigen::MatrixXd& precision() const noexcept { return precision_; }
  const Eigen::MatrixXd& chol() const noexcept { return chol_; }
  double log_det() const noexcept { return log_det_; }

  bool is_diagonal() const {
    return (cov_ - Eigen::MatrixXd(cov_.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0;
  }

  /// log N(x; mean + shift, cov).
  double log_density(std::span<const double> x, std::span<const double> center) const {
    const auto n = static_cast<Eigen::Index>(dim());
    if (x.size() != dim() || center.size() != dim()) throw ShapeError("Mvn::log_density: dimension mismatch");
    Eigen::VectorXd r(n);
    for (Eigen::Index i = 0; i < n; ++i) r[i] = x[static_cast<std::size_t>(i)] - center[static_cast<std::size_t>(i)];
    const Eigen::VectorXd w = chol_.triangularView<Eigen::Lower>().solve(r);
    return -0.5 * (static_cast<double>(n) * kLog2Pi + log_det_ + w.squaredNorm());
  }

  double log_density(std::span<const double> x) const {
    return log_density(x, std::span<const double>(mean_.data(), dim()));
  }

  /// mean + L * noise.
  std::vector<double> transform(std::span<const double> noise) const {
    const auto n = static_cast<Eigen::Index>(dim());
    std::vector<double> out(dim());
    for (Eigen::Index i = 0; i < n; ++i) {
      double acc = mean_[i];
      for (Eigen::Index j = 0; j <= i; ++j) acc += chol_(i, j) * noise[static_cast<std::size_t>(j)];
      out[static_cast<std::size_t>(i)] = acc;
    }
    return out;
  }

  std::vector<double> sample(Rng& rng) const { return transform(standard_normal_vector(rng, dim())); }

  /// Zero-mean noise draw L * e.
  std::vector<double> sample_noise(Rng& rng) const {
    const auto e = standard_normal_vector(rng, dim());
    std::vector<double> out(dim(), 0.0);
    for (std::size_t i = 0; i < dim(); ++i)
      for (std::size_t j = 0; j <= i; ++j)
        out[i] += chol_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * e[j];
    return out;
  }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd chol_;
  Eigen::MatrixXd precision_;
  double log_det_ = 0.0;
};

inline Eigen::VectorXd to_eigen(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<double> to_std(const Eigen::VectorXd& v) {
  return {v.data(), v.data() + v.size()};
}

}  // namespace amvi
