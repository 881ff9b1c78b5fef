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
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <array>
#include <mutex>
#include <string>
#include <vector>

#include "amvi/core/error.hpp"
#include "amvi/fem/dual.hpp"
#include "amvi/fem/solver.hpp"

namespace amvi::fem {

enum class GradientMode { Direct, FiniteDifference };

inline GradientMode gradient_mode_from_string(const std::string& s) {
  if (s == "direct" || s == "adjoint") return GradientMode::Direct;
  if (s == "finite_difference" || s == "fd") return GradientMode::FiniteDifference;
  throw ConfigError("unknown FEM gradient mode '" + s + "'");
}

inline std::string to_string(GradientMode m) {
  return m == GradientMode::Direct ? "direct" : "finite_difference";
}

/// Outputs of one forward solve at latent parameters theta. Jacobians are
/// d(output_i)/d(theta_j).
struct FemResponse {
  std::array<double, 2> displacement{};  // at the observation node
  std::array<double, 2> von_mises{};     // at the two monitored Gauss points
  Eigen::Matrix2d d_displacement = Eigen::Matrix2d::Zero();
  Eigen::Matrix2d d_von_mises = Eigen::Matrix2d::Zero();
};

/// Latent-parameter forward model of a plane-stress panel: theta -> (E, nu)
/// -> FE solve -> (observation-node displacement, Gauss-point von Mises).
///
/// Element geometry, the sparsity pattern of the free-free stiffness block and
/// its symbolic factorization are computed once. Sensitivities use direct
/// differentiation of the linear solve: K u = f gives du/dp = -K^{-1} (dK/dp) u,
/// with dK/dp from element kernels evaluated in dual arithmetic, so a single
/// numeric factorization serves the primal and both sensitivity solves.
class FemModel {
 public:
  explicit FemModel(Mesh mesh, Formulation form = Formulation::Incompatible,
                    GradientMode mode = GradientMode::Direct, double fd_step = 1e-6)
      : mesh_(std::move(mesh)), form_(form), mode_(mode), fd_step_(fd_step) {
    const auto ndof = mesh_.dof_count();
    if (mesh_.stress_element < 0 || static_cast<std::size_t>(mesh_.stress_element) >= mesh_.elements.size())
      throw ConfigError("FemModel: stress element index out of range");
    prescribed_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ndof));
    std::vector<char> fixed(ndof, 0);
    for (const auto& bc : mesh_.dirichlet) {
      const auto d = static_cast<std::size_t>(2 * bc.node + bc.component);
      fixed[d] = 1;
      prescribed_[static_cast<Eigen::Index>(d)] = bc.value;
    }
    free_index_.assign(ndof, -1);
    for (std::size_t d = 0; d < ndof; ++d)
      if (!fixed[d]) {
        free_index_[d] = static_cast<int>(free_dofs_.size());
        free_dofs_.push_back(static_cast<int>(d));
      }
    if (free_dofs_.empty()) throw SolverError("FemModel: every degree of freedom is fixed");

    const Eigen::VectorXd f = external_force(mesh_);
    force_free_.resize(static_cast<Eigen::Index>(free_dofs_.size()));
    for (std::size_t i = 0; i < free_dofs_.size(); ++i)
      force_free_[static_cast<Eigen::Index>(i)] = f[free_dofs_[i]];

    const auto ne = mesh_.elements.size();
    geometry_.reserve(ne);
    dofs_.reserve(ne);
    std::vector<Eigen::Triplet<double>> trip;
    for (std::size_t e = 0; e < ne; ++e) {
      geometry_.push_back(element_geometry(element_coords(mesh_, e)));
      dofs_.push_back(element_dofs(mesh_, e));
      for (int a = 0; a < 8; ++a)
        for (int b = 0; b < 8; ++b) {
          const int fa = free_index_[static_cast<std::size_t>(dofs_[e][a])];
          const int fb = free_index_[static_cast<std::size_t>(dofs_[e][b])];
          if (fa >= 0 && fb >= 0) trip.emplace_back(fa, fb, 1.0);
        }
    }
    const auto nf = static_cast<Eigen::Index>(free_dofs_.size());
    pattern_.resize(nf, nf);
    pattern_.setFromTriplets(trip.begin(), trip.end());
    pattern_.makeCompressed();
    slots_.resize(ne);
    for (std::size_t e = 0; e < ne; ++e)
      for (int a = 0; a < 8; ++a)
        for (int b = 0; b < 8; ++b) {
          const int fa = free_index_[static_cast<std::size_t>(dofs_[e][a])];
          const int fb = free_index_[static_cast<std::size_t>(dofs_[e][b])];
          slots_[e][a][b] = fa >= 0 && fb >= 0
                                ? static_cast<int>(&pattern_.coeffRef(fa, fb) - pattern_.valuePtr())
                                : -1;
        }
    llt_.analyzePattern(pattern_);
  }

  const Mesh& mesh() const noexcept { return mesh_; }
  Formulation formulation() const noexcept { return form_; }
  GradientMode gradient_mode() const noexcept { return mode_; }

  FemResponse evaluate(const std::array<double, 2>& theta, bool with_jacobian) const {
    if (!with_jacobian) return evaluate_impl<double>(theta);
    if (mode_ == GradientMode::FiniteDifference) return evaluate_fd(theta);
    return evaluate_impl<Dual<2>>(theta);
  }

 private:
  template <class T>
  FemResponse evaluate_impl(const std::array<double, 2>& theta) const {
    constexpr bool kSens = !std::is_same_v<T, double>;
    BasicElasticity<T> mat;
    if constexpr (kSens)
      mat = theta_transform<T>(T::variable(theta[0], 0), T::variable(theta[1], 1));
    else
      mat = theta_transform<double>(theta[0], theta[1]);
    const auto D = plane_stress_matrix(mat);
    const auto ne = mesh_.elements.size();
    std::vector<ElementKernel<T>> kernels;
    kernels.reserve(ne);
    for (std::size_t e = 0; e < ne; ++e) kernels.push_back(element_kernel(geometry_[e], D, form_));

    const std::lock_guard<std::mutex> lock(mutex_);
    SparseMatrix& K = work_;
    if (K.nonZeros() == 0) K = pattern_;
    std::fill(K.valuePtr(), K.valuePtr() + K.nonZeros(), 0.0);
    Eigen::VectorXd rhs = force_free_;
    for (std::size_t e = 0; e < ne; ++e)
      for (int a = 0; a < 8; ++a) {
        const int fa = free_index_[static_cast<std::size_t>(dofs_[e][a])];
        if (fa < 0) continue;
        for (int b = 0; b < 8; ++b) {
          const double k = value_of(kernels[e].stiffness[a][b]);
          const int slot = slots_[e][a][b];
          if (slot >= 0)
            K.valuePtr()[slot] += k;
          else
            rhs[fa] -= k * prescribed_[dofs_[e][b]];
        }
      }
    llt_.factorize(K);
    if (llt_.info() != Eigen::Success)
      throw SolverError("FemModel: stiffness factorization failed; constrained K is not positive definite");

    Eigen::VectorXd u = prescribed_;
    {
      const Eigen::VectorXd x = llt_.solve(rhs);
      for (std::size_t i = 0; i < free_dofs_.size(); ++i) u[free_dofs_[i]] = x[static_cast<Eigen::Index>(i)];
    }
    std::array<Eigen::VectorXd, 2> du;
    if constexpr (kSens) {
      for (std::size_t k = 0; k < 2; ++k) {
        Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(free_dofs_.size()));
        for (std::size_t e = 0; e < ne; ++e)
          for (int a = 0; a < 8; ++a) {
            const int fa = free_index_[static_cast<std::size_t>(dofs_[e][a])];
            if (fa < 0) continue;
            double acc = 0.0;
            for (int b = 0; b < 8; ++b) acc += kernels[e].stiffness[a][b].d[k] * u[dofs_[e][b]];
            r[fa] -= acc;
          }
        const Eigen::VectorXd x = llt_.solve(r);
        du[k] = Eigen::VectorXd::Zero(u.size());
        for (std::size_t i = 0; i < free_dofs_.size(); ++i) du[k][free_dofs_[i]] = x[static_cast<Eigen::Index>(i)];
      }
    }
    auto nodal = [&](int dof) {
      T x(u[dof]);
      if constexpr (kSens) x.d = {du[0][dof], du[1][dof]};
      return x;
    };

    FemResponse out;
    const int n = mesh_.observation_node;
    for (int c = 0; c < 2; ++c) {
      const T ua = nodal(2 * n + c);
      out.displacement[c] = value_of(ua);
      if constexpr (kSens) out.d_displacement.row(c) << ua.d[0], ua.d[1];
    }
    const auto se = static_cast<std::size_t>(mesh_.stress_element);
    for (int k = 0; k < 2; ++k) {
      const auto& R = kernels[se].recovery[static_cast<std::size_t>(mesh_.stress_points[k])];
      std::array<T, 3> eps{};
      for (int row = 0; row < 3; ++row)
        for (int c = 0; c < 8; ++c) eps[row] += R[row][c] * nodal(dofs_[se][c]);
      std::array<T, 3> sig{};
      for (int row = 0; row < 3; ++row)
        for (int c = 0; c < 3; ++c) sig[row] += D[row][c] * eps[c];
      const T vm = von_mises(sig[0], sig[1], sig[2]);
      out.von_mises[k] = value_of(vm);
      if constexpr (kSens) out.d_von_mises.row(k) << vm.d[0], vm.d[1];
    }
    return out;
  }

  FemResponse evaluate_fd(const std::array<double, 2>& theta) const {
    FemResponse r = evaluate_impl<double>(theta);
    for (int j = 0; j < 2; ++j) {
      auto tp = theta, tm = theta;
      tp[j] += fd_step_;
      tm[j] -= fd_step_;
      const auto fp = evaluate_impl<double>(tp), fm = evaluate_impl<double>(tm);
      for (int i = 0; i < 2; ++i) {
        r.d_displacement(i, j) = (fp.displacement[i] - fm.displacement[i]) / (2 * fd_step_);
        r.d_von_mises(i, j) = (fp.von_mises[i] - fm.von_mises[i]) / (2 * fd_step_);
      }
    }
    return r;
  }

  Mesh mesh_;
  Formulation form_;
  GradientMode mode_;
  double fd_step_;
  Eigen::VectorXd prescribed_;
  Eigen::VectorXd force_free_;
  std::vector<int> free_index_;
  std::vector<int> free_dofs_;
  std::vector<ElementGeometry> geometry_;
  std::vector<std::array<int, 8>> dofs_;
  std::vector<std::array<std::array<int, 8>, 8>> slots_;
  SparseMatrix pattern_;

  mutable std::mutex mutex_;
  mutable SparseMatrix work_;
  mutable Eigen::SimplicialLLT<SparseMatrix> llt_;
};

}  // namespace amvi::fem
