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

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <array>
#include <cmath>
#include <sstream>
#include <vector>

#include "amvi/core/error.hpp"
#include "amvi/fem/element.hpp"
#include "amvi/fem/mesh.hpp"

namespace amvi::fem {

using SparseMatrix = Eigen::SparseMatrix<double>;

inline ElementCoords element_coords(const Mesh& mesh, std::size_t e) {
  ElementCoords xy{};
  for (int a = 0; a < 4; ++a) xy[a] = mesh.nodes[static_cast<std::size_t>(mesh.elements[e][a])];
  return xy;
}

inline std::array<int, 8> element_dofs(const Mesh& mesh, std::size_t e) {
  std::array<int, 8> d{};
  for (int a = 0; a < 4; ++a) {
    d[2 * a] = 2 * mesh.elements[e][a];
    d[2 * a + 1] = 2 * mesh.elements[e][a] + 1;
  }
  return d;
}

/// Consistent nodal forces of the uniform edge tractions (linear shape
/// functions: half of the edge resultant to each end node).
inline Eigen::VectorXd external_force(const Mesh& mesh) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mesh.dof_count()));
  for (const auto& t : mesh.tractions) {
    const auto& pa = mesh.nodes[static_cast<std::size_t>(t.a)];
    const auto& pb = mesh.nodes[static_cast<std::size_t>(t.b)];
    const double len = std::hypot(pb[0] - pa[0], pb[1] - pa[1]);
    for (int c = 0; c < 2; ++c) {
      f[2 * t.a + c] += 0.5 * len * t.traction[c];
      f[2 * t.b + c] += 0.5 * len * t.traction[c];
    }
  }
  return f;
}

/// Assembled (unconstrained) stiffness, external force and Dirichlet data.
struct FemSystem {
  SparseMatrix stiffness;
  Eigen::VectorXd external_force;
  std::vector<int> fixed_dofs;
  std::vector<double> fixed_values;
};

/// Displacements of a solved system together with the data that produced them.
struct FemSolution {
  Eigen::VectorXd displacement;
  SparseMatrix stiffness;
  Eigen::VectorXd external_force;
  double residual_norm = 0.0;  // ||K u - f|| over free dofs
};

/// Scatters per-element matrices into a sparse matrix; `entry(e, a, b)`
/// returns the (a, b) entry of element e.
template <class Entry>
SparseMatrix scatter(const Mesh& mesh, Entry&& entry) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(mesh.elements.size() * 64);
  for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
    const auto dofs = element_dofs(mesh, e);
    for (int a = 0; a < 8; ++a)
      for (int b = 0; b < 8; ++b) trip.emplace_back(dofs[a], dofs[b], entry(e, a, b));
  }
  const auto n = static_cast<Eigen::Index>(mesh.dof_count());
  SparseMatrix K(n, n);
  K.setFromTriplets(trip.begin(), trip.end());
  return K;
}

inline FemSystem assemble(const Mesh& mesh, const ElasticityParams& mat,
                          Formulation form = Formulation::Incompatible) {
  validate(mat);
  const auto D = plane_stress_matrix(mat);
  std::vector<std::array<std::array<double, 8>, 8>> ke(mesh.elements.size());
  for (std::size_t e = 0; e < mesh.elements.size(); ++e)
    ke[e] = element_kernel(element_coords(mesh, e), D, form).stiffness;
  FemSystem sys;
  sys.stiffness = scatter(mesh, [&](std::size_t e, int a, int b) { return ke[e][a][b]; });
  sys.external_force = external_force(mesh);
  for (const auto& bc : mesh.dirichlet) {
    sys.fixed_dofs.push_back(2 * bc.node + bc.component);
    sys.fixed_values.push_back(bc.value);
  }
  return sys;
}

/// Cholesky factorization of the free-free block of K.
class ConstrainedSolver {
 public:
  ConstrainedSolver(const SparseMatrix& K, const std::vector<int>& fixed_dofs) {
    const auto n = K.rows();
    free_index_.assign(static_cast<std::size_t>(n), -1);
    std::vector<char> fixed(static_cast<std::size_t>(n), 0);
    for (int d : fixed_dofs) fixed[static_cast<std::size_t>(d)] = 1;
    for (Eigen::Index i = 0; i < n; ++i)
      if (!fixed[static_cast<std::size_t>(i)]) {
        free_index_[static_cast<std::size_t>(i)] = static_cast<int>(free_dofs_.size());
        free_dofs_.push_back(static_cast<int>(i));
      }
    const auto nf = static_cast<Eigen::Index>(free_dofs_.size());
    if (nf == 0) throw SolverError("ConstrainedSolver: every degree of freedom is fixed");
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(K.nonZeros()));
    for (Eigen::Index c = 0; c < K.outerSize(); ++c)
      for (SparseMatrix::InnerIterator it(K, c); it; ++it) {
        const int fr = free_index_[static_cast<std::size_t>(it.row())];
        const int fc = free_index_[static_cast<std::size_t>(it.col())];
        if (fr >= 0 && fc >= 0) trip.emplace_back(fr, fc, it.value());
      }
    SparseMatrix Kff(nf, nf);
    Kff.setFromTriplets(trip.begin(), trip.end());
    llt_.compute(Kff);
    if (llt_.info() != Eigen::Success) {
      const Eigen::VectorXd diag = Kff.diagonal();
      std::ostringstream msg;
      msg << "stiffness factorization failed: constrained K is not positive definite ("
          << fixed_dofs.size() << " fixed dofs, diag range [" << diag.minCoeff() << ", "
          << diag.maxCoeff() << "]); check the Dirichlet constraints";
      throw SolverError(msg.str());
    }
  }

  /// Full-length solution of K u = rhs with u = prescribed on fixed dofs.
  Eigen::VectorXd solve(const SparseMatrix& K, const Eigen::VectorXd& rhs, const std::vector<int>& fixed_dofs,
                        const std::vector<double>& fixed_values) const {
    Eigen::VectorXd uc = Eigen::VectorXd::Zero(K.rows());
    for (std::size_t i = 0; i < fixed_dofs.size(); ++i) uc[fixed_dofs[i]] = fixed_values[i];
    const Eigen::VectorXd lifted = rhs - K * uc;
    Eigen::VectorXd bf(static_cast<Eigen::Index>(free_dofs_.size()));
    for (std::size_t i = 0; i < free_dofs_.size(); ++i) bf[static_cast<Eigen::Index>(i)] = lifted[free_dofs_[i]];
    const Eigen::VectorXd xf = llt_.solve(bf);
    Eigen::VectorXd u = uc;
    for (std::size_t i = 0; i < free_dofs_.size(); ++i) u[free_dofs_[i]] = xf[static_cast<Eigen::Index>(i)];
    return u;
  }

  /// Solve with homogeneous constraints.
  Eigen::VectorXd solve_homogeneous(const Eigen::VectorXd& rhs) const {
    Eigen::VectorXd bf(static_cast<Eigen::Index>(free_dofs_.size()));
    for (std::size_t i = 0; i < free_dofs_.size(); ++i) bf[static_cast<Eigen::Index>(i)] = rhs[free_dofs_[i]];
    const Eigen::VectorXd xf = llt_.solve(bf);
    Eigen::VectorXd u = Eigen::VectorXd::Zero(rhs.size());
    for (std::size_t i = 0; i < free_dofs_.size(); ++i) u[free_dofs_[i]] = xf[static_cast<Eigen::Index>(i)];
    return u;
  }

  double free_residual(const SparseMatrix& K, const Eigen::VectorXd& u, const Eigen::VectorXd& rhs) const {
    const Eigen::VectorXd r = K * u - rhs;
    double sq = 0.0;
    for (int d : free_dofs_) sq += r[d] * r[d];
    return std::sqrt(sq);
  }

  const std::vector<int>& free_dofs() const noexcept { return free_dofs_; }

 private:
  std::vector<int> free_index_;
  std::vector<int> free_dofs_;
  Eigen::SimplicialLLT<SparseMatrix> llt_;
};

inline FemSolution solve(const FemSystem& sys) {
  ConstrainedSolver solver(sys.stiffness, sys.fixed_dofs);
  FemSolution sol;
  sol.displacement = solver.solve(sys.stiffness, sys.external_force, sys.fixed_dofs, sys.fixed_values);
  sol.stiffness = sys.stiffness;
  sol.external_force = sys.external_force;
  sol.residual_norm = solver.free_residual(sys.stiffness, sol.displacement, sys.external_force);
  const double scale = std::max(sys.external_force.norm(), (sys.stiffness * sol.displacement).norm());
  if (scale > 0.0 && sol.residual_norm > 1e-10 * scale) {
    std::ostringstream msg;
    msg << "solve: residual " << sol.residual_norm << " exceeds 1e-10 relative tolerance";
    throw SolverError(msg.str());
  }
  return sol;
}

/// Horizontal and vertical displacement of the observation node.
inline std::array<double, 2> observe_displacement(const FemSolution& sol, const Mesh& mesh) {
  const int n = mesh.observation_node;
  return {sol.displacement[2 * n], sol.displacement[2 * n + 1]};
}

/// In-plane stress (xx, yy, xy) at Gauss point `gp` of element `e`.
inline std::array<double, 3> gauss_point_stress(const FemSolution& sol, const Mesh& mesh,
                                                const ElasticityParams& mat, std::size_t e, int gp,
                                                Formulation form = Formulation::Incompatible) {
  const auto D = plane_stress_matrix(mat);
  const auto kernel = element_kernel(element_coords(mesh, e), D, form);
  const auto dofs = element_dofs(mesh, e);
  std::array<double, 3> strain{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 8; ++c) strain[r] += kernel.recovery[gp][r][c] * sol.displacement[dofs[c]];
  std::array<double, 3> stress{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) stress[r] += D[r][c] * strain[c];
  return stress;
}

/// Von Mises stress at the two monitored Gauss points (B, C).
inline std::array<double, 2> predict_von_mises(const FemSolution& sol, const Mesh& mesh,
                                               const ElasticityParams& mat,
                                               Formulation form = Formulation::Incompatible) {
  std::array<double, 2> out{};
  for (int k = 0; k < 2; ++k) {
    const auto s = gauss_point_stress(sol, mesh, mat, static_cast<std::size_t>(mesh.stress_element),
                                      mesh.stress_points[k], form);
    out[k] = von_mises(s[0], s[1], s[2]);
  }
  return out;
}

}  // namespace amvi::fem
