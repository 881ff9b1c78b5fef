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


// Four-node quadrilateral kernels with 2x2 Gauss quadrature.
//
// Two formulations share the quadrature: the standard bilinear element and the
// bilinear element enriched with two statically condensed incompatible bubble
// modes per direction. The enriched strains use the centroid Jacobian and the
// det(J0)/det(J) scaling so their element integral vanishes, which keeps the
// patch test exact on distorted meshes.

#pragma once

#include <array>
#include <cmath>
#include <string>

#include "amvi/core/error.hpp"
#include "amvi/fem/elasticity.hpp"

namespace amvi::fem {

enum class Formulation { Bilinear, Incompatible };

inline Formulation formulation_from_string(const std::string& s) {
  if (s == "bilinear" || s == "q4") return Formulation::Bilinear;
  if (s == "incompatible" || s == "q4_incompatible") return Formulation::Incompatible;
  throw ConfigError("unknown element formulation '" + s + "'");
}

inline std::string to_string(Formulation f) {
  return f == Formulation::Bilinear ? "bilinear" : "incompatible";
}

inline constexpr double kGauss = 0.57735026918962576451;  // 1/sqrt(3)

/// Gauss points in counter-clockwise order matching the node numbering.
inline constexpr std::array<std::array<double, 2>, 4> kGaussPoints{
    {{-kGauss, -kGauss}, {kGauss, -kGauss}, {kGauss, kGauss}, {-kGauss, kGauss}}};

using ElementCoords = std::array<std::array<double, 2>, 4>;
using StrainMatrix = std::array<std::array<double, 8>, 3>;

struct Jacobian2 {
  double j00, j01, j10, j11;
  double det() const { return j00 * j11 - j01 * j10; }
};

/// d(N_a)/d(xi), d(N_a)/d(eta) for the four bilinear shape functions.
inline std::array<std::array<double, 4>, 2> shape_gradients_ref(double xi, double eta) {
  return {{{-(1 - eta) / 4, (1 - eta) / 4, (1 + eta) / 4, -(1 + eta) / 4},
           {-(1 - xi) / 4, -(1 + xi) / 4, (1 + xi) / 4, (1 - xi) / 4}}};
}

inline Jacobian2 jacobian(const ElementCoords& xy, double xi, double eta) {
  const auto dN = shape_gradients_ref(xi, eta);
  Jacobian2 J{0, 0, 0, 0};
  for (int a = 0; a < 4; ++a) {
    J.j00 += dN[0][a] * xy[a][0];
    J.j01 += dN[0][a] * xy[a][1];
    J.j10 += dN[1][a] * xy[a][0];
    J.j11 += dN[1][a] * xy[a][1];
  }
  return J;
}

/// Physical gradients (d/dx, d/dy) of reference gradients (d/dxi, d/deta).
inline std::array<double, 2> physical_gradient(const Jacobian2& J, double dxi, double deta) {
  const double inv = 1.0 / J.det();
  return {(J.j11 * dxi - J.j01 * deta) * inv, (-J.j10 * dxi + J.j00 * deta) * inv};
}

/// Strain-displacement matrix (rows xx, yy, engineering xy) at (xi, eta).
inline StrainMatrix strain_displacement(const ElementCoords& xy, double xi, double eta, double* det_j) {
  const auto J = jacobian(xy, xi, eta);
  if (!(J.det() > 0.0)) throw SolverError("element has a non-positive Jacobian determinant");
  if (det_j) *det_j = J.det();
  const auto dN = shape_gradients_ref(xi, eta);
  StrainMatrix B{};
  for (int a = 0; a < 4; ++a) {
    const auto g = physical_gradient(J, dN[0][a], dN[1][a]);
    B[0][2 * a] = g[0];
    B[1][2 * a + 1] = g[1];
    B[2][2 * a] = g[1];
    B[2][2 * a + 1] = g[0];
  }
  return B;
}

/// Strains of the incompatible modes (1 - xi^2), (1 - eta^2); columns
/// (mode1 x, mode1 y, mode2 x, mode2 y).
inline std::array<std::array<double, 4>, 3> incompatible_strain(const ElementCoords& xy, double xi,
                                                                double eta, double det_j) {
  const auto J0 = jacobian(xy, 0.0, 0.0);
  const double scale = J0.det() / det_j;
  const auto g1 = physical_gradient(J0, -2.0 * xi, 0.0);
  const auto g2 = physical_gradient(J0, 0.0, -2.0 * eta);
  std::array<std::array<double, 4>, 3> G{};
  const std::array<std::array<double, 2>, 2> g{{{g1[0] * scale, g1[1] * scale}, {g2[0] * scale, g2[1] * scale}}};
  for (int k = 0; k < 2; ++k) {
    G[0][2 * k] = g[k][0];
    G[1][2 * k + 1] = g[k][1];
    G[2][2 * k] = g[k][1];
    G[2][2 * k + 1] = g[k][0];
  }
  return G;
}

/// Element stiffness and the per-Gauss-point strain recovery operators
/// (strain_gp = recovery[gp] * u_e).
template <class T>
struct ElementKernel {
  std::array<std::array<T, 8>, 8> stiffness{};
  std::array<std::array<std::array<T, 8>, 3>, 4> recovery{};
};

namespace detail {

template <class T, std::size_t R, std::size_t C>
using Mat = std::array<std::array<T, C>, R>;

/// X = A^{-1} Bm for symmetric positive definite 4x4 A (Gaussian elimination).
template <class T, std::size_t C>
Mat<T, 4, C> solve4(Mat<T, 4, 4> A, Mat<T, 4, C> Bm) {
  for (std::size_t k = 0; k < 4; ++k) {
    const T inv = 1.0 / A[k][k];
    for (std::size_t i = k + 1; i < 4; ++i) {
      const T f = A[i][k] * inv;
      for (std::size_t j = k; j < 4; ++j) A[i][j] = A[i][j] - f * A[k][j];
      for (std::size_t j = 0; j < C; ++j) Bm[i][j] = Bm[i][j] - f * Bm[k][j];
    }
  }
  Mat<T, 4, C> X{};
  for (std::size_t ii = 4; ii-- > 0;) {
    for (std::size_t j = 0; j < C; ++j) {
      T acc = Bm[ii][j];
      for (std::size_t m = ii + 1; m < 4; ++m) acc = acc - A[ii][m] * X[m][j];
      X[ii][j] = acc / A[ii][ii];
    }
  }
  return X;
}

}  // namespace detail

/// Geometry-only quantities of an element at its Gauss points.
struct ElementGeometry {
  std::array<StrainMatrix, 4> B{};
  std::array<std::array<std::array<double, 4>, 3>, 4> G{};  // incompatible-mode strains
  std::array<double, 4> detj{};
};

inline ElementGeometry element_geometry(const ElementCoords& xy) {
  ElementGeometry geo;
  for (int g = 0; g < 4; ++g) {
    geo.B[g] = strain_displacement(xy, kGaussPoints[g][0], kGaussPoints[g][1], &geo.detj[g]);
    geo.G[g] = incompatible_strain(xy, kGaussPoints[g][0], kGaussPoints[g][1], geo.detj[g]);
  }
  return geo;
}

template <class T>
ElementKernel<T> element_kernel(const ElementGeometry& geo, const Voigt3<T>& D, Formulation form) {
  ElementKernel<T> out;
  const auto& B = geo.B;
  const auto& G = geo.G;
  const auto& detj = geo.detj;

  // Kcc = sum B^T D B detJ (unit weights)
  for (int g = 0; g < 4; ++g) {
    std::array<std::array<T, 8>, 3> DB{};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 8; ++c) {
        T acc{};
        for (int k = 0; k < 3; ++k)
          if (B[g][k][c] != 0.0) acc = acc + D[r][k] * B[g][k][c];
        DB[r][c] = acc;
      }
    for (int a = 0; a < 8; ++a)
      for (int b = 0; b < 8; ++b) {
        T acc{};
        for (int k = 0; k < 3; ++k)
          if (B[g][k][a] != 0.0) acc = acc + B[g][k][a] * DB[k][b];
        out.stiffness[a][b] = out.stiffness[a][b] + acc * detj[g];
      }
  }
  for (int g = 0; g < 4; ++g)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 8; ++c) out.recovery[g][r][c] = B[g][r][c];
  if (form == Formulation::Bilinear) return out;

  detail::Mat<T, 4, 4> Kii{};
  detail::Mat<T, 4, 8> Kic{};
  for (int g = 0; g < 4; ++g) {
    std::array<std::array<T, 4>, 3> DG{};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) {
        T acc{};
        for (int k = 0; k < 3; ++k) acc = acc + D[r][k] * G[g][k][c];
        DG[r][c] = acc;
      }
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        T acc{};
        for (int k = 0; k < 3; ++k) acc = acc + G[g][k][i] * DG[k][j];
        Kii[i][j] = Kii[i][j] + acc * detj[g];
      }
      for (int b = 0; b < 8; ++b) {
        T acc{};
        for (int k = 0; k < 3; ++k)
          if (B[g][k][b] != 0.0) acc = acc + DG[k][i] * B[g][k][b];
        Kic[i][b] = Kic[i][b] + acc * detj[g];
      }
    }
  }
  const auto X = detail::solve4(Kii, Kic);  // alpha = -X u_e
  for (int a = 0; a < 8; ++a)
    for (int b = 0; b < 8; ++b) {
      T acc{};
      for (int i = 0; i < 4; ++i) acc = acc + Kic[i][a] * X[i][b];
      out.stiffness[a][b] = out.stiffness[a][b] - acc;
    }
  for (int g = 0; g < 4; ++g)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 8; ++c) {
        T acc{};
        for (int i = 0; i < 4; ++i) acc = acc + G[g][r][i] * X[i][c];
        out.recovery[g][r][c] = out.recovery[g][r][c] - acc;
      }
  return out;
}

template <class T>
ElementKernel<T> element_kernel(const ElementCoords& xy, const Voigt3<T>& D, Formulation form) {
  return element_kernel(element_geometry(xy), D, form);
}

}  // namespace amvi::fem
