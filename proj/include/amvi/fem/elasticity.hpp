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

#include <array>
#include <cmath>

#include "amvi/core/error.hpp"
#include "amvi/fem/dual.hpp"

namespace amvi::fem {

/// Isotropic linear-elastic constants.
template <class T>
struct BasicElasticity {
  T youngs_modulus{};
  T poisson_ratio{};

  T bulk_modulus() const { return youngs_modulus / (3.0 * (1.0 - 2.0 * poisson_ratio)); }
  T shear_modulus() const { return youngs_modulus / (2.0 * (1.0 + poisson_ratio)); }
};

using ElasticityParams = BasicElasticity<double>;

inline void validate(const ElasticityParams& m) {
  if (!(m.youngs_modulus > 0.0)) throw ConfigError("ElasticityParams: E must be positive");
  if (!(m.poisson_ratio > 0.0 && m.poisson_ratio < 0.5))
    throw ConfigError("ElasticityParams: nu must lie in (0, 0.5)");
}

/// Maps unconstrained latent parameters to (E, nu) with E > 0, 0 < nu < 0.5.
template <class T>
BasicElasticity<T> theta_transform(const T& theta1, const T& theta2) {
  using std::exp;
  return {exp(theta1), 0.5 / (1.0 + exp(-theta2))};
}

inline ElasticityParams theta_transform(const std::array<double, 2>& theta) {
  return theta_transform<double>(theta[0], theta[1]);
}

/// 3x3 Voigt matrix (xx, yy, engineering xy).
template <class T>
using Voigt3 = std::array<std::array<T, 3>, 3>;

/// Plane-stress constitutive matrix obtained from the 3D isotropic tensor
/// 3K P_vol + 2G P_dev by condensing out the zz stress (sigma_zz = 0).
template <class T>
Voigt3<T> plane_stress_matrix(const BasicElasticity<T>& m) {
  const T kappa = m.bulk_modulus();
  const T mu = m.shear_modulus();
  const T lambda = kappa - (2.0 / 3.0) * mu;  // off-diagonal of C in Voigt form
  const T c33 = lambda + 2.0 * mu;
  const T corr = lambda * lambda / c33;
  Voigt3<T> D{};
  D[0][0] = c33 - corr;
  D[1][1] = c33 - corr;
  D[0][1] = lambda - corr;
  D[1][0] = lambda - corr;
  D[2][2] = mu;
  return D;
}

/// Von Mises stress sqrt(3/2 s:s) of the in-plane state embedded in 3D with
/// sigma_zz = 0.
template <class T>
T von_mises(const T& sxx, const T& syy, const T& sxy) {
  using std::sqrt;
  const T p = (sxx + syy) / 3.0;
  const T dxx = sxx - p;
  const T dyy = syy - p;
  const T dzz = -p;
  const T ss = dxx * dxx + dyy * dyy + dzz * dzz + 2.0 * sxy * sxy;
  return sqrt(1.5 * ss);
}

}  // namespace amvi::fem
