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
#include <ostream>
#include <string>
#include <vector>

#include "amvi/core/error.hpp"
#include "amvi/core/rng.hpp"

namespace amvi::fem {

using Point = std::array<double, 2>;

struct DirichletBc {
  int node = 0;
  int component = 0;  // 0 = x, 1 = y
  double value = 0.0;
};

/// Uniform traction on the straight edge between two nodes.
struct TractionEdge {
  int a = 0;
  int b = 0;
  Point traction{0.0, 0.0};
};

/// Four-node quadrilateral mesh with boundary data and monitoring points.
struct Mesh {
  std::vector<Point> nodes;
  std::vector<std::array<int, 4>> elements;  // counter-clockwise
  std::vector<DirichletBc> dirichlet;
  std::vector<TractionEdge> tractions;
  int observation_node = 0;                   // point A
  int stress_element = 0;                     // element holding B and C
  std::array<int, 2> stress_points{0, 1};     // Gauss point indices of B and C

  std::size_t dof_count() const noexcept { return 2 * nodes.size(); }
};

/// Cook's membrane geometry: a tapered panel clamped on the left edge and
/// sheared on the right edge.
struct CookGeometry {
  // Corners in counter-clockwise order: bottom-left, bottom-right, top-right, top-left.
  std::array<Point, 4> corners{{{0.0, 0.0}, {48.0, 44.0}, {48.0, 60.0}, {0.0, 44.0}}};
  int nx = 20;
  int ny = 10;
  double load_resultant = 1.0;  // total vertical force on the right edge (unit thickness)
  int stress_element = -1;      // -1: bottom-row element at mid-span
  std::array<int, 2> stress_points{0, 1};
};

inline int grid_node(int i, int j, int nx) { return j * (nx + 1) + i; }

inline Point bilinear(const std::array<Point, 4>& c, double s, double t) {
  const double n0 = (1 - s) * (1 - t), n1 = s * (1 - t), n2 = s * t, n3 = (1 - s) * t;
  return {n0 * c[0][0] + n1 * c[1][0] + n2 * c[2][0] + n3 * c[3][0],
          n0 * c[0][1] + n1 * c[1][1] + n2 * c[2][1] + n3 * c[3][1]};
}

/// Structured nx x ny mesh of the quadrilateral `corners`, no boundary data.
inline Mesh structured_mesh(const std::array<Point, 4>& corners, int nx, int ny) {
  if (nx < 1 || ny < 1) throw ConfigError("structured_mesh: nx and ny must be positive");
  Mesh m;
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i)
      m.nodes.push_back(bilinear(corners, static_cast<double>(i) / nx, static_cast<double>(j) / ny));
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      m.elements.push_back({grid_node(i, j, nx), grid_node(i + 1, j, nx), grid_node(i + 1, j + 1, nx),
                            grid_node(i, j + 1, nx)});
  return m;
}

inline Mesh make_cook_membrane(const CookGeometry& g = {}) {
  Mesh m = structured_mesh(g.corners, g.nx, g.ny);
  for (int j = 0; j <= g.ny; ++j) {
    const int n = grid_node(0, j, g.nx);
    m.dirichlet.push_back({n, 0, 0.0});
    m.dirichlet.push_back({n, 1, 0.0});
  }
  const double dx = g.corners[2][0] - g.corners[1][0];
  const double dy = g.corners[2][1] - g.corners[1][1];
  const double edge_length = std::hypot(dx, dy);
  const double t = g.load_resultant / edge_length;
  for (int j = 0; j < g.ny; ++j)
    m.tractions.push_back({grid_node(g.nx, j, g.nx), grid_node(g.nx, j + 1, g.nx), {0.0, t}});
  m.observation_node = grid_node(g.nx, g.ny, g.nx);
  m.stress_element = g.stress_element >= 0 ? g.stress_element : g.nx / 2;
  if (m.stress_element >= static_cast<int>(m.elements.size()))
    throw ConfigError("CookGeometry: stress_element out of range");
  for (int p : g.stress_points)
    if (p < 0 || p > 3) throw ConfigError("CookGeometry: stress point index must be in [0, 3]");
  m.stress_points = g.stress_points;
  return m;
}

/// Rectangle [0,w] x [0,h] with interior nodes randomly displaced by up to
/// `distortion` of the local spacing. Used for patch tests.
inline Mesh make_distorted_rectangle(double w, double h, int nx, int ny, double distortion,
                                     std::uint64_t seed) {
  Mesh m = structured_mesh({{{0.0, 0.0}, {w, 0.0}, {w, h}, {0.0, h}}}, nx, ny);
  Rng rng(seed);
  const double hx = w / nx, hy = h / ny;
  for (int j = 1; j < ny; ++j)
    for (int i = 1; i < nx; ++i) {
      auto& p = m.nodes[static_cast<std::size_t>(grid_node(i, j, nx))];
      p[0] += distortion * hx * (2.0 * uniform01(rng) - 1.0);
      p[1] += distortion * hy * (2.0 * uniform01(rng) - 1.0);
    }
  return m;
}

inline std::vector<int> boundary_nodes(int nx, int ny) {
  std::vector<int> out;
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i)
      if (i == 0 || j == 0 || i == nx || j == ny) out.push_back(grid_node(i, j, nx));
  return out;
}

/// Plain-text listing: nodes, elements, boundary sets, monitoring points.
inline void dump_mesh(const Mesh& m, std::ostream& os) {
  os << "# nodes " << m.nodes.size() << "\n";
  for (std::size_t i = 0; i < m.nodes.size(); ++i)
    os << "node " << i << ' ' << m.nodes[i][0] << ' ' << m.nodes[i][1] << "\n";
  os << "# elements " << m.elements.size() << "\n";
  for (std::size_t e = 0; e < m.elements.size(); ++e) {
    const auto& c = m.elements[e];
    os << "element " << e << ' ' << c[0] << ' ' << c[1] << ' ' << c[2] << ' ' << c[3] << "\n";
  }
  os << "# dirichlet " << m.dirichlet.size() << "\n";
  for (const auto& bc : m.dirichlet)
    os << "fix " << bc.node << ' ' << (bc.component == 0 ? 'x' : 'y') << ' ' << bc.value << "\n";
  os << "# traction_edges " << m.tractions.size() << "\n";
  for (const auto& t : m.tractions)
    os << "traction " << t.a << ' ' << t.b << ' ' << t.traction[0] << ' ' << t.traction[1] << "\n";
  os << "observation_node " << m.observation_node << "\n";
  os << "stress_element " << m.stress_element << " gauss_points " << m.stress_points[0] << ' '
     << m.stress_points[1] << "\n";
}

}  // namespace amvi::fem
