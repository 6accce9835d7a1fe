#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include <doctest.h>

#include "hystfem/material.hpp"
#include "hystfem/mesh.hpp"

namespace test {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline hystfem::Vec2 random_in_disk(Rng& rng, double r_lo, double r_hi) {
  const double r = uniform(rng, r_lo, r_hi);
  const double phi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  return {r * std::cos(phi), r * std::sin(phi)};
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

/// Cell k of the five-cell material, 1-based.
inline hystfem::CellParams table_cell(int k, double eps = 1e-10, int form_coeff = 2) {
  return hystfem::five_cell_material(eps, form_coeff).cells.at(k - 1);
}

using Kind = hystfem::BoundaryLabel::Kind;

// n x n grid on the unit square. Sides in loop order bottom, right, top,
// left get the given labels.
inline hystfem::Mesh grid_square(int n, std::array<hystfem::BoundaryLabel, 4> sides) {
  std::vector<hystfem::Vec2> nodes;
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i) nodes.emplace_back(double(i) / n, double(j) / n);
  const auto id = [n](int i, int j) { return j * (n + 1) + i; };
  std::vector<hystfem::Triangle> tris;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      tris.push_back({{id(i, j), id(i + 1, j), id(i, j + 1)}, 0});
      tris.push_back({{id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)}, 0});
    }
  }
  std::vector<hystfem::BoundaryEdge> edges;
  for (int i = 0; i < n; ++i) {
    edges.push_back({{id(i, 0), id(i + 1, 0)}, sides[0]});
    edges.push_back({{id(n, i), id(n, i + 1)}, sides[1]});
    edges.push_back({{id(n - i, n), id(n - i - 1, n)}, sides[2]});
    edges.push_back({{id(0, n - i), id(0, n - i - 1)}, sides[3]});
  }
  return hystfem::Mesh(std::move(nodes), std::move(tris), std::move(edges));
}

inline constexpr hystfem::BoundaryLabel W1{Kind::Wall, 1}, W2{Kind::Wall, 2}, G1{Kind::Gate, 1}, G2{Kind::Gate, 2};

}  // namespace test
