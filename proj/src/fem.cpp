#include "hystfem/fem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <fmt/format.h>

#include "hystfem/errors.hpp"

namespace hystfem {

BoundaryTopology BoundaryTopology::from_mesh(const Mesh& mesh) {
  const auto& loop = mesh.boundary_loop();
  BoundaryTopology topo;
  topo.num_walls = mesh.num_walls();
  topo.num_gates = mesh.num_gates();
  if (topo.num_walls == 0) throw FluxBalanceError("boundary has no flux wall");

  const std::size_t n = loop.size();
  std::vector<int> wall_seen(topo.num_walls, 0);
  std::vector<int> gate_seen(topo.num_gates, 0);
  topo.gate_from_wall.assign(topo.num_gates, -1);
  topo.gate_to_wall.assign(topo.num_gates, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& seg = loop[i];
    if (n > 1 && seg.label.kind == loop[(i + 1) % n].label.kind) {
      throw FluxBalanceError(fmt::format("boundary segments {} and {} are adjacent; walls and gates must alternate",
                                         seg.label.str(), loop[(i + 1) % n].label.str()));
    }
    if (seg.label.is_wall()) {
      ++wall_seen[seg.label.index - 1];
    } else {
      const int g = seg.label.index - 1;
      ++gate_seen[g];
      topo.gate_from_wall[g] = loop[(i + n - 1) % n].label.index - 1;
      topo.gate_to_wall[g] = loop[(i + 1) % n].label.index - 1;
    }
  }
  for (int w = 0; w < topo.num_walls; ++w) {
    if (wall_seen[w] != 1) {
      throw FluxBalanceError(fmt::format("wall w{} appears {} times along the boundary (expected once)", w + 1, wall_seen[w]));
    }
  }
  for (int g = 0; g < topo.num_gates; ++g) {
    if (gate_seen[g] != 1) {
      throw FluxBalanceError(fmt::format("gate g{} appears {} times along the boundary (expected once)", g + 1, gate_seen[g]));
    }
  }
  return topo;
}

std::vector<double> wall_constants(std::span<const double> fluxes, const BoundaryTopology& topo) {
  if (static_cast<int>(fluxes.size()) != topo.num_gates) {
    throw FluxBalanceError(fmt::format("expected {} gate fluxes, got {}", topo.num_gates, fluxes.size()));
  }
  double sum = 0.0;
  double scale = 0.0;
  for (double f : fluxes) {
    sum += f;
    scale = std::max(scale, std::abs(f));
  }
  if (std::abs(sum) > 1e-12 * scale) {
    throw FluxBalanceError(fmt::format("flux balance violated: sum of gate fluxes is {} Wb (must be 0)", sum));
  }

  std::vector<double> c(topo.num_walls, 0.0);
  std::vector<char> known(topo.num_walls, 0);
  known[0] = 1;
  for (bool progress = true; progress;) {
    progress = false;
    for (int g = 0; g < topo.num_gates; ++g) {
      const int from = topo.gate_from_wall[g];
      const int to = topo.gate_to_wall[g];
      if (known[from] && !known[to]) {
        c[to] = c[from] + fluxes[g];
        known[to] = progress = true;
      } else if (known[to] && !known[from]) {
        c[from] = c[to] - fluxes[g];
        known[from] = progress = true;
      }
    }
  }
  if (std::find(known.begin(), known.end(), 0) != known.end()) {
    throw FluxBalanceError("boundary topology leaves a wall unconnected to w1");
  }
  return c;
}

FeSpace::FeSpace(Mesh mesh) : mesh_(std::move(mesh)), topology_(BoundaryTopology::from_mesh(mesh_)) {
  const std::size_t ne = mesh_.num_triangles();
  area_.resize(ne);
  curl_.resize(ne);
  for (std::size_t e = 0; e < ne; ++e) {
    const auto geo = element_geometry(mesh_, e);
    area_[e] = geo.area;
    for (int i = 0; i < 3; ++i) {
      curl_[e][i] = Vec2(geo.basis_gradients[i].y(), -geo.basis_gradients[i].x());
    }
  }

  wall_of_.assign(mesh_.num_nodes(), -1);
  for (const auto& edge : mesh_.boundary_edges()) {
    if (!edge.label.is_wall()) continue;
    for (int node : edge.nodes) {
      const int w = edge.label.index - 1;
      if (wall_of_[node] >= 0 && wall_of_[node] != w) {
        throw MeshError(fmt::format("node {} lies on two walls (w{} and w{})", node, wall_of_[node] + 1, w + 1));
      }
      wall_of_[node] = w;
    }
  }
  free_index_.assign(mesh_.num_nodes(), -1);
  num_free_ = 0;
  for (std::size_t n = 0; n < mesh_.num_nodes(); ++n) {
    if (wall_of_[n] < 0) free_index_[n] = static_cast<int>(num_free_++);
  }
}

PotentialField FeSpace::zero_field() const {
  return PotentialField{Vector::Zero(static_cast<Eigen::Index>(num_free_)),
                        std::vector<double>(topology_.num_walls, 0.0)};
}

double FeSpace::nodal_value(const PotentialField& a, int node) const {
  const int f = free_index_[node];
  return f >= 0 ? a.free_coeffs[f] : a.wall_constants[wall_of_[node]];
}

std::array<double, 3> FeSpace::element_values(const PotentialField& a, std::size_t e) const {
  const auto& n = element_nodes(e);
  return {nodal_value(a, n[0]), nodal_value(a, n[1]), nodal_value(a, n[2])};
}

Vec2 FeSpace::element_curl(const PotentialField& a, std::size_t e) const {
  const auto v = element_values(a, e);
  const auto& c = curl_[e];
  return v[0] * c[0] + v[1] * c[1] + v[2] * c[2];
}

ElementField curl2d(const FeSpace& space, const PotentialField& a) {
  ElementField B(space.num_elements());
  for (std::size_t e = 0; e < B.size(); ++e) B[e] = space.element_curl(a, e);
  return B;
}

ElementField field_intensity(const FeSpace& space, const ElementField& B, const PolarizationState& state,
                             const MaterialModel& m) {
  ElementField H(space.num_elements());
  for (std::size_t e = 0; e < H.size(); ++e) H[e] = m.nu0 * (B[e] - state.total(e));
  return H;
}

Eigen::Matrix3d element_matrix(const FeSpace& space, std::size_t e, const Mat2& nu) {
  const auto& c = space.curls(e);
  Eigen::Matrix3d k;
  for (int i = 0; i < 3; ++i) {
    const Vec2 nc = space.area(e) * (nu * c[i]);
    for (int j = i; j < 3; ++j) k(i, j) = k(j, i) = nc.dot(c[j]);
  }
  return k;
}

namespace {

void check_spd(const Mat2& nu, std::size_t e) {
  const double scale = std::abs(nu(0, 0)) + std::abs(nu(1, 1));
  const double asym = std::abs(nu(0, 1) - nu(1, 0));
  const double det = nu(0, 0) * nu(1, 1) - nu(0, 1) * nu(1, 0);
  if (!(asym <= 1e-12 * scale) || !(nu(0, 0) > 0.0) || !(det > 0.0)) {
    throw LinearSolverError(fmt::format("element {}: reluctivity tensor [[{}, {}], [{}, {}]] is not symmetric positive definite",
                                        e, nu(0, 0), nu(0, 1), nu(1, 0), nu(1, 1)));
  }
}

template <class IndexOf>
SparseMatrix assemble(const FeSpace& space, std::span<const Mat2> nu_eff, std::size_t n, IndexOf index_of) {
  if (nu_eff.size() != space.num_elements()) {
    throw Error(fmt::format("assemble_tangent: {} tensors for {} elements", nu_eff.size(), space.num_elements()));
  }
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(9 * space.num_elements());
  for (std::size_t e = 0; e < space.num_elements(); ++e) {
    check_spd(nu_eff[e], e);
    const Eigen::Matrix3d ke = element_matrix(space, e, nu_eff[e]);
    const auto& nodes = space.element_nodes(e);
    for (int i = 0; i < 3; ++i) {
      const int gi = index_of(nodes[i]);
      if (gi < 0) continue;
      for (int j = 0; j < 3; ++j) {
        const int gj = index_of(nodes[j]);
        if (gj >= 0) triplets.emplace_back(gi, gj, ke(i, j));
      }
    }
  }
  SparseMatrix K(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  K.setFromTriplets(triplets.begin(), triplets.end());
  return K;
}

}  // namespace

SparseMatrix assemble_tangent(const FeSpace& space, std::span<const Mat2> nu_eff) {
  return assemble(space, nu_eff, space.num_free(), [&](int node) { return space.free_index(node); });
}

SparseMatrix assemble_tangent_all_nodes(const FeSpace& space, std::span<const Mat2> nu_eff) {
  return assemble(space, nu_eff, space.mesh().num_nodes(), [](int node) { return node; });
}

Vector potential_residual(const FeSpace& space, const PotentialField& a, const PolarizationState& state,
                          const MaterialModel& m, SourceCurrent source) {
  Vector r = Vector::Zero(static_cast<Eigen::Index>(space.num_free()));
  for (std::size_t e = 0; e < space.num_elements(); ++e) {
    const Vec2 H = m.nu0 * (space.element_curl(a, e) - state.total(e));
    const double load = source.empty() ? 0.0 : source[e] * space.area(e) / 3.0;
    const auto& nodes = space.element_nodes(e);
    const auto& c = space.curls(e);
    for (int i = 0; i < 3; ++i) {
      const int f = space.free_index(nodes[i]);
      if (f >= 0) r[f] += load - space.area(e) * H.dot(c[i]);
    }
  }
  return r;
}

std::vector<Vec2> polarization_residual(const FeSpace& space, const PotentialField& a,
                                        const PolarizationState& state, const MaterialModel& m) {
  const std::size_t K = m.size();
  std::vector<Vec2> g(space.num_elements() * K);
  for (std::size_t e = 0; e < space.num_elements(); ++e) {
    const Vec2 H = m.nu0 * (space.element_curl(a, e) - state.total(e));
    const auto J = state.cells(e);
    const auto Jp = state.prev_cells(e);
    for (std::size_t k = 0; k < K; ++k) {
      const auto& p = m.cells[k];
      g[e * K + k] = H - energy_gradient(J[k], p) - detail::pinning_gradient(J[k], Jp[k], p);
    }
  }
  return g;
}

Vector assemble_newton_rhs(const FeSpace& space, const PotentialField& a, const PolarizationState& state,
                           const MaterialModel& m, std::span<const Vec2> g_eff, SourceCurrent source) {
  if (g_eff.size() != space.num_elements()) {
    throw Error(fmt::format("assemble_newton_rhs: {} effective residuals for {} elements", g_eff.size(),
                            space.num_elements()));
  }
  if (state.num_elements != space.num_elements() || state.num_cells != m.size()) {
    throw Error("assemble_newton_rhs: polarization state does not match mesh/material");
  }
  Vector r = potential_residual(space, a, state, m, source);
  for (std::size_t e = 0; e < space.num_elements(); ++e) {
    const auto& nodes = space.element_nodes(e);
    const auto& c = space.curls(e);
    for (int i = 0; i < 3; ++i) {
      const int f = space.free_index(nodes[i]);
      if (f >= 0) r[f] += space.area(e) * g_eff[e].dot(c[i]);
    }
  }
  return r;
}

namespace {

template <bool Throw>
double objective_impl(const FeSpace& space, const PotentialField& a, const PolarizationState& state,
                      const MaterialModel& m, SourceCurrent source) {
  const std::size_t K = m.size();
  double f = 0.0;
  for (std::size_t e = 0; e < space.num_elements(); ++e) {
    const Vec2 B = space.element_curl(a, e);
    const auto J = state.cells(e);
    const auto Jp = state.prev_cells(e);
    Vec2 total = Vec2::Zero();
    double density = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const auto& p = m.cells[k];
      if (!detail::inside(J[k], p)) {
        if constexpr (Throw) {
          throw DomainError(fmt::format("element {} cell {}: |J| = {} >= J_s = {}", e, k, J[k].norm(), p.saturation));
        } else {
          return std::numeric_limits<double>::infinity();
        }
      }
      density += detail::energy_unchecked(J[k], p) + detail::pinning_value(J[k], Jp[k], p);
      total += J[k];
    }
    density += 0.5 * m.nu0 * (B - total).squaredNorm();
    f += space.area(e) * density;
    if (!source.empty()) {
      const auto v = space.element_values(a, e);
      f -= source[e] * space.area(e) * (v[0] + v[1] + v[2]) / 3.0;
    }
  }
  return f;
}

}  // namespace

double objective_value(const FeSpace& space, const PotentialField& a, const PolarizationState& state,
                       const MaterialModel& m, SourceCurrent source) {
  return objective_impl<true>(space, a, state, m, source);
}

double objective_value_or_inf(const FeSpace& space, const PotentialField& a, const PolarizationState& state,
                              const MaterialModel& m, SourceCurrent source) {
  return objective_impl<false>(space, a, state, m, source);
}

double objective_difference(const FeSpace& space, const PotentialField& a1, const PolarizationState& s1,
                            const PotentialField& a0, const PolarizationState& s0, const MaterialModel& m,
                            SourceCurrent source) {
  const std::size_t K = m.size();
  double df = 0.0;
  for (std::size_t e = 0; e < space.num_elements(); ++e) {
    const auto v1 = space.element_values(a1, e);
    const auto v0 = space.element_values(a0, e);
    const auto& c = space.curls(e);
    Vec2 dB = Vec2::Zero();
    for (int i = 0; i < 3; ++i) dB += (v1[i] - v0[i]) * c[i];
    const Vec2 B0 = space.element_curl(a0, e);
    const auto J1 = s1.cells(e);
    const auto J0 = s0.cells(e);
    const auto Jp = s0.prev_cells(e);
    Vec2 b0 = B0;
    Vec2 db = dB;
    double density = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const auto& p = m.cells[k];
      if (!detail::inside(J1[k], p)) return std::numeric_limits<double>::infinity();
      density += detail::energy_difference(J1[k], J0[k], p) + detail::pinning_difference(J1[k], J0[k], Jp[k], p);
      b0 -= J0[k];
      db -= J1[k] - J0[k];
    }
    density += 0.5 * m.nu0 * db.dot(2.0 * b0 + db);
    df += space.area(e) * density;
    if (!source.empty()) {
      df -= source[e] * space.area(e) * ((v1[0] - v0[0]) + (v1[1] - v0[1]) + (v1[2] - v0[2])) / 3.0;
    }
  }
  return df;
}

std::vector<double> gate_fluxes(const FeSpace& space, const PotentialField& a) {
  const Mesh& mesh = space.mesh();
  std::map<std::pair<int, int>, std::size_t> owner;  // oriented edge -> triangle
  for (std::size_t e = 0; e < mesh.num_triangles(); ++e) {
    const auto& n = mesh.triangles()[e].nodes;
    for (int i = 0; i < 3; ++i) owner[{n[i], n[(i + 1) % 3]}] = e;
  }
  std::vector<double> flux(space.num_gates(), 0.0);
  for (const auto& seg : mesh.boundary_loop()) {
    if (!seg.label.is_gate()) continue;
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < seg.nodes.size(); ++i) {
      const int from = seg.nodes[i];
      const int to = seg.nodes[i + 1];
      const Vec2 t = mesh.nodes()[to] - mesh.nodes()[from];
      const Vec2 n_len(t.y(), -t.x());  // outward normal times edge length
      sum += space.element_curl(a, owner.at({from, to})).dot(n_len);
    }
    flux[seg.label.index - 1] = sum;
  }
  return flux;
}

}  // namespace hystfem
