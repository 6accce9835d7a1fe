#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "hystfem/material.hpp"
#include "hystfem/mesh.hpp"

namespace hystfem {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// One 2-vector per triangle (B and J in T, H in A/m).
using ElementField = std::vector<Vec2>;

/// Wall/gate alternation along the boundary loop. `gate_from_wall[g]` is the
/// wall preceding gate g in counterclockwise order, `gate_to_wall[g]` the one
/// following it (0-based indices for gates g1.. and walls w1..).
struct BoundaryTopology {
  int num_walls = 0;
  int num_gates = 0;
  std::vector<int> gate_from_wall;
  std::vector<int> gate_to_wall;

  /// Requires alternating wall and gate segments with each label appearing
  /// exactly once and contiguous labels w1..wL, g1..gG.
  static BoundaryTopology from_mesh(const Mesh& mesh);
};

/// Per-wall Dirichlet constants realizing the prescribed gate fluxes:
/// flux(g) = c[to(g)] - c[from(g)], gauge c[0] = 0.
std::vector<double> wall_constants(std::span<const double> fluxes, const BoundaryTopology& topology);

/// Continuous P1 field A_z = lifting + free part. Wall nodes carry the wall
/// constant of their wall; every other node is a free coefficient.
struct PotentialField {
  Vector free_coeffs;
  std::vector<double> wall_constants;
};

/// P1 potential / P0 polarization discretization on a fixed mesh: element
/// geometry, the element curl vectors, the free-node numbering, and the
/// boundary topology.
class FeSpace {
 public:
  explicit FeSpace(Mesh mesh);

  const Mesh& mesh() const { return mesh_; }
  const BoundaryTopology& topology() const { return topology_; }
  std::size_t num_elements() const { return mesh_.num_triangles(); }
  std::size_t num_free() const { return num_free_; }
  int num_walls() const { return topology_.num_walls; }
  int num_gates() const { return topology_.num_gates; }

  double area(std::size_t e) const { return area_[e]; }
  /// Curl of the P1 basis function of local node i: (d_y phi_i, -d_x phi_i).
  const std::array<Vec2, 3>& curls(std::size_t e) const { return curl_[e]; }
  const std::array<int, 3>& element_nodes(std::size_t e) const { return mesh_.triangles()[e].nodes; }

  /// Free index of a node, or -1 on a wall.
  int free_index(int node) const { return free_index_[node]; }
  /// Wall index (0-based) of a node, or -1 if free.
  int wall_of(int node) const { return wall_of_[node]; }

  PotentialField zero_field() const;
  double nodal_value(const PotentialField& a, int node) const;
  std::array<double, 3> element_values(const PotentialField& a, std::size_t e) const;
  Vec2 element_curl(const PotentialField& a, std::size_t e) const;

  /// Nodal interpolation of a function; wall constants are taken from the
  /// first node of each wall, so the function must be constant on walls.
  template <class F>
  PotentialField interpolate(F&& f) const {
    PotentialField a = zero_field();
    std::vector<char> set(topology_.num_walls, 0);
    const auto& nodes = mesh_.nodes();
    for (std::size_t n = 0; n < nodes.size(); ++n) {
      const double v = f(nodes[n]);
      if (free_index_[n] >= 0) {
        a.free_coeffs[free_index_[n]] = v;
      } else if (!set[wall_of_[n]]) {
        a.wall_constants[wall_of_[n]] = v;
        set[wall_of_[n]] = 1;
      }
    }
    return a;
  }

 private:
  Mesh mesh_;
  BoundaryTopology topology_;
  std::vector<double> area_;
  std::vector<std::array<Vec2, 3>> curl_;
  std::vector<int> free_index_;
  std::vector<int> wall_of_;
  std::size_t num_free_ = 0;
};

ElementField curl2d(const FeSpace& space, const PotentialField& a);

/// H = nu0 (B - sum_k J_k) per element.
ElementField field_intensity(const FeSpace& space, const ElementField& B,
                             const PolarizationState& state, const MaterialModel& m);

/// 3x3 element matrix area * curl_i^T nu curl_j.
Eigen::Matrix3d element_matrix(const FeSpace& space, std::size_t e, const Mat2& nu);

/// Sparse matrix over free coefficients of the form
/// sum_T int (Curl u) . nu_T (Curl v) dx; wall rows and columns eliminated.
/// Throws if some element tensor is not symmetric positive definite.
SparseMatrix assemble_tangent(const FeSpace& space, std::span<const Mat2> nu_eff);

/// Same form over all nodes (no Dirichlet elimination).
SparseMatrix assemble_tangent_all_nodes(const FeSpace& space, std::span<const Mat2> nu_eff);

/// Per-element source current density j_s [A/m^2]; empty means zero.
using SourceCurrent = std::span<const double>;

/// Negative gradient of the discrete objective with respect to the free
/// potential coefficients: int j_s A' dx - int H . Curl A' dx.
Vector potential_residual(const FeSpace& space, const PotentialField& a, const PolarizationState& state,
                          const MaterialModel& m, SourceCurrent source = {});

/// Per-element, per-cell negative J-gradient density
/// g_k = H - grad U_k(J_k) - chi_k (J_k - J_p,k)/|J_k - J_p,k|_eps.
std::vector<Vec2> polarization_residual(const FeSpace& space, const PotentialField& a,
                                        const PolarizationState& state, const MaterialModel& m);

/// Right-hand side of the reduced Newton system: potential_residual plus
/// int g_eff . Curl A' dx, where g_eff (one per element) comes from
/// eliminating the polarization increments.
Vector assemble_newton_rhs(const FeSpace& space, const PotentialField& a, const PolarizationState& state,
                           const MaterialModel& m, std::span<const Vec2> g_eff, SourceCurrent source = {});

/// Discrete objective (energy per unit depth, J/m):
///   sum_T area [ nu0/2 |B - sum J_k|^2 + sum_k U_k(J_k) + chi_k |J_k - J_p,k|_eps ] - int j_s A.
/// Throws DomainError if a polarization is outside its saturation disk.
double objective_value(const FeSpace& space, const PotentialField& a, const PolarizationState& state,
                       const MaterialModel& m, SourceCurrent source = {});

/// Same, returning +inf instead of throwing outside the domain.
double objective_value_or_inf(const FeSpace& space, const PotentialField& a, const PolarizationState& state,
                              const MaterialModel& m, SourceCurrent source = {});

/// f(a1, s1) - f(a0, s0) for states sharing J_prev and wall constants,
/// summed from per-element differences so that small decreases are
/// resolved well below the rounding level of f itself. +inf if s1 leaves
/// the domain.
double objective_difference(const FeSpace& space, const PotentialField& a1, const PolarizationState& s1,
                            const PotentialField& a0, const PolarizationState& s0, const MaterialModel& m,
                            SourceCurrent source = {});

/// Gate fluxes recomputed as boundary line integrals of B . n over each gate.
std::vector<double> gate_fluxes(const FeSpace& space, const PotentialField& a);

}  // namespace hystfem
