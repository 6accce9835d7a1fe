#pragma once

#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "hystfem/mesh.hpp"

namespace hystfem {

inline constexpr double kMu0 = 4e-7 * std::numbers::pi;  // H/m
inline constexpr double kNu0 = 1.0 / kMu0;               // m/H
inline constexpr std::size_t kMaxCells = 16;

/// One pinning cell of the energy-based hysteresis model.
///
/// Internal energy U(J) = -(c A_s J_s / pi) log cos(pi |J| / (2 J_s)) with
/// c = form_coeff, defined on the open disk |J| < J_s.
struct CellParams {
  double field_scale = 65.0;  // A_s [A/m]
  double saturation = 1.0;    // J_s [T]
  double pinning = 0.0;       // chi [A/m]
  double eps = 1e-10;         // regularization of |J - J_p| [T^2]
  int form_coeff = 2;

  void validate() const;
  /// Slope scale of the radial profile: u'(r) = gain() * tan(pi r / (2 J_s)).
  double gain() const { return 0.5 * form_coeff * field_scale; }
};

struct MaterialModel {
  std::vector<CellParams> cells;
  double nu0 = kNu0;

  void validate() const;
  std::size_t size() const { return cells.size(); }
  double max_pinning() const;
  double total_saturation() const;
};

/// Five-cell material data (A_s = 65 A/m).
MaterialModel five_cell_material(double eps = 1e-10, int form_coeff = 2);

/// Per-element, per-cell partial polarizations of the current iterate (`J`)
/// and of the previous load step (`J_prev`). Element-major storage.
struct PolarizationState {
  std::size_t num_elements = 0;
  std::size_t num_cells = 0;
  std::vector<Vec2> J;
  std::vector<Vec2> J_prev;

  PolarizationState() = default;
  PolarizationState(std::size_t elements, std::size_t cells);

  std::span<Vec2> cells(std::size_t e) { return {J.data() + e * num_cells, num_cells}; }
  std::span<const Vec2> cells(std::size_t e) const { return {J.data() + e * num_cells, num_cells}; }
  std::span<const Vec2> prev_cells(std::size_t e) const {
    return {J_prev.data() + e * num_cells, num_cells};
  }
  Vec2 total(std::size_t e) const;
  /// J_prev <- J (hand-off to the next load step).
  void advance() { J_prev = J; }
};

double reg_norm(const Vec2& x, double eps);

double energy_density(const Vec2& J, const CellParams& p);
Vec2 energy_gradient(const Vec2& J, const CellParams& p);
Mat2 energy_hessian(const Vec2& J, const CellParams& p);

/// Radial profile derivative u'(r) and its inverse (the anhysteretic curve).
double radial_slope(double r, const CellParams& p);
double anhysteretic_radius(double h, const CellParams& p);

struct LocalSolveOptions {
  double rel_tol = 1e-12;  // residual tolerance relative to |H| + chi + A_s
  int max_iter = 200;
};

/// Minimizer of U(J) - <H, J> + chi |J - J_p|_eps over the saturation disk.
/// eps = 0 is handled exactly: J = J_p whenever |H - grad U(J_p)| <= chi.
Vec2 cell_update_H(const Vec2& H, const Vec2& J_prev, const CellParams& p,
                   const LocalSolveOptions& opts = {});

struct LocalSolveStats {
  int iterations = 0;
  double residual = 0.0;  // max_k |H - grad U_k - chi_k v_k| [A/m]
};

/// Joint minimizer over (J_1..J_K) of
///   sum_k U_k(J_k) + chi_k |J_k - J_p,k|_eps + (nu0/2) |B - sum_k J_k|^2.
/// `J` holds the initial guess on entry and the minimizer on exit.
LocalSolveStats local_polarization_update(const Vec2& B, std::span<const Vec2> J_prev,
                                          const MaterialModel& m, std::span<Vec2> J,
                                          const LocalSolveOptions& opts = {});

/// Convenience overload starting from J = J_prev.
std::vector<Vec2> local_polarization_update(const Vec2& B, std::span<const Vec2> J_prev,
                                            const MaterialModel& m);

/// |H - grad U(J)| - chi; non-positive at a minimizer of the cell problem.
double dissipation_residual(const Vec2& H, const Vec2& J, const CellParams& p);

/// (1/tau) sum_k chi_k |J_k - J_prev,k| [W/m^3], unregularized.
double loss_density(std::span<const Vec2> J, std::span<const Vec2> J_prev,
                    const MaterialModel& m, double tau);

namespace detail {

/// Unchecked kernels for the inner loops; they return +inf / garbage outside
/// the saturation disk, callers test `inside()` first.
inline bool inside(const Vec2& J, const CellParams& p) { return J.norm() < p.saturation; }
double energy_unchecked(const Vec2& J, const CellParams& p);
Vec2 gradient_unchecked(const Vec2& J, const CellParams& p);
Mat2 hessian_unchecked(const Vec2& J, const CellParams& p);

/// Cell objective pieces around J_p: value, gradient and Hessian of
/// chi |J - J_p|_eps. For eps = 0 at J = J_p the gradient is zero and the
/// Hessian is undefined (returned as chi / sqrt(tiny) * I).
double pinning_value(const Vec2& J, const Vec2& J_prev, const CellParams& p);
Vec2 pinning_gradient(const Vec2& J, const Vec2& J_prev, const CellParams& p);
Mat2 pinning_hessian(const Vec2& J, const Vec2& J_prev, const CellParams& p);

/// U(J1) - U(J0) and the pinning-term difference, evaluated without
/// cancellation between the two values.
double energy_difference(const Vec2& J1, const Vec2& J0, const CellParams& p);
double pinning_difference(const Vec2& J1, const Vec2& J0, const Vec2& J_prev, const CellParams& p);

}  // namespace detail

}  // namespace hystfem
