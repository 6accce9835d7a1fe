#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "hystfem/fem.hpp"
#include "hystfem/material.hpp"

/// Reference computations that share no code with the solver paths: the
/// energy is re-implemented from its closed form, derivatives come from
/// differencing, and minimizers from exhaustive search.
namespace hystfem::oracle {

using ScalarFn = std::function<double(const Eigen::VectorXd&)>;
using VectorFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Central differences, O(h^2).
Eigen::VectorXd fd_gradient(const ScalarFn& f, const Eigen::VectorXd& x, double h);
/// Column j holds the central difference of f along e_j.
Eigen::MatrixXd fd_jacobian(const VectorFn& f, const Eigen::VectorXd& x, double h);

/// Closed-form cell energy written out directly (no shared kernels).
double reference_energy(const Vec2& J, const CellParams& p);

/// Root of gain * tan(pi r / (2 J_s)) = h by bisection.
double anhysteretic_bisection(double h, const CellParams& p);

/// Minimizer of U(J) - H.J + chi |J - J_p|_eps by a grid over the
/// saturation disk with `grid` points per axis, followed by repeated
/// zooming onto the best grid cell.
Vec2 brute_force_cell_min(const Vec2& H, const Vec2& J_prev, const CellParams& p, int grid = 401);

/// Joint K-cell minimizer of sum_k U_k + chi_k |J_k - J_p,k|_eps +
/// (nu0/2)|B - sum_k J_k|^2: coarse grid on the total polarization followed
/// by a pattern search with shrinking steps.
std::vector<Vec2> brute_force_joint_min(const Vec2& B, std::span<const Vec2> J_prev, const MaterialModel& m);

/// Exact scalar play operator (eps = 0, one cell, colinear drive) starting
/// from polarization J0: J stays while |H - u'(J)| <= chi, otherwise
/// u'(J) = H - chi or H + chi.
std::vector<double> scalar_play_reference(std::span<const double> H, const CellParams& p, double J0 = 0.0);

struct DiscreteMinimum {
  Eigen::VectorXd free_coeffs;
  std::vector<Vec2> J;  // element-major
  double objective = 0.0;
  double gradient_norm = 0.0;  // scaled, at the returned point
  int iterations = 0;
};

/// Minimizer of the discrete objective over all free coefficients and
/// polarizations, for tiny meshes. The objective is evaluated in 50-digit
/// arithmetic from nodal coordinates (element gradients from the affine
/// interpolation system), and a damped Newton method runs on
/// finite-difference derivatives of it.
DiscreteMinimum brute_force_discrete_min(const FeSpace& space, const MaterialModel& m,
                                         std::span<const Vec2> J_prev, std::span<const double> walls,
                                         SourceCurrent source = {});

}  // namespace hystfem::oracle
