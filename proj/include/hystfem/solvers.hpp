#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "hystfem/fem.hpp"
#include "hystfem/linsolve.hpp"
#include "hystfem/material.hpp"

namespace hystfem {

/// Reference value f_0 of the stopping rule "objective decrease < rel_tol f_0":
/// the objective before the current iteration, or at the start of the step.
enum class StopReference { Iterate, StepStart };

struct NewtonConfig {
  double sigma = 0.1;        // Armijo slope fraction
  double q = 0.5;            // backtracking factor
  double rel_tol = 1e-6;     // stop when the objective decrease is below rel_tol * f0
  double residual_cap = 1e-6;  // ... and the scaled first-order residuals are below this
  StopReference reference = StopReference::Iterate;
  int max_iter = 100;
  int max_backtracks = 60;
  int threads = 1;
  LinearSolverKind linear = LinearSolverKind::Direct;
  LocalSolveOptions local;
  /// Line search on the reduced objective min_J f(A, J): the local
  /// polarization problems are solved exactly at every trial potential.
  /// Its energy density has no pole, which keeps the steps long deep in
  /// saturation.
  bool exact_polarization = false;

  void validate() const;
};

struct BcdConfig {
  double rel_tol = 1e-6;
  /// Scaled potential residual required on top of the decrease rule; a
  /// negative value disables the check.
  double residual_cap = -1.0;
  StopReference reference = StopReference::Iterate;
  int max_iter = 100000;
  int threads = 1;
  LinearSolverKind linear = LinearSolverKind::Direct;
  LocalSolveOptions local;

  void validate() const;
};

/// Scaled residuals of the discrete optimality system.
struct OptimalityMetrics {
  /// max_i |r_i| / max_i sum_T area |H_T| |Curl phi_i|, r the potential residual.
  double potential = 0.0;
  /// max_{T,k} |g_Tk| / (|H_T| + chi_k + c_k A_s / 2).
  double polarization = 0.0;
  /// max_{T,k} |H_T - grad U_k(J_Tk)| - chi_k [A/m]; <= 0 at an exact solution.
  double kkt_excess = 0.0;
};

OptimalityMetrics optimality_metrics(const FeSpace& space, const PotentialField& a,
                                     const PolarizationState& state, const MaterialModel& m,
                                     SourceCurrent source = {});

struct SolveReport {
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective;      // f at the start and after every iteration
  std::vector<double> step_sizes;     // Newton only
  std::vector<int> backtracks;        // Newton only
  std::vector<double> armijo_slack;   // Phi(0) + sigma tau Phi'(0) - Phi(tau) >= 0
  std::vector<double> slopes;         // Phi'(0) < 0
  double max_half_step_increase = 0.0;  // BCD: largest objective increase over a half-step
  OptimalityMetrics final_metrics;
  double wall_time = 0.0;  // s

  /// Objective strictly decreasing, except possibly at the final iterate
  /// where the decrease may drop below rounding.
  bool monotone() const;
};

/// Element-local Newton data after eliminating the polarization increments:
///   nu_eff = nu0 (I + nu0 S)^{-1},  S = sum_k D_k^{-1},
///   g_eff  = nu_eff sum_k D_k^{-1} g_k,
/// with D_k = Hess U_k + chi_k-curvature and g_k the polarization residual.
/// For one cell this is nu0 (I - nu0 nu^{-1}) with nu = nu0 I + D.
struct LocalTangent {
  Mat2 nu_eff;
  Vec2 g_eff;
  std::size_t num_cells = 0;
  double nu0 = kNu0;
  std::array<Mat2, kMaxCells> d_inv;
  std::array<Vec2, kMaxCells> g;
  Mat2 schur_inv;  // (I + nu0 S)^{-1}
  Vec2 y;          // sum_k D_k^{-1} g_k

  /// Polarization increments for a given curl increment dB.
  void back_substitute(const Vec2& dB, std::span<Vec2> dJ) const;
};

LocalTangent local_tangent(const Vec2& B, std::span<const Vec2> J, std::span<const Vec2> J_prev,
                           const MaterialModel& m);

class NewtonSolver {
 public:
  NewtonSolver(const FeSpace& space, const MaterialModel& m, NewtonConfig cfg);

  /// Minimizes from (a, state.J) in place; wall constants of `a` are kept.
  SolveReport solve(PotentialField& a, PolarizationState& state, SourceCurrent source = {});

 private:
  const FeSpace& space_;
  const MaterialModel& m_;
  NewtonConfig cfg_;
  Factorization factorization_;
};

class BcdSolver {
 public:
  /// Factorizes the constant nu0 stiffness once; it is reused for every
  /// iteration and every subsequent call.
  BcdSolver(const FeSpace& space, const MaterialModel& m, BcdConfig cfg);

  SolveReport solve(PotentialField& a, PolarizationState& state, SourceCurrent source = {});
  const Factorization& factorization() const { return factorization_; }

 private:
  const FeSpace& space_;
  const MaterialModel& m_;
  BcdConfig cfg_;
  Factorization factorization_;
};

/// Discrete harmonic extension of the wall constants. Moving the walls
/// through `apply` shifts the free coefficients by the extension of the wall
/// increments, so the field change of a load step is spread over the domain
/// instead of being concentrated in the elements touching the walls.
class WallLifting {
 public:
  explicit WallLifting(const FeSpace& space);

  void apply(PotentialField& a, std::span<const double> walls) const;
  /// Extension of the unit constant on wall l (0-based).
  const Vector& shape(int wall) const { return shapes_[wall]; }

 private:
  std::vector<Vector> shapes_;
};

struct SolveResult {
  PotentialField a;
  PolarizationState state;
  SolveReport report;
};

/// One load step: walls are set to `walls`, then the joint minimization runs
/// from the given initial iterate.
SolveResult newton_solve(const FeSpace& space, PotentialField init_a, PolarizationState init_state,
                         const MaterialModel& m, const NewtonConfig& cfg, std::span<const double> walls,
                         SourceCurrent source = {});
SolveResult bcd_solve(const FeSpace& space, PotentialField init_a, PolarizationState init_state,
                      const MaterialModel& m, const BcdConfig& cfg, std::span<const double> walls,
                      SourceCurrent source = {});

/// Runs fn(i) for i in [0, n) on up to `threads` threads (contiguous chunks).
template <class F>
void parallel_for(std::size_t n, int threads, F&& fn);

}  // namespace hystfem

#include "hystfem/detail/parallel.hpp"
