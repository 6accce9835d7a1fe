#include "hystfem/solvers.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "hystfem/errors.hpp"

namespace hystfem {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Mat2 inverse2(const Mat2& a) {
  const double det = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  Mat2 inv;
  inv << a(1, 1), -a(0, 1), -a(1, 0), a(0, 0);
  return inv / det;
}

Mat2 symmetrize(const Mat2& a) { return 0.5 * (a + a.transpose()); }

}  // namespace

void NewtonConfig::validate() const {
  if (!(sigma > 0.0 && sigma < 1.0)) throw ConfigError(fmt::format("newton: sigma must lie in (0, 1), got {}", sigma));
  if (!(q > 0.0 && q < 1.0)) throw ConfigError(fmt::format("newton: q must lie in (0, 1), got {}", q));
  if (!(rel_tol > 0.0)) throw ConfigError(fmt::format("newton: rel_tol must be positive, got {}", rel_tol));
  if (!(residual_cap > 0.0)) throw ConfigError("newton: residual_cap must be positive");
  if (max_iter < 1) throw ConfigError("newton: max_iter must be at least 1");
  if (max_backtracks < 1) throw ConfigError("newton: max_backtracks must be at least 1");
  if (threads < 1) throw ConfigError("newton: threads must be at least 1");
}

void BcdConfig::validate() const {
  if (!(rel_tol > 0.0)) throw ConfigError(fmt::format("bcd: rel_tol must be positive, got {}", rel_tol));
  if (threads < 1) throw ConfigError("bcd: threads must be at least 1");
  if (max_iter < 1) throw ConfigError("bcd: max_iter must be at least 1");
}

bool SolveReport::monotone() const {
  for (std::size_t i = 1; i + 1 < objective.size(); ++i) {
    if (!(objective[i] < objective[i - 1])) return false;
  }
  if (objective.size() >= 2) {
    const double last = objective.back();
    const double prev = objective[objective.size() - 2];
    if (last > prev + 1e-13 * std::abs(prev)) return false;
  }
  return true;
}

OptimalityMetrics optimality_metrics(const FeSpace& space, const PotentialField& a, const PolarizationState& state,
                                     const MaterialModel& m, SourceCurrent source) {
  OptimalityMetrics out;
  const Vector r = potential_residual(space, a, state, m, source);
  Vector scale = Vector::Zero(r.size());
  const std::size_t K = m.size();
  out.kkt_excess = -std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < space.num_elements(); ++e) {
    const Vec2 H = m.nu0 * (space.element_curl(a, e) - state.total(e));
    const auto& nodes = space.element_nodes(e);
    const auto& c = space.curls(e);
    const double load = source.empty() ? 0.0 : std::abs(source[e]) * space.area(e) / 3.0;
    for (int i = 0; i < 3; ++i) {
      const int f = space.free_index(nodes[i]);
      if (f >= 0) scale[f] += space.area(e) * H.norm() * c[i].norm() + load;
    }
    const auto J = state.cells(e);
    const auto Jp = state.prev_cells(e);
    for (std::size_t k = 0; k < K; ++k) {
      const auto& p = m.cells[k];
      const Vec2 reduced = H - energy_gradient(J[k], p);
      const double g = (reduced - detail::pinning_gradient(J[k], Jp[k], p)).norm();
      out.polarization = std::max(out.polarization, g / (H.norm() + p.pinning + p.gain()));
      out.kkt_excess = std::max(out.kkt_excess, reduced.norm() - p.pinning);
    }
  }
  const double r_max = r.size() ? r.cwiseAbs().maxCoeff() : 0.0;
  const double s_max = scale.size() ? scale.maxCoeff() : 0.0;
  out.potential = s_max > 0.0 ? r_max / s_max : r_max;
  return out;
}

LocalTangent local_tangent(const Vec2& B, std::span<const Vec2> J, std::span<const Vec2> J_prev,
                           const MaterialModel& m) {
  const std::size_t K = m.size();
  LocalTangent lt;
  lt.num_cells = K;
  lt.nu0 = m.nu0;
  Vec2 total = Vec2::Zero();
  for (std::size_t k = 0; k < K; ++k) total += J[k];
  const Vec2 H = m.nu0 * (B - total);

  Mat2 S = Mat2::Zero();
  lt.y.setZero();
  for (std::size_t k = 0; k < K; ++k) {
    const auto& p = m.cells[k];
    if (!detail::inside(J[k], p)) {
      throw DomainError(fmt::format("local_tangent: cell {} outside the saturation disk", k));
    }
    const Mat2 D = detail::hessian_unchecked(J[k], p) + detail::pinning_hessian(J[k], J_prev[k], p);
    const double det = D(0, 0) * D(1, 1) - D(0, 1) * D(1, 0);
    if (!(det > 0.0) || !(D(0, 0) > 0.0)) {
      throw ConvergenceError(fmt::format("local_tangent: singular local block in cell {}", k), det);
    }
    lt.d_inv[k] = symmetrize(inverse2(D));
    lt.g[k] = H - detail::gradient_unchecked(J[k], p) - detail::pinning_gradient(J[k], J_prev[k], p);
    S += lt.d_inv[k];
    lt.y += lt.d_inv[k] * lt.g[k];
  }
  lt.schur_inv = symmetrize(inverse2(Mat2::Identity() + m.nu0 * S));
  lt.nu_eff = m.nu0 * lt.schur_inv;
  lt.g_eff = lt.nu_eff * lt.y;
  return lt;
}

void LocalTangent::back_substitute(const Vec2& dB, std::span<Vec2> dJ) const {
  // sum_k dJ_k = (I + nu0 S)^{-1} (y + nu0 S dB), with S dB = sum_k D_k^{-1} dB
  Vec2 s_db = Vec2::Zero();
  for (std::size_t k = 0; k < num_cells; ++k) s_db += d_inv[k] * dB;
  const Vec2 sum = schur_inv * (y + nu0 * s_db);
  const Vec2 h = nu0 * (dB - sum);
  for (std::size_t k = 0; k < num_cells; ++k) dJ[k] = d_inv[k] * (g[k] + h);
}

NewtonSolver::NewtonSolver(const FeSpace& space, const MaterialModel& m, NewtonConfig cfg)
    : space_(space), m_(m), cfg_(cfg), factorization_(cfg.linear) {
  cfg_.validate();
  m_.validate();
  for (const auto& c : m_.cells) {
    if (c.pinning > 0.0 && !(c.eps > 0.0)) {
      throw ConfigError("newton: the regularization eps must be positive for cells with pinning");
    }
  }
}

SolveReport NewtonSolver::solve(PotentialField& a, PolarizationState& state, SourceCurrent source) {
  const auto t0 = Clock::now();
  const std::size_t ne = space_.num_elements();
  const std::size_t K = m_.size();
  if (state.num_elements != ne || state.num_cells != K) {
    throw Error("newton: polarization state does not match mesh/material");
  }

  SolveReport report;
  double f = objective_value(space_, a, state, m_, source);
  const double f0 = f;
  report.objective.push_back(f);

  std::vector<LocalTangent> lt(ne);
  std::vector<Mat2> nu(ne);
  std::vector<Vec2> g_eff(ne);
  std::vector<Vec2> dJ(ne * K);
  PotentialField trial_a = a;
  PolarizationState trial = state;
  PotentialField step_field = space_.zero_field();
  const auto within_cap = [&](const OptimalityMetrics& r) {
    return r.potential <= cfg_.residual_cap && r.polarization <= cfg_.residual_cap;
  };

  // Exact minimization over J at fixed A; returns the (non-positive) change of f.
  const auto relax_polarization = [&]() {
    trial.J = state.J;
    parallel_for(ne, cfg_.threads, [&](std::size_t e) {
      local_polarization_update(space_.element_curl(a, e), trial.prev_cells(e), m_, trial.cells(e), cfg_.local);
    });
    const double dr = objective_difference(space_, a, trial, a, state, m_, source);
    if (!(dr <= 0.0)) return 0.0;
    std::swap(state.J, trial.J);
    return dr;
  };

  // Residual caps met at the current iterate (after relaxing J in joint mode).
  const auto at_optimum = [&]() {
    report.final_metrics = optimality_metrics(space_, a, state, m_, source);
    if (!within_cap(report.final_metrics) && !cfg_.exact_polarization) {
      f += relax_polarization();
      report.objective.back() = f;
      report.final_metrics = optimality_metrics(space_, a, state, m_, source);
    }
    report.converged = within_cap(report.final_metrics);
    return report.converged;
  };

  if (cfg_.exact_polarization) {
    f += relax_polarization();
    report.objective.back() = f;
  }

  for (int it = 1; it <= cfg_.max_iter + 1; ++it) {
    parallel_for(ne, cfg_.threads, [&](std::size_t e) {
      lt[e] = local_tangent(space_.element_curl(a, e), state.cells(e), state.prev_cells(e), m_);
      nu[e] = lt[e].nu_eff;
      g_eff[e] = lt[e].g_eff;
    });
    const Vector r_pot = potential_residual(space_, a, state, m_, source);
    const Vector rhs = assemble_newton_rhs(space_, a, state, m_, g_eff, source);
    factorization_.factorize(assemble_tangent(space_, nu));
    const Vector dA = factorization_.solve(rhs);

    step_field.free_coeffs = dA;
    double slope = -r_pot.dot(dA);
    for (std::size_t e = 0; e < ne; ++e) {
      std::span<Vec2> dj(dJ.data() + e * K, K);
      lt[e].back_substitute(space_.element_curl(step_field, e), dj);
      for (std::size_t k = 0; k < K; ++k) slope -= space_.area(e) * lt[e].g[k].dot(dj[k]);
    }

    if (!(slope < 0.0)) {
      if (at_optimum()) break;
      throw ConvergenceError(fmt::format("newton: direction is not a descent direction (Phi'(0) = {}, scaled residuals {:.3g} / {:.3g})",
                                         slope, report.final_metrics.potential, report.final_metrics.polarization),
                             report.final_metrics.polarization);
    }
    if (it > cfg_.max_iter) break;

    double tau = 1.0;
    double df = std::numeric_limits<double>::infinity();
    int bt = 0;
    bool stalled = false;
    for (;; ++bt) {
      if (bt > cfg_.max_backtracks) {
        // no decrease left to resolve in floating point
        if (at_optimum()) {
          stalled = true;
          break;
        }
        throw ConvergenceError(fmt::format("newton: line search failed after {} backtracks (Phi(0) = {}, Phi'(0) = {})",
                                           cfg_.max_backtracks, f, slope),
                               slope);
      }
      trial_a.free_coeffs = a.free_coeffs + tau * dA;
      trial_a.wall_constants = a.wall_constants;
      for (std::size_t i = 0; i < state.J.size(); ++i) trial.J[i] = state.J[i] + tau * dJ[i];
      if (cfg_.exact_polarization) {
        // reduced objective min_J f(A, J), starting from the linearized update
        parallel_for(ne, cfg_.threads, [&](std::size_t e) {
          const auto J = trial.cells(e);
          const auto J0 = state.cells(e);
          for (std::size_t k = 0; k < K; ++k) {
            if (!detail::inside(J[k], m_.cells[k])) J[k] = J0[k];
          }
          local_polarization_update(space_.element_curl(trial_a, e), trial.prev_cells(e), m_, J, cfg_.local);
        });
      }
      df = objective_difference(space_, trial_a, trial, a, state, m_, source);
      if (df <= cfg_.sigma * tau * slope) break;
      tau *= cfg_.q;
    }
    if (stalled) break;
    report.armijo_slack.push_back(cfg_.sigma * tau * slope - df);
    report.slopes.push_back(slope);
    report.step_sizes.push_back(tau);
    report.backtracks.push_back(bt);

    std::swap(a.free_coeffs, trial_a.free_coeffs);
    std::swap(state.J, trial.J);
    const double ref = cfg_.reference == StopReference::Iterate ? f : f0;
    f += df;
    report.objective.push_back(f);
    report.iterations = it;

    if (-df < cfg_.rel_tol * std::abs(ref)) {
      report.final_metrics = optimality_metrics(space_, a, state, m_, source);
      if (within_cap(report.final_metrics)) {
        report.converged = true;
        break;
      }
    }
  }
  if (report.converged && !cfg_.exact_polarization) {
    // The linearized polarization update is only accurate to the outer
    // tolerance; the exact minimization over J at fixed A can only lower f.
    report.objective.back() += relax_polarization();
    report.final_metrics = optimality_metrics(space_, a, state, m_, source);
  }
  report.wall_time = seconds_since(t0);
  if (!report.converged) {
    report.final_metrics = optimality_metrics(space_, a, state, m_, source);
    throw ConvergenceError(fmt::format("newton: no convergence in {} iterations (objective {}, residuals {} / {})",
                                       cfg_.max_iter, f, report.final_metrics.potential,
                                       report.final_metrics.polarization),
                           report.final_metrics.polarization);
  }
  return report;
}

BcdSolver::BcdSolver(const FeSpace& space, const MaterialModel& m, BcdConfig cfg)
    : space_(space), m_(m), cfg_(cfg), factorization_(cfg.linear) {
  cfg_.validate();
  m_.validate();
  const std::vector<Mat2> nu(space_.num_elements(), m_.nu0 * Mat2::Identity());
  factorization_.factorize(assemble_tangent(space_, nu));
}

SolveReport BcdSolver::solve(PotentialField& a, PolarizationState& state, SourceCurrent source) {
  const auto t0 = Clock::now();
  const std::size_t ne = space_.num_elements();
  const std::size_t K = m_.size();
  if (state.num_elements != ne || state.num_cells != K) {
    throw Error("bcd: polarization state does not match mesh/material");
  }

  SolveReport report;
  double f = objective_value(space_, a, state, m_, source);
  const double f0 = f;
  report.objective.push_back(f);
  PotentialField prev_a = a;
  PolarizationState prev = state;

  for (int it = 1; it <= cfg_.max_iter; ++it) {
    // Potential block: exact minimization with the fixed nu0 stiffness.
    prev_a.free_coeffs = a.free_coeffs;
    const Vector r = potential_residual(space_, a, state, m_, source);
    a.free_coeffs += factorization_.solve(r);
    const double d_half = objective_difference(space_, a, state, prev_a, state, m_, source);

    // Polarization block: independent element-local minimizations.
    prev.J = state.J;
    parallel_for(ne, cfg_.threads, [&](std::size_t e) {
      local_polarization_update(space_.element_curl(a, e), state.prev_cells(e), m_, state.cells(e), cfg_.local);
    });
    const double d_full = objective_difference(space_, a, state, a, prev, m_, source);
    report.max_half_step_increase = std::max({report.max_half_step_increase, d_half, d_full});

    const double decrease = -(d_half + d_full);
    const double ref = cfg_.reference == StopReference::Iterate ? f : f0;
    f -= decrease;
    report.objective.push_back(f);
    report.iterations = it;
    if (decrease < cfg_.rel_tol * std::abs(ref)) {
      if (cfg_.residual_cap < 0.0) {
        report.converged = true;
        break;
      }
      report.final_metrics = optimality_metrics(space_, a, state, m_, source);
      if (report.final_metrics.potential <= cfg_.residual_cap) {
        report.converged = true;
        break;
      }
    }
  }
  report.final_metrics = optimality_metrics(space_, a, state, m_, source);
  report.wall_time = seconds_since(t0);
  if (!report.converged) {
    throw ConvergenceError(fmt::format("bcd: no convergence in {} iterations (objective {})", cfg_.max_iter, f),
                           report.final_metrics.potential);
  }
  return report;
}

WallLifting::WallLifting(const FeSpace& space) {
  const std::vector<Mat2> unit(space.num_elements(), Mat2::Identity());
  Factorization laplace;
  if (space.num_free() > 0) laplace.factorize(assemble_tangent(space, unit));
  for (int w = 0; w < space.num_walls(); ++w) {
    PotentialField a = space.zero_field();
    a.wall_constants[w] = 1.0;
    Vector rhs = Vector::Zero(static_cast<Eigen::Index>(space.num_free()));
    for (std::size_t e = 0; e < space.num_elements(); ++e) {
      const Vec2 B = space.element_curl(a, e);
      if (B.squaredNorm() == 0.0) continue;
      const auto& nodes = space.element_nodes(e);
      const auto& c = space.curls(e);
      for (int i = 0; i < 3; ++i) {
        const int f = space.free_index(nodes[i]);
        if (f >= 0) rhs[f] -= space.area(e) * B.dot(c[i]);
      }
    }
    shapes_.push_back(space.num_free() ? laplace.solve(rhs) : rhs);
  }
}

void WallLifting::apply(PotentialField& a, std::span<const double> walls) const {
  if (walls.size() != shapes_.size() || a.wall_constants.size() != shapes_.size()) {
    throw Error(fmt::format("lifting: expected {} wall constants, got {}", shapes_.size(), walls.size()));
  }
  for (std::size_t w = 0; w < shapes_.size(); ++w) {
    const double d = walls[w] - a.wall_constants[w];
    if (d != 0.0) a.free_coeffs += d * shapes_[w];
    a.wall_constants[w] = walls[w];
  }
}

SolveResult newton_solve(const FeSpace& space, PotentialField init_a, PolarizationState init_state,
                         const MaterialModel& m, const NewtonConfig& cfg, std::span<const double> walls,
                         SourceCurrent source) {
  init_a.wall_constants.assign(walls.begin(), walls.end());
  NewtonSolver solver(space, m, cfg);
  SolveResult out{std::move(init_a), std::move(init_state), {}};
  out.report = solver.solve(out.a, out.state, source);
  return out;
}

SolveResult bcd_solve(const FeSpace& space, PotentialField init_a, PolarizationState init_state,
                      const MaterialModel& m, const BcdConfig& cfg, std::span<const double> walls,
                      SourceCurrent source) {
  init_a.wall_constants.assign(walls.begin(), walls.end());
  BcdSolver solver(space, m, cfg);
  SolveResult out{std::move(init_a), std::move(init_state), {}};
  out.report = solver.solve(out.a, out.state, source);
  return out;
}

}  // namespace hystfem
