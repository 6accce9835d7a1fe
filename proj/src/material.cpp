#include "hystfem/material.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "hystfem/errors.hpp"

namespace hystfem {

namespace {

constexpr double kPi = std::numbers::pi;

// Armijo constants for the element-local Newton iterations.
constexpr double kLocalArmijo = 1e-4;
constexpr int kLocalBacktracks = 60;
constexpr int kPrimalIterations = 40;

void require_inside(const Vec2& J, const CellParams& p, const char* what) {
  if (!(J.norm() < p.saturation)) {
    throw DomainError(fmt::format("{}: |J| = {} outside the saturation disk (J_s = {})", what,
                                  J.norm(), p.saturation));
  }
}

Mat2 inverse2(const Mat2& a) {
  const double det = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  Mat2 inv;
  inv << a(1, 1), -a(0, 1), -a(1, 0), a(0, 0);
  return inv / det;
}

double cell_difference(const Vec2& J1, const Vec2& J0, const Vec2& H, const Vec2& J_prev, const CellParams& p) {
  if (!detail::inside(J1, p)) return std::numeric_limits<double>::infinity();
  return detail::energy_difference(J1, J0, p) - H.dot(J1 - J0) + detail::pinning_difference(J1, J0, J_prev, p);
}

Vec2 anhysteretic(const Vec2& h, const CellParams& p) {
  const double n = h.norm();
  if (n == 0.0) return Vec2::Zero();
  return anhysteretic_radius(n, p) * h / n;
}

}  // namespace

void CellParams::validate() const {
  if (!(field_scale > 0.0)) throw Error(fmt::format("cell: A_s must be positive (got {})", field_scale));
  if (!(saturation > 0.0)) throw Error(fmt::format("cell: J_s must be positive (got {})", saturation));
  if (!(pinning >= 0.0)) throw Error(fmt::format("cell: chi must be non-negative (got {})", pinning));
  if (!(eps >= 0.0)) throw Error(fmt::format("cell: eps must be non-negative (got {})", eps));
  if (form_coeff != 1 && form_coeff != 2) {
    throw Error(fmt::format("cell: form_coeff must be 1 or 2 (got {})", form_coeff));
  }
}

void MaterialModel::validate() const {
  if (cells.empty()) throw Error("material: at least one cell is required");
  if (cells.size() > kMaxCells) {
    throw Error(fmt::format("material: at most {} cells supported (got {})", kMaxCells, cells.size()));
  }
  if (!(nu0 > 0.0)) throw Error("material: nu0 must be positive");
  for (const auto& c : cells) c.validate();
}

double MaterialModel::max_pinning() const {
  double m = 0.0;
  for (const auto& c : cells) m = std::max(m, c.pinning);
  return m;
}

double MaterialModel::total_saturation() const {
  double s = 0.0;
  for (const auto& c : cells) s += c.saturation;
  return s;
}

MaterialModel five_cell_material(double eps, int form_coeff) {
  constexpr std::array<double, 5> js{0.11, 0.3, 0.44, 0.33, 0.04};
  constexpr std::array<double, 5> chi{0.0, 10.0, 20.0, 40.0, 60.0};
  MaterialModel m;
  for (std::size_t k = 0; k < js.size(); ++k) {
    m.cells.push_back(CellParams{65.0, js[k], chi[k], eps, form_coeff});
  }
  return m;
}

PolarizationState::PolarizationState(std::size_t elements, std::size_t cells)
    : num_elements(elements),
      num_cells(cells),
      J(elements * cells, Vec2::Zero()),
      J_prev(elements * cells, Vec2::Zero()) {}

Vec2 PolarizationState::total(std::size_t e) const {
  Vec2 s = Vec2::Zero();
  for (const auto& j : cells(e)) s += j;
  return s;
}

double reg_norm(const Vec2& x, double eps) { return std::sqrt(x.squaredNorm() + eps); }

namespace detail {

double energy_unchecked(const Vec2& J, const CellParams& p) {
  const double k = kPi / (2.0 * p.saturation);
  const double theta = k * J.norm();
  const double s = std::sin(0.5 * theta);
  // log cos(theta) = log1p(-2 sin^2(theta/2)), accurate near theta = 0
  return -(p.gain() / k) * std::log1p(-2.0 * s * s);
}

Vec2 gradient_unchecked(const Vec2& J, const CellParams& p) {
  const double r = J.norm();
  if (r == 0.0) return Vec2::Zero();
  const double k = kPi / (2.0 * p.saturation);
  return (p.gain() * std::tan(k * r) / r) * J;
}

Mat2 hessian_unchecked(const Vec2& J, const CellParams& p) {
  const double k = kPi / (2.0 * p.saturation);
  const double r = J.norm();
  const double theta = k * r;
  const double c = std::cos(theta);
  const double second = p.gain() * k / (c * c);  // u''(r)
  // u'(r) / r = g k tan(theta) / theta
  const double ratio = theta < 1e-4 ? p.gain() * k * (1.0 + theta * theta / 3.0)
                                    : p.gain() * std::tan(theta) / r;
  if (r == 0.0) return second * Mat2::Identity();
  const Vec2 n = J / r;
  const double off = (second - ratio) * n.x() * n.y();
  Mat2 h;
  h << ratio + (second - ratio) * n.x() * n.x(), off, off, ratio + (second - ratio) * n.y() * n.y();
  return h;
}

double pinning_value(const Vec2& J, const Vec2& J_prev, const CellParams& p) {
  if (p.pinning == 0.0) return 0.0;
  return p.pinning * reg_norm(J - J_prev, p.eps);
}

Vec2 pinning_gradient(const Vec2& J, const Vec2& J_prev, const CellParams& p) {
  if (p.pinning == 0.0) return Vec2::Zero();
  const Vec2 d = J - J_prev;
  const double n = reg_norm(d, p.eps);
  if (n == 0.0) return Vec2::Zero();
  return (p.pinning / n) * d;
}

Mat2 pinning_hessian(const Vec2& J, const Vec2& J_prev, const CellParams& p) {
  if (p.pinning == 0.0) return Mat2::Zero();
  const Vec2 d = J - J_prev;
  const double n = std::max(reg_norm(d, p.eps), 1e-30);
  const Vec2 v = d / n;
  return (p.pinning / n) * (Mat2::Identity() - v * v.transpose());
}

double energy_difference(const Vec2& J1, const Vec2& J0, const CellParams& p) {
  const double k = kPi / (2.0 * p.saturation);
  const double r1 = J1.norm();
  const double r0 = J0.norm();
  const double dr = r1 + r0 > 0.0 ? (J1 - J0).dot(J1 + J0) / (r1 + r0) : 0.0;
  const double t1 = k * r1;
  const double t0 = k * r0;
  // cos t1 - cos t0 = -2 sin((t1 + t0) / 2) sin((t1 - t0) / 2)
  const double dc = -2.0 * std::sin(0.5 * (t1 + t0)) * std::sin(0.5 * k * dr);
  return -(p.gain() / k) * std::log1p(dc / std::cos(t0));
}

double pinning_difference(const Vec2& J1, const Vec2& J0, const Vec2& J_prev, const CellParams& p) {
  if (p.pinning == 0.0) return 0.0;
  const Vec2 d1 = J1 - J_prev;
  const Vec2 d0 = J0 - J_prev;
  const double den = reg_norm(d1, p.eps) + reg_norm(d0, p.eps);
  if (den == 0.0) return 0.0;
  return p.pinning * (J1 - J0).dot(d1 + d0) / den;
}

}  // namespace detail

double energy_density(const Vec2& J, const CellParams& p) {
  require_inside(J, p, "energy_density");
  return detail::energy_unchecked(J, p);
}

Vec2 energy_gradient(const Vec2& J, const CellParams& p) {
  require_inside(J, p, "energy_gradient");
  return detail::gradient_unchecked(J, p);
}

Mat2 energy_hessian(const Vec2& J, const CellParams& p) {
  require_inside(J, p, "energy_hessian");
  return detail::hessian_unchecked(J, p);
}

double radial_slope(double r, const CellParams& p) {
  if (!(std::abs(r) < p.saturation)) throw DomainError("radial_slope: |r| >= J_s");
  return p.gain() * std::tan(kPi * r / (2.0 * p.saturation));
}

double anhysteretic_radius(double h, const CellParams& p) {
  return (2.0 * p.saturation / kPi) * std::atan(h / p.gain());
}

Vec2 cell_update_H(const Vec2& H, const Vec2& J_prev, const CellParams& p,
                   const LocalSolveOptions& opts) {
  p.validate();
  require_inside(J_prev, p, "cell_update_H (previous polarization)");

  const Vec2 drive = H - detail::gradient_unchecked(J_prev, p);
  const double drive_norm = drive.norm();
  if (p.eps == 0.0 && drive_norm <= p.pinning) return J_prev;

  // Predictor: anhysteretic response to H reduced by the pinning force along
  // the drive direction. Exact for colinear drives when eps = 0.
  Vec2 J = J_prev;
  if (drive_norm > p.pinning) {
    const Vec2 w = drive / drive_norm;
    const Vec2 guess = anhysteretic(H - p.pinning * w, p);
    if (p.eps == 0.0 || cell_difference(guess, J, H, J_prev, p) < 0.0) {
      J = guess;
    }
    if (p.eps == 0.0 && J == J_prev) J = J_prev + 1e-9 * p.saturation * w;
  }

  const double tol = opts.rel_tol * (H.norm() + p.pinning + p.gain());
  double res = 0.0;
  for (int it = 0; it < opts.max_iter; ++it) {
    const Vec2 g = detail::gradient_unchecked(J, p) - H + detail::pinning_gradient(J, J_prev, p);
    res = g.norm();
    if (res <= tol) return J;
    const Mat2 hess = detail::hessian_unchecked(J, p) + detail::pinning_hessian(J, J_prev, p);
    const Vec2 d = -(inverse2(hess) * g);
    const double slope = g.dot(d);
    double step = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < kLocalBacktracks; ++bt, step *= 0.5) {
      const Vec2 trial = J + step * d;
      if (cell_difference(trial, J, H, J_prev, p) <= kLocalArmijo * step * slope) {
        J = trial;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (res <= 1e4 * tol) return J;  // at the rounding floor of the residual
      throw ConvergenceError(fmt::format("cell_update_H: line search failed, residual {} A/m", res), res);
    }
  }
  if (res <= 1e4 * tol) return J;
  throw ConvergenceError(fmt::format("cell_update_H: no convergence, residual {} A/m", res), res);
}

namespace {

// Difference of the joint cell objective
//   sum_k U_k(J_k) + chi_k |J_k - J_p,k|_eps + (nu0/2) |B - sum_k J_k|^2
// between J1 and J0, without cancellation.
double joint_difference(const Vec2& B, std::span<const Vec2> J1, std::span<const Vec2> J0,
                        std::span<const Vec2> J_prev, const MaterialModel& m) {
  Vec2 b0 = B;
  Vec2 db = Vec2::Zero();
  double d = 0.0;
  for (std::size_t k = 0; k < J1.size(); ++k) {
    const auto& p = m.cells[k];
    if (!detail::inside(J1[k], p)) return std::numeric_limits<double>::infinity();
    d += detail::energy_difference(J1[k], J0[k], p) + detail::pinning_difference(J1[k], J0[k], J_prev[k], p);
    b0 -= J0[k];
    db -= J1[k] - J0[k];
  }
  return d + 0.5 * m.nu0 * db.dot(2.0 * b0 + db);
}

double residual_scale(const Vec2& H, const MaterialModel& m) {
  double s = H.norm();
  double extra = 0.0;
  for (const auto& c : m.cells) extra = std::max(extra, c.pinning + c.gain());
  return s + extra;
}

// H = nu0 (B - sum J) cannot be resolved below the rounding of its operands.
double residual_floor(const Vec2& B, std::span<const Vec2> J, const MaterialModel& m) {
  double s = B.norm();
  for (const auto& j : J) s += j.norm();
  return 16.0 * std::numeric_limits<double>::epsilon() * m.nu0 * s;
}

LocalSolveStats primal_newton(const Vec2& B, std::span<const Vec2> J_prev, const MaterialModel& m,
                              std::span<Vec2> J, const LocalSolveOptions& opts) {
  const std::size_t K = m.size();
  std::array<Vec2, kMaxCells> g;
  std::array<Mat2, kMaxCells> dinv;
  std::array<Vec2, kMaxCells> d;
  std::array<Vec2, kMaxCells> trial;

  LocalSolveStats stats;
  for (int it = 0; it <= opts.max_iter; ++it) {
    Vec2 total = Vec2::Zero();
    for (std::size_t k = 0; k < K; ++k) total += J[k];
    const Vec2 H = m.nu0 * (B - total);
    double res = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const auto& p = m.cells[k];
      g[k] = H - detail::gradient_unchecked(J[k], p) - detail::pinning_gradient(J[k], J_prev[k], p);
      res = std::max(res, g[k].norm());
    }
    stats.iterations = it;
    stats.residual = res;
    const double tol = opts.rel_tol * residual_scale(H, m) + residual_floor(B, J.first(K), m);
    if (res <= tol) return stats;
    if (it == opts.max_iter) break;

    // Hessian = blockdiag(D_k) + nu0 E E^T, solved through the 2x2 Schur form.
    Mat2 S = Mat2::Zero();
    Vec2 y = Vec2::Zero();
    for (std::size_t k = 0; k < K; ++k) {
      const auto& p = m.cells[k];
      dinv[k] = inverse2(detail::hessian_unchecked(J[k], p) + detail::pinning_hessian(J[k], J_prev[k], p));
      S += dinv[k];
      y += dinv[k] * g[k];
    }
    const Vec2 sum_d = inverse2(Mat2::Identity() + m.nu0 * S) * y;
    double slope = 0.0;  // gradient . direction, gradient = -g
    for (std::size_t k = 0; k < K; ++k) {
      d[k] = dinv[k] * (g[k] - m.nu0 * sum_d);
      slope -= g[k].dot(d[k]);
    }

    double step = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < kLocalBacktracks; ++bt, step *= 0.5) {
      for (std::size_t k = 0; k < K; ++k) trial[k] = J[k] + step * d[k];
      if (joint_difference(B, std::span<const Vec2>(trial.data(), K), J.first(K), J_prev, m) <=
          kLocalArmijo * step * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (res <= 1e4 * tol) return stats;
      break;
    }
    for (std::size_t k = 0; k < K; ++k) J[k] = trial[k];
  }
  stats.iterations = -1;  // not converged; the caller falls back to the dual iteration
  return stats;
}

// eps = 0 in some cell: Newton on the strongly convex dual function of H,
//   Psi(H) = |H|^2/(2 nu0) - B.H + sum_k max_J [H.J - U_k(J) - chi_k |J - J_p,k|],
// whose gradient is H/nu0 - B + sum_k J_k(H).
LocalSolveStats dual_newton(const Vec2& B, std::span<const Vec2> J_prev, const MaterialModel& m,
                            std::span<Vec2> J, const LocalSolveOptions& opts) {
  const std::size_t K = m.size();
  std::array<Vec2, kMaxCells> Jk;

  const auto respond = [&](const Vec2& H, std::span<Vec2> out) {
    double psi = 0.5 * H.squaredNorm() / m.nu0 - B.dot(H);
    for (std::size_t k = 0; k < K; ++k) {
      const auto& p = m.cells[k];
      out[k] = cell_update_H(H, J_prev[k], p, opts);
      psi += H.dot(out[k]) - detail::energy_unchecked(out[k], p) - detail::pinning_value(out[k], J_prev[k], p);
    }
    return psi;
  };

  Vec2 total = Vec2::Zero();
  for (std::size_t k = 0; k < K; ++k) total += J[k];
  Vec2 H = m.nu0 * (B - total);
  double psi = respond(H, std::span<Vec2>(Jk.data(), K));

  LocalSolveStats stats;
  for (int it = 0; it <= opts.max_iter; ++it) {
    Vec2 sum = Vec2::Zero();
    for (std::size_t k = 0; k < K; ++k) sum += Jk[k];
    const Vec2 grad = H / m.nu0 - B + sum;
    stats.iterations = it;
    stats.residual = m.nu0 * grad.norm();
    const double tol =
        opts.rel_tol * residual_scale(H, m) + residual_floor(B, std::span<const Vec2>(Jk.data(), K), m);
    if (stats.residual <= tol) break;
    if (it == opts.max_iter) {
      throw ConvergenceError(fmt::format("local_polarization_update (dual iteration): no convergence, residual {} A/m",
                                         stats.residual),
                             stats.residual);
    }
    Mat2 jac = Mat2::Identity() / m.nu0;
    for (std::size_t k = 0; k < K; ++k) {
      const auto& p = m.cells[k];
      if (p.eps == 0.0 && Jk[k] == J_prev[k]) continue;  // pinned: dJ/dH = 0
      jac += inverse2(detail::hessian_unchecked(Jk[k], p) + detail::pinning_hessian(Jk[k], J_prev[k], p));
    }
    const Vec2 dH = -(inverse2(jac) * grad);
    const double slope = grad.dot(dH);
    double step = 1.0;
    bool accepted = false;
    std::array<Vec2, kMaxCells> trial;
    for (int bt = 0; bt < kLocalBacktracks; ++bt, step *= 0.5) {
      const Vec2 Ht = H + step * dH;
      const double pt = respond(Ht, std::span<Vec2>(trial.data(), K));
      // Close to the solution the decrease of Psi drops below its rounding
      // level; a shrinking gradient is accepted instead.
      Vec2 tsum = Vec2::Zero();
      for (std::size_t k = 0; k < K; ++k) tsum += trial[k];
      const double tres = m.nu0 * (Ht / m.nu0 - B + tsum).norm();
      if (pt <= psi + kLocalArmijo * step * slope || tres <= (1.0 - 0.5 * step) * stats.residual) {
        H = Ht;
        psi = pt;
        Jk = trial;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (stats.residual <= 1e4 * tol) break;
      throw ConvergenceError(fmt::format("local_polarization_update (dual iteration): line search failed, residual {} A/m",
                                         stats.residual),
                             stats.residual);
    }
  }
  for (std::size_t k = 0; k < K; ++k) J[k] = Jk[k];
  return stats;
}

}  // namespace

LocalSolveStats local_polarization_update(const Vec2& B, std::span<const Vec2> J_prev,
                                          const MaterialModel& m, std::span<Vec2> J,
                                          const LocalSolveOptions& opts) {
  if (J.size() != m.size() || J_prev.size() != m.size()) {
    throw Error(fmt::format("local_polarization_update: expected {} cells, got {} / {}", m.size(),
                            J.size(), J_prev.size()));
  }
  for (std::size_t k = 0; k < m.size(); ++k) {
    require_inside(J_prev[k], m.cells[k], "local_polarization_update (previous polarization)");
    if (!detail::inside(J[k], m.cells[k])) J[k] = J_prev[k];
  }
  const bool smooth = std::all_of(m.cells.begin(), m.cells.end(), [](const CellParams& c) {
    return c.eps > 0.0 || c.pinning == 0.0;
  });
  if (!smooth) return dual_newton(B, J_prev, m, J, opts);
  // Deep in saturation the primal steps are cut short by the pole of U and
  // progress stalls; the dual problem in H stays well conditioned there.
  LocalSolveOptions primal_opts = opts;
  primal_opts.max_iter = std::min(opts.max_iter, kPrimalIterations);
  const LocalSolveStats stats = primal_newton(B, J_prev, m, J, primal_opts);
  if (stats.iterations >= 0) return stats;
  LocalSolveStats dual = dual_newton(B, J_prev, m, J, opts);
  dual.iterations += primal_opts.max_iter;
  return dual;
}

std::vector<Vec2> local_polarization_update(const Vec2& B, std::span<const Vec2> J_prev,
                                            const MaterialModel& m) {
  std::vector<Vec2> J(J_prev.begin(), J_prev.end());
  local_polarization_update(B, J_prev, m, J);
  return J;
}

double dissipation_residual(const Vec2& H, const Vec2& J, const CellParams& p) {
  return (H - energy_gradient(J, p)).norm() - p.pinning;
}

double loss_density(std::span<const Vec2> J, std::span<const Vec2> J_prev, const MaterialModel& m,
                    double tau) {
  if (!(tau > 0.0)) throw Error("loss_density: tau must be positive");
  double sum = 0.0;
  for (std::size_t k = 0; k < J.size(); ++k) sum += m.cells[k].pinning * (J[k] - J_prev[k]).norm();
  return sum / tau;
}

}  // namespace hystfem
