#include "hystfem/driver.hpp"

#include <chrono>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <optional>

#include <fmt/format.h>

#include "hystfem/errors.hpp"

namespace hystfem {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

template <class E>
[[noreturn]] void rethrow_at(const E& e, int step, double t) {
  throw E(fmt::format("step {} (t = {}): {}", step, t, e.what()));
}

std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path));
  return out;
}

void close_csv(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw IoError(fmt::format("write to '{}' failed", path));
}

}  // namespace

double ramp_factor(double t, double ramp) {
  if (t >= ramp) return 1.0;
  return 0.5 * (1.0 - std::cos(std::numbers::pi * t / ramp));
}

double flux_waveform(double t, int gate) {
  return std::cos(kTwoPi * t + kTwoPi * gate / 3.0) * ramp_factor(t);
}

int LoadCycle::num_gates() const {
  if (!gate_scales.empty()) return static_cast<int>(gate_scales.size());
  if (!phases.empty()) return static_cast<int>(phases.size());
  return 3;
}

void LoadCycle::validate() const {
  if (n_steps < 1) throw ConfigError(fmt::format("cycle: n_steps must be at least 1, got {}", n_steps));
  if (!(tau > 0.0)) throw ConfigError(fmt::format("cycle: tau must be positive, got {}", tau));
  if (!(ramp > 0.0)) throw ConfigError(fmt::format("cycle: ramp must be positive, got {}", ramp));
  if (!std::isfinite(flux_amplitude)) throw ConfigError("cycle: flux_amplitude must be finite");
  if (!gate_scales.empty() && !phases.empty() && gate_scales.size() != phases.size()) {
    throw ConfigError(fmt::format("cycle: {} gate scales but {} phases", gate_scales.size(), phases.size()));
  }
  // sum_l a_l cos(w t + phi_l) vanishes for all t iff sum_l a_l exp(i phi_l) = 0
  const int n = num_gates();
  std::complex<double> sum = 0.0;
  double scale = 0.0;
  for (int l = 0; l < n; ++l) {
    const double a = gate_scales.empty() ? 1.0 : gate_scales[l];
    const double phi = phases.empty() ? kTwoPi * l / 3.0 : phases[l];
    sum += a * std::polar(1.0, phi);
    scale = std::max(scale, std::abs(a));
  }
  if (std::abs(sum) > 1e-12 * scale) {
    throw FluxBalanceError(fmt::format(
        "cycle: gate fluxes must sum to zero at all times (flux balance); the waveform leaves a residual "
        "amplitude {} of {}",
        std::abs(sum), scale));
  }
}

std::vector<double> LoadCycle::fluxes(double t) const {
  const int n = num_gates();
  const double f = flux_amplitude * ramp_factor(t, ramp);
  std::vector<double> out(n);
  for (int l = 0; l < n; ++l) {
    const double a = gate_scales.empty() ? 1.0 : gate_scales[l];
    const double phi = phases.empty() ? kTwoPi * l / 3.0 : phases[l];
    out[l] = f * a * std::cos(kTwoPi * t + phi);
  }
  // Near a common zero crossing the rounding of the cosines exceeds the
  // values themselves; the last gate closes the balance exactly.
  double rest = 0.0;
  for (int l = 0; l + 1 < n; ++l) rest += out[l];
  out[n - 1] = -rest;
  return out;
}

std::vector<std::size_t> ProbeSet::locate(const Mesh& mesh) const {
  std::vector<std::size_t> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    const auto e = mesh.locate(p.point);
    if (!e) throw MeshError(fmt::format("probe '{}' at ({}, {}) lies outside the mesh", p.name, p.point.x(), p.point.y()));
    out.push_back(*e);
  }
  return out;
}

ProbeValue probe(const FeSpace& space, const PotentialField& a, const PolarizationState& state,
                 const MaterialModel& m, const Vec2& point) {
  const auto e = space.mesh().locate(point);
  if (!e) throw MeshError(fmt::format("probe point ({}, {}) lies outside the mesh", point.x(), point.y()));
  const Vec2 B = space.element_curl(a, *e);
  return {B, m.nu0 * (B - state.total(*e))};
}

void LossRecord::push(double energy) {
  step_energy.push_back(energy);
  cumulative.push_back(total() + energy);
}

double step_dissipation(const FeSpace& space, const PolarizationState& state, const MaterialModel& m,
                        double depth) {
  double sum = 0.0;
  for (std::size_t e = 0; e < space.num_elements(); ++e) {
    const auto J = state.cells(e);
    const auto Jp = state.prev_cells(e);
    double local = 0.0;
    for (std::size_t k = 0; k < m.size(); ++k) local += m.cells[k].pinning * (J[k] - Jp[k]).norm();
    sum += space.area(e) * local;
  }
  return depth * sum;
}

LossRecord iron_losses(const FeSpace& space, const std::vector<std::vector<Vec2>>& history,
                       const MaterialModel& m, double tau, double depth) {
  if (!(tau > 0.0)) throw Error("iron_losses: tau must be positive");
  if (!(depth > 0.0)) throw Error("iron_losses: depth must be positive");
  LossRecord out;
  const std::size_t K = m.size();
  for (std::size_t n = 1; n < history.size(); ++n) {
    const auto& J = history[n];
    const auto& Jp = history[n - 1];
    if (J.size() != space.num_elements() * K || Jp.size() != J.size()) {
      throw Error(fmt::format("iron_losses: entry {} has {} polarizations, expected {}", n, J.size(),
                              space.num_elements() * K));
    }
    // power density (1/tau) sum chi |dJ| times the step length tau
    double sum = 0.0;
    for (std::size_t e = 0; e < space.num_elements(); ++e) {
      double power = 0.0;
      for (std::size_t k = 0; k < K; ++k) power += m.cells[k].pinning * (J[e * K + k] - Jp[e * K + k]).norm();
      sum += space.area(e) * power / tau;
    }
    out.push(depth * sum * tau);
  }
  return out;
}

const char* solver_name(SolverKind kind) { return kind == SolverKind::Newton ? "newton" : "bcd"; }

double CycleResult::average_iterations() const {
  if (steps.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : steps) sum += s.report.iterations;
  return sum / static_cast<double>(steps.size());
}

double CycleResult::loss_between(double t0, double t1) const {
  double sum = 0.0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const double t = steps[i].t;
    if (t > t0 + 1e-12 && t <= t1 + 1e-12) sum += losses.step_energy[i];
  }
  return sum;
}

CycleResult run_cycle(const FeSpace& space, const MaterialModel& m, const LoadCycle& cycle,
                      const ProbeSet& probes, const SolverChoice& solver, double depth,
                      const StepObserver& observer) {
  cycle.validate();
  m.validate();
  if (!(depth > 0.0)) throw ConfigError("cycle: depth must be positive");
  if (cycle.num_gates() != space.num_gates()) {
    throw ConfigError(fmt::format("cycle: waveform has {} gates, mesh has {}", cycle.num_gates(), space.num_gates()));
  }
  const auto probe_elems = probes.locate(space.mesh());
  const auto t0 = std::chrono::steady_clock::now();

  CycleResult out;
  out.a = space.zero_field();
  out.state = PolarizationState(space.num_elements(), m.size());

  std::optional<WallLifting> lifting;
  if (solver.harmonic_lifting) lifting.emplace(space);
  std::optional<NewtonSolver> newton;
  std::optional<BcdSolver> bcd;
  if (solver.kind == SolverKind::Newton) {
    newton.emplace(space, m, solver.newton);
  } else {
    bcd.emplace(space, m, solver.bcd);
  }

  for (int n = 1; n <= cycle.n_steps; ++n) {
    StepRecord rec;
    rec.step = n;
    rec.t = cycle.time(n);
    rec.fluxes = cycle.fluxes(rec.t);
    try {
      const auto walls = wall_constants(rec.fluxes, space.topology());
      if (lifting) {
        lifting->apply(out.a, walls);
      } else {
        out.a.wall_constants = walls;
      }
      rec.report = newton ? newton->solve(out.a, out.state) : bcd->solve(out.a, out.state);
    } catch (const ConvergenceError& e) {
      throw ConvergenceError(fmt::format("step {} (t = {}): {}", n, rec.t, e.what()), e.residual());
    } catch (const LinearSolverError& e) {
      rethrow_at(e, n, rec.t);
    } catch (const DomainError& e) {
      rethrow_at(e, n, rec.t);
    } catch (const FluxBalanceError& e) {
      rethrow_at(e, n, rec.t);
    }
    rec.recomputed_fluxes = gate_fluxes(space, out.a);
    rec.energy = step_dissipation(space, out.state, m, depth);
    out.losses.push(rec.energy);
    for (std::size_t p = 0; p < probe_elems.size(); ++p) {
      const std::size_t e = probe_elems[p];
      const Vec2 B = space.element_curl(out.a, e);
      out.probes.push_back({n, rec.t, p, {B, m.nu0 * (B - out.state.total(e))}});
    }
    if (observer) observer(rec, out.a, out.state);
    out.state.advance();
    out.steps.push_back(std::move(rec));
  }
  out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

std::vector<BhSample> bh_curve(const MaterialModel& m, DriveQuantity drive, double amplitude, int periods,
                               int steps_per_period) {
  m.validate();
  if (!std::isfinite(amplitude)) throw ConfigError("bh-curve: amplitude must be finite");
  if (periods < 1 || steps_per_period < 4) throw ConfigError("bh-curve: need periods >= 1 and steps >= 4");
  const std::size_t K = m.size();
  std::vector<Vec2> J(K, Vec2::Zero());
  std::vector<Vec2> Jp = J;
  std::vector<BhSample> out;
  double loss = 0.0;
  for (int i = 0; i <= periods * steps_per_period; ++i) {
    BhSample s;
    s.t = static_cast<double>(i) / steps_per_period;
    const double x = amplitude * std::sin(kTwoPi * s.t);
    Vec2 total = Vec2::Zero();
    if (drive == DriveQuantity::H) {
      s.H = x;
      for (std::size_t k = 0; k < K; ++k) J[k] = cell_update_H(Vec2(x, 0.0), Jp[k], m.cells[k]);
      for (const auto& j : J) total += j;
      s.B = x / m.nu0 + total.x();
    } else {
      s.B = x;
      local_polarization_update(Vec2(x, 0.0), Jp, m, J);
      for (const auto& j : J) total += j;
      s.H = m.nu0 * (x - total.x());
    }
    loss += loss_density(J, Jp, m, 1.0);
    s.loss = loss;
    for (const auto& j : J) s.J.push_back(j.x());
    out.push_back(std::move(s));
    Jp = J;
  }
  return out;
}

void write_bh_csv(const std::string& path, const std::vector<BhSample>& curve) {
  auto out = open_csv(path);
  out << "t,H,B";
  const std::size_t K = curve.empty() ? 0 : curve.front().J.size();
  for (std::size_t k = 0; k < K; ++k) out << ",J" << k + 1;
  out << ",loss\n";
  for (const auto& s : curve) {
    out << fmt::format("{:.17g},{:.17g},{:.17g}", s.t, s.H, s.B);
    for (const double j : s.J) out << fmt::format(",{:.17g}", j);
    out << fmt::format(",{:.17g}\n", s.loss);
  }
  close_csv(out, path);
}

SummaryRow summarize(const FeSpace& space, const CycleResult& result, const LoadCycle& cycle,
                     SolverKind kind, int level) {
  SummaryRow row;
  row.dof = space.num_free();
  row.avg_iterations = result.average_iterations();
  row.total_time_s = result.wall_time;
  row.total_loss_J = result.losses.total();
  const double period = 1.0;
  row.steady_loss_J = result.loss_between(std::max(0.0, cycle.t_end() - period), cycle.t_end());
  row.solver = solver_name(kind);
  row.level = level;
  return row;
}

void write_losses_csv(const std::string& path, const CycleResult& result) {
  auto out = open_csv(path);
  out << "step,t,step_energy_J,cumulative_J,solver_iterations,wall_time_s\n";
  for (std::size_t i = 0; i < result.steps.size(); ++i) {
    const auto& s = result.steps[i];
    out << fmt::format("{},{:.17g},{:.17g},{:.17g},{},{:.17g}\n", s.step, s.t, result.losses.step_energy[i],
                       result.losses.cumulative[i], s.report.iterations, s.report.wall_time);
  }
  close_csv(out, path);
}

void write_probes_csv(const std::string& path, const CycleResult& result, const ProbeSet& probes) {
  auto out = open_csv(path);
  out << "t,point_name,Bx,By,Hx,Hy\n";
  for (const auto& s : result.probes) {
    out << fmt::format("{:.17g},{},{:.17g},{:.17g},{:.17g},{:.17g}\n", s.t, probes.points[s.probe].name,
                       s.value.B.x(), s.value.B.y(), s.value.H.x(), s.value.H.y());
  }
  close_csv(out, path);
}

void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
  auto out = open_csv(path);
  out << "dof,avg_iterations,total_time_s,total_loss_J,steady_loss_J,solver,level\n";
  for (const auto& r : rows) {
    out << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{},{}\n", r.dof, r.avg_iterations, r.total_time_s,
                       r.total_loss_J, r.steady_loss_J, r.solver, r.level);
  }
  close_csv(out, path);
}

}  // namespace hystfem
