#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "hystfem/config.hpp"
#include "hystfem/driver.hpp"
#include "hystfem/solvers.hpp"
#include "hystfem/verify.hpp"

using namespace hystfem;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& title, const std::string& detail) {
  fmt::print("{} {}: {} ({})\n", ok ? "PASS" : "FAIL", id, title, detail);
  std::fflush(stdout);
  if (!ok) ++failures;
}

struct Run {
  std::size_t dof = 0;
  CycleResult result;
  // worst values over all steps
  double potential = 0.0;
  double polarization = 0.0;
  double kkt = -1e300;
  bool monotone = true;
  bool armijo = true;
  int armijo_steps = 0;
  double flux_error = 0.0;
  double flux_scale = 0.0;
};

Run run_level(const RunConfig& base, int level, SolverKind kind, bool with_metrics) {
  RunConfig cfg = base;
  cfg.mesh.refine = level;
  cfg.solver.kind = kind;
  const FeSpace space(build_mesh(cfg.mesh));
  Run run;
  run.dof = space.num_free();
  const auto observer = [&](const StepRecord& rec, const PotentialField& a, const PolarizationState& s) {
    run.monotone = run.monotone && rec.report.converged && rec.report.monotone();
    for (std::size_t i = 0; i < rec.report.slopes.size(); ++i) {
      run.armijo = run.armijo && rec.report.slopes[i] < 0.0 && rec.report.armijo_slack[i] >= 0.0;
      ++run.armijo_steps;
    }
    for (std::size_t l = 0; l < rec.fluxes.size(); ++l) {
      run.flux_error = std::max(run.flux_error, std::abs(rec.recomputed_fluxes[l] - rec.fluxes[l]));
      run.flux_scale = std::max(run.flux_scale, std::abs(rec.fluxes[l]));
    }
    if (with_metrics) {
      const auto m = optimality_metrics(space, a, s, cfg.material);
      run.potential = std::max(run.potential, m.potential);
      run.polarization = std::max(run.polarization, m.polarization);
      run.kkt = std::max(run.kkt, m.kkt_excess);
    }
  };
  run.result = run_cycle(space, cfg.material, cfg.cycle, cfg.probes, cfg.solver, cfg.depth, observer);
  fmt::print("  {} level {}: {} dof, {:.2f} it/step, {:.2f} s, {:.4f} J\n", solver_name(kind), level, run.dof,
             run.result.average_iterations(), run.result.wall_time, run.result.losses.total());
  std::fflush(stdout);
  return run;
}

std::string verify_group(const VerifyReport& rep, const std::vector<std::string>& prefixes, bool& ok) {
  ok = true;
  std::string detail;
  int n = 0;
  for (const auto& c : rep.checks) {
    const bool match = std::any_of(prefixes.begin(), prefixes.end(),
                                   [&](const std::string& p) { return c.name.rfind(p, 0) == 0; });
    if (!match) continue;
    ++n;
    ok = ok && c.passed;
    if (!c.passed) detail += fmt::format("{}: {:.3g} > {:.3g}; ", c.name, c.value, c.tolerance);
  }
  if (n == 0) ok = false;
  if (detail.empty()) detail = fmt::format("{} checks within tolerance", n);
  return detail;
}

struct LoopStats {
  double closure = 0.0;  // worst |x(2) - x(1)| / diameter over B and H loci
  double min_area = 1e300;
};

LoopStats probe_loops(const CycleResult& r, std::size_t num_probes, double t0, double t1) {
  LoopStats out;
  for (std::size_t p = 0; p < num_probes; ++p) {
    std::vector<ProbeValue> v;
    for (const auto& s : r.probes) {
      if (s.probe == p && s.t >= t0 - 1e-9 && s.t <= t1 + 1e-9) v.push_back(s.value);
    }
    double dia_b = 0.0;
    double dia_h = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      for (std::size_t j = i + 1; j < v.size(); ++j) {
        dia_b = std::max(dia_b, (v[i].B - v[j].B).norm());
        dia_h = std::max(dia_h, (v[i].H - v[j].H).norm());
      }
    }
    out.closure = std::max(out.closure, (v.back().B - v.front().B).norm() / dia_b);
    out.closure = std::max(out.closure, (v.back().H - v.front().H).norm() / dia_h);
    // hysteresis loop area: closed integral of H . dB per unit volume
    double area = 0.0;
    for (std::size_t i = 1; i < v.size(); ++i) area += 0.5 * (v[i].H + v[i - 1].H).dot(v[i].B - v[i - 1].B);
    out.min_area = std::min(out.min_area, area);
  }
  return out;
}

}  // namespace

int main() {
  const RunConfig cfg = load_config(HYSTFEM_SOURCE_DIR "/configs/benchmark.ini");
  fmt::print("benchmark: {} steps, tau {}, flux amplitude {} Wb, eps {}\n", cfg.cycle.n_steps, cfg.cycle.tau,
             cfg.cycle.flux_amplitude, cfg.material.cells[0].eps);

  const Run n0 = run_level(cfg, 0, SolverKind::Newton, true);
  const Run b0 = run_level(cfg, 0, SolverKind::Bcd, false);
  const Run n1 = run_level(cfg, 1, SolverKind::Newton, false);
  const Run n2 = run_level(cfg, 2, SolverKind::Newton, false);
  const double chi_max = cfg.material.max_pinning();

  {
    const bool ok = n0.potential <= 1e-6 && n0.polarization <= 1e-6 && n0.kkt <= 1e-6 * chi_max;
    report(1, ok, "optimality system at every converged coarse step",
           fmt::format("scaled residuals {:.2e} / {:.2e}, max |H - grad U| - chi = {:.2e} A/m (limit {:.1e})",
                       n0.potential, n0.polarization, n0.kkt, 1e-6 * chi_max));
  }

  VerifyOptions vo;
  vo.level = VerifyLevel::Quick;
  const VerifyReport rep = run_verify(vo);
  {
    bool ok = false;
    const auto detail = verify_group(
        rep, {"energy gradient vs", "energy Hessian vs", "residual vs objective"}, ok);
    report(2, ok, "derivatives vs central differences at 100 random states", detail);
  }
  {
    bool ok = false;
    const auto detail = verify_group(rep, {"tiny mesh"}, ok);
    report(3, ok, "newton and bcd vs brute-force global minimum on a 2-triangle mesh", detail);
  }
  {
    bool ok = false;
    const auto detail = verify_group(
        rep, {"scalar play operator", "coercive field", "chi = 0 curve", "anhysteretic curve"}, ok);
    report(4, ok, "scalar play operator, coercive field and anhysteretic limit", detail);
  }

  {
    const bool ok = n0.monotone && b0.monotone && n0.armijo && n0.armijo_steps > 0 && cfg.solver.newton.sigma == 0.1 &&
                    cfg.solver.newton.q == 0.5;
    report(5, ok, "monotone descent and Armijo acceptance over the full coarse cycle",
           fmt::format("newton monotone {}, bcd monotone {}, {} Armijo steps all accepted: {}", n0.monotone,
                       b0.monotone, n0.armijo_steps, n0.armijo));
  }

  {
    const double itn = n0.result.average_iterations();
    const double itb = b0.result.average_iterations();
    const std::vector<double> its = {itn, n1.result.average_iterations(), n2.result.average_iterations()};
    const auto [lo, hi] = std::minmax_element(its.begin(), its.end());
    const double spread = (*hi - *lo) / *lo;
    const bool ok = n0.dof >= 456 && n0.dof <= 684 && itn >= 6 && itn <= 11 && itb >= 300 && itb <= 1500 &&
                    itb / itn > 20 && spread < 0.2 && n0.result.wall_time < 60;
    report(6, ok, "iteration counts",
           fmt::format("{} dof; newton {:.2f}, bcd {:.1f}, ratio {:.1f}; newton over levels {:.2f} / {:.2f} / {:.2f} "
                       "(spread {:.1f}%); coarse newton {:.2f} s",
                       n0.dof, itn, itb, itb / itn, its[0], its[1], its[2], 100 * spread, n0.result.wall_time));
  }

  {
    const double l0 = n0.result.losses.total();
    const double l1 = n1.result.losses.total();
    const double l2 = n2.result.losses.total();
    const double change = std::abs(l1 - l2) / l2;
    const bool ok = l0 >= 100 && l0 <= 1000 && l0 > l1 && l1 > l2 && l2 > 0 && change < 0.01;
    report(7, ok, "iron losses over [0, 2]",
           fmt::format("{:.3f} J > {:.3f} J > {:.3f} J, last change {:.3f}%", l0, l1, l2, 100 * change));
  }

  {
    const LoopStats loops = probe_loops(n0.result, cfg.probes.points.size(), 1.0, 2.0);
    const bool ok = loops.closure <= 0.01 && loops.min_area > 0.0;
    report(8, ok, "steady-state probe loci",
           fmt::format("{} probes, worst closure {:.3f}% of the diameter, smallest loop area {:.3g} J/m^3",
                       cfg.probes.points.size(), 100 * loops.closure, loops.min_area));
  }

  {
    double flux = 0.0;
    double scale = 0.0;
    for (const Run* r : {&n0, &b0, &n1, &n2}) {
      flux = std::max(flux, r->flux_error);
      scale = std::max(scale, r->flux_scale);
    }
    double balance = 0.0;
    for (int i = 0; i <= 20000; ++i) {
      const double t = cfg.cycle.t_end() * i / 20000;
      double sum = 0.0;
      for (int l = 0; l < 3; ++l) sum += flux_waveform(t, l);
      balance = std::max(balance, std::abs(sum));
      double prescribed = 0.0;
      for (double f : cfg.cycle.fluxes(t)) prescribed += f;
      balance = std::max(balance, std::abs(prescribed));
    }
    const bool ok = flux <= 1e-10 * scale && balance <= 1e-14;
    report(9, ok, "flux enforcement",
           fmt::format("recomputed gate fluxes within {:.2e} Wb of {:.2f} Wb peak, max |sum of fluxes| {:.1e}", flux,
                       scale, balance));
  }

  fmt::print("{}\n", failures == 0 ? "all acceptance criteria passed" : fmt::format("{} criteria failed", failures));
  return failures == 0 ? 0 : 1;
}
