#include "hystfem/verify.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "hystfem/config.hpp"
#include "hystfem/driver.hpp"
#include "hystfem/errors.hpp"
#include "hystfem/oracle.hpp"
#include "hystfem/solvers.hpp"

namespace hystfem {

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Vec2 random_in_disk(Rng& rng, double r_lo, double r_hi) {
  const double r = uniform(rng, r_lo, r_hi);
  const double phi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  return {r * std::cos(phi), r * std::sin(phi)};
}

CellParams random_cell(Rng& rng, double eps) {
  const auto table = five_cell_material(eps, 1).cells;
  CellParams p = table[std::uniform_int_distribution<std::size_t>(0, table.size() - 1)(rng)];
  p.form_coeff = uniform(rng, 0.0, 1.0) < 0.5 ? 1 : 2;
  return p;
}

double rel_error(const Eigen::VectorXd& got, const Eigen::VectorXd& ref) {
  const double n = ref.norm();
  return n > 0.0 ? (got - ref).norm() / n : got.norm();
}

class Suite {
 public:
  Suite(const VerifyOptions& opts, const std::function<void(const CheckResult&)>& progress)
      : opts_(opts), progress_(progress), rng_(opts.seed) {}

  template <class F>
  void check(const std::string& name, double tolerance, F&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    CheckResult r;
    r.name = name;
    r.tolerance = tolerance;
    try {
      r.value = body(rng_);
      r.passed = std::isfinite(r.value) && r.value <= tolerance;
    } catch (const std::exception&) {
      r.value = std::numeric_limits<double>::infinity();
      r.passed = false;
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report_.checks.push_back(r);
    if (progress_) progress_(r);
  }

  const VerifyOptions& opts() const { return opts_; }
  VerifyReport take() { return std::move(report_); }

 private:
  VerifyOptions opts_;
  std::function<void(const CheckResult&)> progress_;
  Rng rng_;
  VerifyReport report_;
};

struct TinyErrors {
  double newton = 0.0;
  double bcd = 0.0;
  double agreement = 0.0;
};

double state_error(const Eigen::VectorXd& a, const std::vector<Vec2>& J, const Eigen::VectorXd& a_ref,
                   const std::vector<Vec2>& J_ref) {
  Eigen::VectorXd j(2 * J.size());
  Eigen::VectorXd j_ref(2 * J.size());
  for (std::size_t i = 0; i < J.size(); ++i) {
    j.segment<2>(2 * i) = J[i];
    j_ref.segment<2>(2 * i) = J_ref[i];
  }
  return std::max(rel_error(a, a_ref), rel_error(j, j_ref));
}

TinyErrors tiny_errors(int cells) {
  const FeSpace space(unit_square_mesh());
  const TinyProblem prob = tiny_problem(cells);
  const std::vector<double> walls(space.num_walls(), 0.0);
  PolarizationState init(space.num_elements(), prob.material.size());
  init.J = prob.J_prev;
  init.J_prev = prob.J_prev;

  const auto ref = oracle::brute_force_discrete_min(space, prob.material, prob.J_prev, walls, prob.source);

  NewtonConfig nc;
  nc.rel_tol = 1e-15;
  nc.residual_cap = 1e-10;
  const auto nr = newton_solve(space, space.zero_field(), init, prob.material, nc, walls, prob.source);

  BcdConfig bc;
  bc.rel_tol = 1e-17;
  bc.max_iter = 2000000;
  const auto br = bcd_solve(space, space.zero_field(), init, prob.material, bc, walls, prob.source);

  TinyErrors out;
  out.newton = state_error(nr.a.free_coeffs, nr.state.J, ref.free_coeffs, ref.J);
  out.bcd = state_error(br.a.free_coeffs, br.state.J, ref.free_coeffs, ref.J);
  out.agreement = state_error(br.a.free_coeffs, br.state.J, nr.a.free_coeffs, nr.state.J);
  return out;
}

// Descending-branch zero crossing of a single eps = 0 cell, started from
// positive saturation-side polarization.
double coercive_field(const CellParams& p) {
  const Vec2 top = cell_update_H(Vec2(10.0 * p.gain() + p.pinning, 0.0), Vec2::Zero(), p);
  double lo = -10.0 * p.pinning - 1.0;  // J(lo) < 0
  double hi = 0.0;                      // J(hi) > 0
  for (int i = 0; i < 200 && hi - lo > 1e-13; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (cell_update_H(Vec2(mid, 0.0), top, p).x() > 0.0) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return -0.5 * (lo + hi);
}

}  // namespace

bool VerifyReport::passed() const { return first_failure() == nullptr; }

const CheckResult* VerifyReport::first_failure() const {
  for (const auto& c : checks) {
    if (!c.passed) return &c;
  }
  return nullptr;
}

std::string VerifyReport::table() const {
  std::size_t w = 5;
  for (const auto& c : checks) w = std::max(w, c.name.size());
  std::string s = fmt::format("{:<{}}  {:>12}  {:>10}  {:>8}  {}\n", "check", w, "error", "tolerance", "time [s]", "status");
  for (const auto& c : checks) {
    s += fmt::format("{:<{}}  {:>12.3e}  {:>10.1e}  {:>8.2f}  {}\n", c.name, w, c.value, c.tolerance, c.seconds,
                     c.passed ? "ok" : "FAIL");
  }
  return s;
}

Mesh unit_square_mesh() {
  using K = BoundaryLabel::Kind;
  return Mesh({{0.0, 0.0}, {1.0, 0.0}, {1.0, 1.0}, {0.0, 1.0}}, {{{0, 1, 2}, 0}, {{0, 2, 3}, 0}},
              {{{0, 1}, {K::Wall, 1}}, {{1, 2}, {K::Gate, 1}}, {{2, 3}, {K::Gate, 1}}, {{3, 0}, {K::Wall, 1}}});
}

TinyProblem tiny_problem(int cells) {
  if (cells != 1 && cells != 2) throw Error("tiny_problem: 1 or 2 cells");
  const auto table = five_cell_material(1e-10, 2).cells;
  TinyProblem p;
  if (cells == 1) {
    p.material.cells = {table[1]};
    p.source = {60.0, 25.0};
    p.J_prev = {{0.1, 0.05}, {0.05, -0.1}};
  } else {
    p.material.cells = {table[0], table[1]};
    p.source = {100.0, 50.0};
    p.J_prev = {{0.015, -0.005}, {0.1, 0.05}, {-0.01, 0.02}, {0.05, -0.1}};
  }
  return p;
}

VerifyReport run_verify(const VerifyOptions& opts, const std::function<void(const CheckResult&)>& progress) {
  Suite suite(opts, progress);
  const bool full = opts.level == VerifyLevel::Full;
  const int n_states = 100;

  suite.check("energy vs closed form", 1e-12, [&](Rng& rng) {
    double worst = 0.0;
    for (int i = 0; i < n_states; ++i) {
      const CellParams p = random_cell(rng, 1e-10);
      const Vec2 J = random_in_disk(rng, 0.05 * p.saturation, 0.99 * p.saturation);
      const double ref = oracle::reference_energy(J, p);
      worst = std::max(worst, std::abs(energy_density(J, p) - ref) / std::max(ref, 1e-300));
    }
    return worst;
  });

  suite.check("energy gradient vs finite differences", 1e-6, [&](Rng& rng) {
    double worst = 0.0;
    for (int i = 0; i < n_states; ++i) {
      const CellParams p = random_cell(rng, 1e-10);
      const Vec2 J = random_in_disk(rng, 0.05 * p.saturation, 0.95 * p.saturation);
      Vec2 g = energy_gradient(J, p);
      if (opts.corrupt_gradient) g *= 1.0 + 1e-4;
      const auto fd = oracle::fd_gradient([&](const Eigen::VectorXd& x) { return energy_density(Vec2(x), p); }, J,
                                          1e-6 * p.saturation);
      worst = std::max(worst, rel_error(g, fd));
    }
    return worst;
  });

  suite.check("energy Hessian vs finite differences", 1e-5, [&](Rng& rng) {
    double worst = 0.0;
    for (int i = 0; i < n_states; ++i) {
      const CellParams p = random_cell(rng, 1e-10);
      const Vec2 J = random_in_disk(rng, 0.0, 0.95 * p.saturation);
      const Mat2 h = energy_hessian(J, p);
      const Eigen::MatrixXd fd = oracle::fd_jacobian(
          [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return energy_gradient(Vec2(x), p); }, J,
          1e-6 * p.saturation);
      worst = std::max(worst, (h - fd).norm() / h.norm());
    }
    return worst;
  });

  suite.check("residual vs objective differences", 1e-7, [&](Rng& rng) {
    TJointParams tp;
    tp.mesh_size = 0.2;
    const FeSpace space(generate_tjoint(tp));
    const MaterialModel m = five_cell_material(1e-10, 1);
    const std::size_t ne = space.num_elements();
    const std::size_t K = m.size();
    double worst = 0.0;
    for (int s = 0; s < n_states; ++s) {
      PotentialField a = space.zero_field();
      for (auto& c : a.wall_constants) c = uniform(rng, -0.3, 0.3);
      for (Eigen::Index i = 0; i < a.free_coeffs.size(); ++i) a.free_coeffs[i] = uniform(rng, -0.3, 0.3);
      PolarizationState st(ne, K);
      std::vector<double> src(ne);
      for (auto& j : src) j = uniform(rng, -1e3, 1e3);
      for (std::size_t e = 0; e < ne; ++e) {
        for (std::size_t k = 0; k < K; ++k) {
          const double js = m.cells[k].saturation;
          st.J[e * K + k] = random_in_disk(rng, 0.0, 0.9 * js);
          st.J_prev[e * K + k] = random_in_disk(rng, 0.0, 0.9 * js);
        }
      }
      const Vector r = potential_residual(space, a, st, m, src);
      const auto g = polarization_residual(space, a, st, m);

      Eigen::VectorXd fd_a(r.size());
      const double ha = 1e-6;
      PotentialField ap = a;
      PotentialField am = a;
      for (Eigen::Index i = 0; i < r.size(); ++i) {
        ap.free_coeffs[i] = a.free_coeffs[i] + ha;
        am.free_coeffs[i] = a.free_coeffs[i] - ha;
        fd_a[i] = objective_difference(space, ap, st, am, st, m, src) / (2.0 * ha);
        ap.free_coeffs[i] = am.free_coeffs[i] = a.free_coeffs[i];
      }
      worst = std::max(worst, rel_error(-r, fd_a));

      Eigen::VectorXd fd_j(2 * ne * K);
      Eigen::VectorXd an_j(2 * ne * K);
      PolarizationState sp = st;
      PolarizationState sm = st;
      for (std::size_t i = 0; i < ne * K; ++i) {
        const std::size_t e = i / K;
        const double hj = 1e-7 * m.cells[i % K].saturation;
        for (int c = 0; c < 2; ++c) {
          sp.J[i][c] = st.J[i][c] + hj;
          sm.J[i][c] = st.J[i][c] - hj;
          fd_j[2 * i + c] = objective_difference(space, a, sp, a, sm, m, src) / (2.0 * hj);
          an_j[2 * i + c] = -space.area(e) * g[i][c];
          sp.J[i][c] = sm.J[i][c] = st.J[i][c];
        }
      }
      worst = std::max(worst, rel_error(an_j, fd_j));
    }
    return worst;
  });

  suite.check("cell minimizer vs brute force [T]", 1e-6, [&](Rng& rng) {
    double worst = 0.0;
    const int n = full ? 100 : 20;
    for (int i = 0; i < n; ++i) {
      const CellParams p = random_cell(rng, 1e-10);
      const Vec2 Jp = random_in_disk(rng, 0.0, 0.8 * p.saturation);
      const Vec2 H = random_in_disk(rng, 0.0, 3.0 * (p.gain() + p.pinning));
      const Vec2 J = cell_update_H(H, Jp, p);
      worst = std::max(worst, (J - oracle::brute_force_cell_min(H, Jp, p)).norm());
    }
    return worst;
  });

  suite.check("anhysteretic curve vs bisection [T]", 1e-10, [&](Rng& rng) {
    double worst = 0.0;
    for (int i = 0; i < n_states; ++i) {
      CellParams p = random_cell(rng, 0.0);
      p.pinning = 0.0;
      const Vec2 H = random_in_disk(rng, 0.0, 20.0 * p.gain());
      const Vec2 J = cell_update_H(H, random_in_disk(rng, 0.0, 0.5 * p.saturation), p);
      const double r = H.norm();
      const Vec2 ref = r > 0.0 ? Vec2(oracle::anhysteretic_bisection(r, p) * H / r) : Vec2::Zero();
      worst = std::max(worst, (J - ref).norm());
    }
    return worst;
  });

  suite.check("two-cell joint minimizer vs brute force [T]", 1e-6, [&](Rng& rng) {
    MaterialModel m;
    const auto table = five_cell_material(1e-10, 2).cells;
    m.cells = {table[0], table[1]};
    std::vector<std::pair<Vec2, std::vector<Vec2>>> cases = {{Vec2(1.0, 0.0), {Vec2::Zero(), Vec2::Zero()}}};
    for (int i = 0; i < (full ? 4 : 1); ++i) {
      cases.push_back({random_in_disk(rng, 0.0, 0.4), {random_in_disk(rng, 0.0, 0.09), random_in_disk(rng, 0.0, 0.25)}});
    }
    double worst = 0.0;
    for (const auto& [B, Jp] : cases) {
      const auto J = local_polarization_update(B, Jp, m);
      const auto ref = oracle::brute_force_joint_min(B, Jp, m);
      for (std::size_t k = 0; k < J.size(); ++k) worst = std::max(worst, (J[k] - ref[k]).norm());
    }
    return worst;
  });

  suite.check("scalar play operator vs exact reference [T]", 1e-10, [&](Rng&) {
    CellParams p = five_cell_material(0.0, 2).cells[2];
    std::vector<double> H;
    const double peak = 3.0 * (p.gain() + p.pinning);
    for (int i = 0; i <= 400; ++i) {
      const double t = i / 400.0;
      H.push_back(peak * std::sin(2.0 * std::numbers::pi * 1.5 * t) * (0.5 + 0.5 * t));
    }
    const auto ref = oracle::scalar_play_reference(H, p);
    double worst = 0.0;
    Vec2 J = Vec2::Zero();
    for (std::size_t i = 0; i < H.size(); ++i) {
      J = cell_update_H(Vec2(H[i], 0.0), J, p);
      worst = std::max({worst, std::abs(J.x() - ref[i]), std::abs(J.y())});
    }
    return worst;
  });

  suite.check("coercive field equals chi [A/m]", 1e-8, [&](Rng&) {
    double worst = 0.0;
    for (const auto& c : five_cell_material(0.0, 2).cells) {
      if (c.pinning > 0.0) worst = std::max(worst, std::abs(coercive_field(c) - c.pinning));
    }
    return worst;
  });

  suite.check("chi = 0 curve is single valued and lossless", 1e-12, [&](Rng&) {
    MaterialModel m;
    CellParams p = five_cell_material(0.0, 2).cells[0];
    m.cells = {p};
    const double peak = 5.0 * p.gain();
    double worst = 0.0;
    double loss = 0.0;
    Vec2 J = Vec2::Zero();
    for (int i = 0; i <= 200; ++i) {
      const double h = peak * std::sin(2.0 * std::numbers::pi * i / 100.0);
      const Vec2 prev = J;
      J = cell_update_H(Vec2(h, 0.0), J, p);
      loss += loss_density(std::span<const Vec2>(&J, 1), std::span<const Vec2>(&prev, 1), m, 1.0);
      worst = std::max(worst, std::abs(J.x() - oracle::anhysteretic_bisection(h, p)) / p.saturation);
    }
    return std::max(worst, loss);
  });

  for (int cells : {1, 2}) {
    TinyErrors err;
    bool ran = false;
    const auto run = [&]() {
      if (!ran) {
        err = tiny_errors(cells);
        ran = true;
      }
    };
    suite.check(fmt::format("tiny mesh, {} cell(s): newton vs global minimum", cells), 1e-6, [&](Rng&) {
      run();
      return err.newton;
    });
    suite.check(fmt::format("tiny mesh, {} cell(s): bcd vs global minimum", cells), 1e-6, [&](Rng&) {
      run();
      return err.bcd;
    });
    suite.check(fmt::format("tiny mesh, {} cell(s): newton vs bcd", cells), 1e-6, [&](Rng&) {
      run();
      return err.agreement;
    });
  }

  if (full) {
    suite.check("coarse benchmark step: newton vs bcd", 1e-5, [&](Rng&) {
      RunConfig cfg = default_config();
      for (auto& c : cfg.material.cells) {
        c.form_coeff = 1;
        c.eps = 1e-6;
      }
      const FeSpace space(build_mesh(cfg.mesh));
      const auto walls = wall_constants(cfg.cycle.fluxes(cfg.cycle.time(10)), space.topology());
      const WallLifting lifting(space);
      PotentialField a0 = space.zero_field();
      lifting.apply(a0, walls);
      const PolarizationState s0(space.num_elements(), cfg.material.size());

      PotentialField an = a0;
      PolarizationState sn = s0;
      NewtonSolver(space, cfg.material, cfg.solver.newton).solve(an, sn);

      BcdConfig bc;
      bc.rel_tol = 1e-16;
      bc.max_iter = 200000;
      PotentialField ab = a0;
      PolarizationState sb = s0;
      BcdSolver(space, cfg.material, bc).solve(ab, sb);

      Eigen::VectorXd bn(2 * space.num_elements());
      Eigen::VectorXd bb(2 * space.num_elements());
      for (std::size_t e = 0; e < space.num_elements(); ++e) {
        const double w = std::sqrt(space.area(e));
        bn.segment<2>(2 * e) = w * space.element_curl(an, e);
        bb.segment<2>(2 * e) = w * space.element_curl(ab, e);
      }
      return rel_error(bb, bn);
    });
  }
  return suite.take();
}

}  // namespace hystfem
