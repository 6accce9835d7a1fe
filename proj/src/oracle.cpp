#include "hystfem/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Dense>
#include <boost/math/constants/constants.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <fmt/format.h>

#include "hystfem/errors.hpp"

namespace hystfem::oracle {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double reference_slope(double r, const CellParams& p) {
  return 0.5 * p.form_coeff * p.field_scale * std::tan(std::numbers::pi * r / (2.0 * p.saturation));
}

double signed_inverse(double h, const CellParams& p) {
  return h < 0.0 ? -anhysteretic_bisection(-h, p) : anhysteretic_bisection(h, p);
}

// Best point of an n x n grid over [c - half, c + half]^2.
template <class F>
Vec2 grid_search(const F& f, const Vec2& c, double half, int n, double& best) {
  Vec2 arg = c;
  best = kInf;
  const double step = 2.0 * half / (n - 1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const Vec2 x(c.x() - half + i * step, c.y() - half + j * step);
      const double v = f(x);
      if (v < best) {
        best = v;
        arg = x;
      }
    }
  }
  return arg;
}

}  // namespace

Eigen::VectorXd fd_gradient(const ScalarFn& f, const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd y = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    y[i] = x[i] + h;
    const double fp = f(y);
    y[i] = x[i] - h;
    const double fm = f(y);
    y[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw DomainError(fmt::format("fd_gradient: stencil point outside the domain along coordinate {}", i));
    }
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

Eigen::MatrixXd fd_jacobian(const VectorFn& f, const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd y = x;
  Eigen::MatrixXd jac;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    y[j] = x[j] + h;
    const Eigen::VectorXd fp = f(y);
    y[j] = x[j] - h;
    const Eigen::VectorXd fm = f(y);
    y[j] = x[j];
    if (j == 0) jac.resize(fp.size(), x.size());
    jac.col(j) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

double reference_energy(const Vec2& J, const CellParams& p) {
  const double r = std::hypot(J.x(), J.y());
  if (r >= p.saturation) return kInf;
  return -(p.form_coeff * p.field_scale * p.saturation / std::numbers::pi) *
         std::log(std::cos(std::numbers::pi * r / (2.0 * p.saturation)));
}

double anhysteretic_bisection(double h, const CellParams& p) {
  if (h < 0.0) return -anhysteretic_bisection(-h, p);
  double lo = 0.0;
  double hi = p.saturation;
  for (int i = 0; i < 200 && hi - lo > 0.0; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (reference_slope(mid, p) < h) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

Vec2 brute_force_cell_min(const Vec2& H, const Vec2& J_prev, const CellParams& p, int grid) {
  const auto f = [&](const Vec2& J) {
    const double u = reference_energy(J, p);
    if (!std::isfinite(u)) return kInf;
    const Vec2 d = J - J_prev;
    return u - H.dot(J) + p.pinning * std::sqrt(d.squaredNorm() + p.eps);
  };
  double best = kInf;
  double half = p.saturation;
  Vec2 c = grid_search(f, Vec2::Zero(), half, std::max(grid, 3), best);
  half = 3.0 * 2.0 * half / (std::max(grid, 3) - 1);
  constexpr int n = 31;
  while (half > 1e-15 * p.saturation) {
    double b = kInf;
    const Vec2 next = grid_search(f, c, half, n, b);
    if (b <= best) {
      best = b;
      c = next;
    }
    half = 3.0 * 2.0 * half / (n - 1);
  }
  return c;
}

std::vector<Vec2> brute_force_joint_min(const Vec2& B, std::span<const Vec2> J_prev, const MaterialModel& m) {
  const std::size_t K = m.size();
  const int n = static_cast<int>(2 * K);
  const auto f = [&](const Eigen::VectorXd& x) {
    Vec2 total = Vec2::Zero();
    double v = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const Vec2 J(x[2 * k], x[2 * k + 1]);
      const auto& p = m.cells[k];
      const double u = reference_energy(J, p);
      if (!std::isfinite(u)) return kInf;
      const Vec2 d = J - J_prev[k];
      v += u + p.pinning * std::sqrt(d.squaredNorm() + p.eps);
      total += J;
    }
    return v + 0.5 * m.nu0 * (B - total).squaredNorm();
  };

  Eigen::VectorXd x(n);
  for (std::size_t k = 0; k < K; ++k) {
    x[2 * k] = J_prev[k].x();
    x[2 * k + 1] = J_prev[k].y();
  }
  double fx = f(x);

  // Coarse grid over all cells jointly when that is affordable.
  if (K <= 2) {
    constexpr int g = 21;
    std::vector<std::vector<Vec2>> pts(K);
    for (std::size_t k = 0; k < K; ++k) {
      const double s = m.cells[k].saturation;
      for (int i = 0; i < g; ++i) {
        for (int j = 0; j < g; ++j) {
          const Vec2 J(-s + 2.0 * s * i / (g - 1), -s + 2.0 * s * j / (g - 1));
          if (J.norm() < s) pts[k].push_back(J);
        }
      }
    }
    Eigen::VectorXd y(n);
    const auto visit = [&](auto&& self, std::size_t k) -> void {
      if (k == K) {
        const double v = f(y);
        if (v < fx) {
          fx = v;
          x = y;
        }
        return;
      }
      for (const auto& J : pts[k]) {
        y[2 * k] = J.x();
        y[2 * k + 1] = J.y();
        self(self, k + 1);
      }
    };
    visit(visit, 0);
  }

  // Poll directions: coordinates, differences of equal components of two
  // cells (the low-curvature valley of the coupling term), and their negatives.
  std::vector<Eigen::VectorXd> dirs;
  for (int i = 0; i < n; ++i) dirs.push_back(Eigen::VectorXd::Unit(n, i));
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t l = k + 1; l < K; ++l) {
      for (int c = 0; c < 2; ++c) {
        Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
        d[2 * k + c] = 1.0;
        d[2 * l + c] = -1.0;
        dirs.push_back(d);
      }
    }
  }
  const std::size_t base = dirs.size();
  for (std::size_t i = 0; i < base; ++i) dirs.push_back(-dirs[i]);

  double smin = kInf;
  for (const auto& c : m.cells) smin = std::min(smin, c.saturation);
  double step = 0.05 * smin;
  while (step > 1e-14 * smin) {
    bool improved = true;
    while (improved) {
      improved = false;
      for (const auto& d : dirs) {
        const Eigen::VectorXd y = x + step * d;
        const double v = f(y);
        if (v < fx) {
          fx = v;
          x = y;
          improved = true;
        }
      }
    }
    step *= 0.5;
  }
  std::vector<Vec2> out(K);
  for (std::size_t k = 0; k < K; ++k) out[k] = Vec2(x[2 * k], x[2 * k + 1]);
  return out;
}

std::vector<double> scalar_play_reference(std::span<const double> H, const CellParams& p, double J0) {
  std::vector<double> out;
  out.reserve(H.size());
  double J = J0;
  for (const double h : H) {
    const double reduced = h - reference_slope(J, p);
    if (reduced > p.pinning) {
      J = signed_inverse(h - p.pinning, p);
    } else if (reduced < -p.pinning) {
      J = signed_inverse(h + p.pinning, p);
    }
    out.push_back(J);
  }
  return out;
}

namespace {

using mp = boost::multiprecision::cpp_bin_float_50;

struct MpProblem {
  struct Element {
    std::array<int, 3> node;
    std::array<mp, 3> x;
    std::array<mp, 3> y;
    double source = 0.0;
  };
  std::vector<Element> elements;
  std::vector<int> free_of_node;
  std::vector<mp> fixed_value;  // wall value per node (unused for free nodes)
  std::size_t nf = 0;
  std::size_t K = 0;
  const MaterialModel* m = nullptr;
  std::vector<Vec2> J_prev;
  mp nu0;

  // +inf is signalled through `ok`.
  mp value(const std::vector<mp>& v, bool& ok) const {
    const mp pi = boost::math::constants::pi<mp>();
    ok = true;
    mp f = 0;
    for (std::size_t e = 0; e < elements.size(); ++e) {
      const auto& el = elements[e];
      std::array<mp, 3> A;
      for (int i = 0; i < 3; ++i) {
        const int fi = free_of_node[el.node[i]];
        A[i] = fi >= 0 ? v[fi] : fixed_value[el.node[i]];
      }
      // A = a + b x + c y through the three vertices (Cramer's rule)
      const mp det = (el.x[1] - el.x[0]) * (el.y[2] - el.y[0]) - (el.x[2] - el.x[0]) * (el.y[1] - el.y[0]);
      const mp b = ((A[1] - A[0]) * (el.y[2] - el.y[0]) - (A[2] - A[0]) * (el.y[1] - el.y[0])) / det;
      const mp c = ((el.x[1] - el.x[0]) * (A[2] - A[0]) - (el.x[2] - el.x[0]) * (A[1] - A[0])) / det;
      const mp area = det / 2;
      mp bx = c;
      mp by = -b;
      mp density = 0;
      for (std::size_t k = 0; k < K; ++k) {
        const auto& p = m->cells[k];
        const mp jx = v[nf + 2 * (e * K + k)];
        const mp jy = v[nf + 2 * (e * K + k) + 1];
        const mp r = sqrt(jx * jx + jy * jy);
        if (r >= mp(p.saturation)) {
          ok = false;
          return 0;
        }
        density -= mp(p.form_coeff) * mp(p.field_scale) * mp(p.saturation) / pi *
                   log(cos(pi * r / (2 * mp(p.saturation))));
        const mp dx = jx - mp(J_prev[e * K + k].x());
        const mp dy = jy - mp(J_prev[e * K + k].y());
        density += mp(p.pinning) * sqrt(dx * dx + dy * dy + mp(p.eps));
        bx -= jx;
        by -= jy;
      }
      density += nu0 / 2 * (bx * bx + by * by);
      f += area * density;
      if (el.source != 0.0) f -= mp(el.source) * area * (A[0] + A[1] + A[2]) / 3;
    }
    return f;
  }
};

}  // namespace

DiscreteMinimum brute_force_discrete_min(const FeSpace& space, const MaterialModel& m,
                                         std::span<const Vec2> J_prev, std::span<const double> walls,
                                         SourceCurrent source) {
  const Mesh& mesh = space.mesh();
  const std::size_t ne = mesh.num_triangles();
  const std::size_t K = m.size();
  if (J_prev.size() != ne * K) throw Error("brute_force_discrete_min: J_prev has the wrong size");
  if (static_cast<int>(walls.size()) != space.num_walls()) throw Error("brute_force_discrete_min: wrong wall count");

  MpProblem P;
  P.m = &m;
  P.K = K;
  P.nu0 = 1 / (4 * boost::math::constants::pi<mp>() / mp(10000000));
  P.J_prev.assign(J_prev.begin(), J_prev.end());
  P.free_of_node.assign(mesh.num_nodes(), -1);
  P.fixed_value.assign(mesh.num_nodes(), 0);
  for (std::size_t n = 0; n < mesh.num_nodes(); ++n) {
    const int w = space.wall_of(static_cast<int>(n));
    if (w >= 0) {
      P.fixed_value[n] = walls[w];
    } else {
      P.free_of_node[n] = static_cast<int>(P.nf++);
    }
  }
  double max_src = 0.0;
  for (std::size_t e = 0; e < ne; ++e) {
    MpProblem::Element el;
    el.node = mesh.triangles()[e].nodes;
    for (int i = 0; i < 3; ++i) {
      el.x[i] = mesh.nodes()[el.node[i]].x();
      el.y[i] = mesh.nodes()[el.node[i]].y();
    }
    el.source = source.empty() ? 0.0 : source[e];
    max_src = std::max(max_src, std::abs(el.source));
    P.elements.push_back(el);
  }

  const std::size_t n = P.nf + 2 * ne * K;
  const double L = std::sqrt(mesh.total_area());
  double a_scale = std::max(m.total_saturation() * L, kMu0 * max_src * L * L);
  for (const double w : walls) a_scale = std::max(a_scale, std::abs(w));
  std::vector<double> scale(n);
  for (std::size_t i = 0; i < n; ++i) {
    scale[i] = i < P.nf ? a_scale : m.cells[((i - P.nf) / 2) % K].saturation;
  }

  std::vector<mp> x(n, mp(0));
  bool ok = true;
  mp fx = P.value(x, ok);
  if (!ok) throw DomainError("brute_force_discrete_min: zero start outside the domain");

  const auto gradient = [&](const std::vector<mp>& at, double rel_h) {
    std::vector<mp> g(n);
    std::vector<mp> y = at;
    for (std::size_t i = 0; i < n; ++i) {
      const mp h = mp(rel_h * scale[i]);
      bool ok1 = true;
      bool ok2 = true;
      y[i] = at[i] + h;
      const mp fp = P.value(y, ok1);
      y[i] = at[i] - h;
      const mp fm = P.value(y, ok2);
      y[i] = at[i];
      if (!ok1 || !ok2) throw DomainError("brute_force_discrete_min: difference stencil left the domain");
      g[i] = (fp - fm) / (2 * h);
    }
    return g;
  };

  DiscreteMinimum out;
  double gnorm = kInf;
  for (int it = 0; it < 200; ++it) {
    const auto g = gradient(x, 1e-20);
    Eigen::VectorXd gd(n);
    for (std::size_t i = 0; i < n; ++i) gd[i] = static_cast<double>(g[i]) * scale[i];
    gnorm = gd.cwiseAbs().maxCoeff() / (std::abs(static_cast<double>(fx)) + 1.0);
    out.iterations = it;
    if (gnorm < 1e-24) break;

    // Hessian in scaled variables from differences of the gradient.
    Eigen::MatrixXd Hs(n, n);
    for (std::size_t j = 0; j < n; ++j) {
      const mp h = mp(1e-12 * scale[j]);
      std::vector<mp> y = x;
      y[j] = x[j] + h;
      const auto gp = gradient(y, 1e-20);
      y[j] = x[j] - h;
      const auto gm = gradient(y, 1e-20);
      for (std::size_t i = 0; i < n; ++i) {
        Hs(i, j) = static_cast<double>((gp[i] - gm[i]) / (2 * h)) * scale[i] * scale[j];
      }
    }
    Hs = 0.5 * (Hs + Hs.transpose());
    Eigen::VectorXd ds;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(Hs);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      ds = -ldlt.solve(gd);
    }
    if (ds.size() != static_cast<Eigen::Index>(n) || !(ds.dot(gd) < 0.0)) ds = -gd;

    mp slope = 0;
    for (std::size_t i = 0; i < n; ++i) slope += g[i] * mp(ds[i] * scale[i]);
    double t = 1.0;
    bool moved = false;
    for (int bt = 0; bt < 200; ++bt, t *= 0.5) {
      std::vector<mp> y = x;
      for (std::size_t i = 0; i < n; ++i) y[i] += mp(t * ds[i] * scale[i]);
      bool ok1 = true;
      const mp fy = P.value(y, ok1);
      if (ok1 && fy <= fx + mp(1e-4) * mp(t) * slope) {
        x = std::move(y);
        fx = fy;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }

  out.free_coeffs.resize(static_cast<Eigen::Index>(P.nf));
  for (std::size_t i = 0; i < P.nf; ++i) out.free_coeffs[i] = static_cast<double>(x[i]);
  out.J.resize(ne * K);
  for (std::size_t i = 0; i < ne * K; ++i) {
    out.J[i] = Vec2(static_cast<double>(x[P.nf + 2 * i]), static_cast<double>(x[P.nf + 2 * i + 1]));
  }
  out.objective = static_cast<double>(fx);
  out.gradient_norm = gnorm;
  return out;
}

}  // namespace hystfem::oracle
