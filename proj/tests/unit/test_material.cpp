#include <Eigen/Eigenvalues>
#include <boost/math/constants/constants.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include "common.hpp"
#include "hystfem/errors.hpp"
#include "hystfem/material.hpp"
#include "hystfem/oracle.hpp"

using namespace hystfem;
using test::rel_diff;

namespace {

double cell_objective(const Vec2& J, const Vec2& H, const Vec2& J_prev, const CellParams& p) {
  return oracle::reference_energy(J, p) - H.dot(J) + p.pinning * std::sqrt((J - J_prev).squaredNorm() + p.eps);
}

CellParams random_cell(test::Rng& rng, double eps) {
  CellParams p = test::table_cell(1 + int(test::uniform(rng, 0.0, 4.999)), eps);
  p.form_coeff = test::uniform(rng, 0.0, 1.0) < 0.5 ? 1 : 2;
  return p;
}

}  // namespace

TEST_CASE("regularized norm") {
  CHECK(reg_norm(Vec2(3, 4), 0.0) == 5.0);
  CHECK(reg_norm(Vec2(0, 0), 1e-8) == doctest::Approx(1e-4).epsilon(1e-15));
  test::Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const Vec2 x(test::uniform(rng, -2, 2), test::uniform(rng, -2, 2));
    const double eps = std::pow(10.0, test::uniform(rng, -12, 0));
    const double r = reg_norm(x, eps);
    CHECK(x.norm() <= r);
    CHECK(r <= x.norm() + std::sqrt(eps) * (1 + 1e-15));
  }
}

TEST_CASE("energy density") {
  const CellParams p = test::table_cell(3);
  CHECK(energy_density(Vec2::Zero(), p) == 0.0);
  // The pole is logarithmic: U(0.999999 J_s) / U(0.5 J_s) = log sin(pi/2 1e-6) / log cos(pi/4) = 38.5...
  const double half = energy_density(Vec2(0.5 * p.saturation, 0), p);
  const double ratio = std::log(std::sin(std::numbers::pi / 2 * 1e-6)) / std::log(std::cos(std::numbers::pi / 4));
  CHECK(rel_diff(energy_density(Vec2(0.999999 * p.saturation, 0), p) / half, ratio) < 1e-8);
  // ... and every further decade towards J_s adds (c A_s J_s / pi) log 10
  const double decade = p.form_coeff * p.field_scale * p.saturation / std::numbers::pi * std::log(10.0);
  double prev = half;
  for (int k = 1; k <= 12; ++k) {
    const double u = energy_density(Vec2((1 - std::pow(10.0, -k)) * p.saturation, 0), p);
    CHECK(u > prev + (k == 1 ? 0.0 : 0.99 * decade));
    prev = u;
  }
  CHECK_THROWS_AS(energy_density(Vec2(p.saturation, 0), p), DomainError);
  CHECK_THROWS_AS(energy_density(Vec2(0.4, 0.3), p), DomainError);

  test::Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const Vec2 J = test::random_in_disk(rng, 0.0, 0.999 * p.saturation);
    CHECK(energy_density(J, p) >= 0.0);
  }
}

TEST_CASE("energy density matches a 50-digit evaluation") {
  using mp = boost::multiprecision::cpp_bin_float_50;
  for (int form : {1, 2}) {
    CellParams p = test::table_cell(3, 1e-10, form);
    REQUIRE(p.saturation == 0.44);
    REQUIRE(p.field_scale == 65.0);
    const mp pi = boost::math::constants::pi<mp>();
    const mp js = mp(0.44);
    const mp ref = -(mp(form) * 65 * js / pi) * log(cos(pi / 2 * (mp(0.22) / js)));
    CHECK(rel_diff(energy_density(Vec2(0.22, 0), p), ref.convert_to<double>()) < 1e-14);
  }
}

TEST_CASE("energy gradient") {
  const CellParams p = test::table_cell(2);
  CHECK(energy_gradient(Vec2::Zero(), p) == Vec2::Zero());
  CHECK_THROWS_AS(energy_gradient(Vec2(0.3, 0), p), DomainError);

  test::Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const CellParams c = random_cell(rng, 1e-10);
    const Vec2 J = test::random_in_disk(rng, 0.01 * c.saturation, 0.95 * c.saturation);
    const Vec2 g = energy_gradient(J, c);
    CHECK(std::abs(g.x() * J.y() - g.y() * J.x()) <= 1e-14 * g.norm() * J.norm());
    const auto f = [&](const Eigen::VectorXd& x) { return oracle::reference_energy(Vec2(x[0], x[1]), c); };
    const Eigen::VectorXd fd = oracle::fd_gradient(f, Eigen::Vector2d(J), 1e-6 * c.saturation);
    CHECK((g - Vec2(fd)).norm() < 1e-6 * g.norm());
  }
}

TEST_CASE("energy hessian") {
  const CellParams p = test::table_cell(4, 1e-10, 1);
  const Mat2 h0 = energy_hessian(Vec2::Zero(), p);
  const double curvature = p.gain() * std::numbers::pi / (2 * p.saturation);
  CHECK((h0 - curvature * Mat2::Identity()).norm() < 1e-13 * curvature);

  test::Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const CellParams c = random_cell(rng, 1e-10);
    const Vec2 J = test::random_in_disk(rng, 0.0, 0.95 * c.saturation);
    const Mat2 h = energy_hessian(J, c);
    CHECK(h(0, 1) == h(1, 0));
    const Eigen::SelfAdjointEigenSolver<Mat2> es(h);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    const auto grad = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
      return energy_gradient(Vec2(x[0], x[1]), c);
    };
    const Eigen::MatrixXd fd = oracle::fd_jacobian(grad, Eigen::Vector2d(J), 1e-6 * c.saturation);
    CHECK((h - fd).norm() < 1e-5 * h.norm());
  }
}

TEST_CASE("cell update: trivial cases") {
  const CellParams p = test::table_cell(2);
  CHECK(cell_update_H(Vec2::Zero(), Vec2::Zero(), p).norm() < 1e-15);

  CellParams p0 = p;
  p0.eps = 0.0;
  test::Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const Vec2 H = test::random_in_disk(rng, 0.0, p0.pinning);
    CHECK(cell_update_H(H, Vec2::Zero(), p0) == Vec2::Zero());
  }
  CHECK_THROWS_AS(cell_update_H(Vec2::Zero(), Vec2(0.3, 0.0), p), DomainError);
}

TEST_CASE("cell update with chi = 0 follows the anhysteretic curve") {
  CellParams p = test::table_cell(1);
  REQUIRE(p.pinning == 0.0);
  for (double h : {0.5, 5.0, 40.0, 300.0, 5000.0}) {
    const Vec2 J = cell_update_H(Vec2(h, 0), Vec2(0.02, -0.03), p);
    const double r = oracle::anhysteretic_bisection(h, p);
    CHECK(std::abs(J.x() - r) < 1e-12 * p.saturation);
    CHECK(std::abs(J.y()) < 1e-12 * p.saturation);
    CHECK(std::abs(dissipation_residual(Vec2(h, 0), J, p)) < 1e-9 * (h + p.gain()));
  }
}

TEST_CASE("cell update matches brute force for cell 2 at H = (40, 0)") {
  const CellParams p = test::table_cell(2);
  REQUIRE(p.saturation == 0.3);
  REQUIRE(p.pinning == 10.0);
  const Vec2 J = cell_update_H(Vec2(40, 0), Vec2::Zero(), p);
  const Vec2 ref = oracle::brute_force_cell_min(Vec2(40, 0), Vec2::Zero(), p);
  CHECK((J - ref).norm() < 1e-6);
  CHECK(dissipation_residual(Vec2(40, 0), J, p) < 0.0);
}

TEST_CASE("cell update properties over random instances") {
  test::Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    const CellParams p = random_cell(rng, std::pow(10.0, test::uniform(rng, -12, -4)));
    const Vec2 J_prev = test::random_in_disk(rng, 0.0, 0.9 * p.saturation);
    const Vec2 H = test::random_in_disk(rng, 0.0, 3 * p.gain() + 2 * p.pinning);
    const Vec2 J = cell_update_H(H, J_prev, p);
    CHECK(J.norm() < (1 - 1e-12) * p.saturation);
    const double f = cell_objective(J, H, J_prev, p);
    CHECK(f <= cell_objective(J_prev, H, J_prev, p) + 1e-12 * std::abs(f));
    CHECK(f <= cell_objective(Vec2::Zero(), H, J_prev, p) + 1e-12 * std::abs(f));
    const double res = dissipation_residual(H, J, p);
    if (p.pinning > 0.0) CHECK(res < 0.0);
    CHECK(res <= 1e-9 * (H.norm() + p.gain()));
  }
}

TEST_CASE("eps to zero converges to the exact update") {
  CellParams p = test::table_cell(3);
  const Vec2 J_prev(0.1, -0.05);
  const Vec2 H(45.0, 30.0);
  p.eps = 0.0;
  const Vec2 exact = cell_update_H(H, J_prev, p);
  double prev = std::numeric_limits<double>::infinity();
  for (double eps : {1e-4, 1e-6, 1e-8, 1e-10}) {
    p.eps = eps;
    const double err = (cell_update_H(H, J_prev, p) - exact).norm();
    CHECK(err < prev);
    CHECK(err <= 10 * std::sqrt(eps));
    prev = err;
  }
}

TEST_CASE("scalar play operator") {
  CellParams p = test::table_cell(4);
  p.eps = 0.0;
  const double chi = p.pinning;
  std::vector<double> H;
  for (int i = 0; i <= 400; ++i) H.push_back(6 * chi * i / 400.0);
  for (int i = 1; i <= 800; ++i) H.push_back(6 * chi - 12 * chi * i / 800.0);
  for (int i = 1; i <= 800; ++i) H.push_back(-6 * chi + 12 * chi * i / 800.0);
  const auto ref = oracle::scalar_play_reference(H, p);

  Vec2 J = Vec2::Zero();
  for (std::size_t i = 0; i < H.size(); ++i) {
    J = cell_update_H(Vec2(H[i], 0), J, p);
    REQUIRE(J.y() == 0.0);
    CHECK(std::abs(J.x() - ref[i]) < 1e-12);
    if (i <= 400 && H[i] <= chi) CHECK(J.x() == 0.0);
    if (i <= 400 && H[i] > chi) CHECK(std::abs(radial_slope(J.x(), p) - (H[i] - chi)) < 1e-9);
  }
}

TEST_CASE("coercive field equals chi") {
  for (int k = 2; k <= 5; ++k) {
    CellParams p = test::table_cell(k);
    p.eps = 0.0;
    const Vec2 top = cell_update_H(Vec2(10 * p.gain() + p.pinning, 0), Vec2::Zero(), p);
    REQUIRE(top.x() > 0.0);
    double lo = -10 * p.pinning - 1;
    double hi = 0.0;
    while (hi - lo > 1e-12) {
      const double mid = 0.5 * (lo + hi);
      (cell_update_H(Vec2(mid, 0), top, p).x() > 0.0 ? hi : lo) = mid;
    }
    CHECK(std::abs(-0.5 * (lo + hi) - p.pinning) < 1e-8);
  }
}

TEST_CASE("local update: zero field stays demagnetized") {
  const MaterialModel m = five_cell_material();
  const std::vector<Vec2> prev(m.size(), Vec2::Zero());
  for (const auto& J : local_polarization_update(Vec2::Zero(), prev, m)) CHECK(J.norm() < 1e-15);
}

TEST_CASE("local update: one anhysteretic cell balances nu0 (B - J)") {
  MaterialModel m;
  m.cells = {test::table_cell(1)};
  const CellParams& p = m.cells[0];
  for (double b : {1e-6, 1e-5, 0.05, 0.2, 1.0}) {
    const Vec2 dir = Vec2(3, -4).normalized();
    const std::vector<Vec2> prev = {Vec2::Zero()};
    const auto J = local_polarization_update(b * dir, prev, m);
    // bisection on u'(r) = nu0 (b - r)
    double lo = 0.0;
    double hi = std::min(b, p.saturation);
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (p.gain() * std::tan(std::numbers::pi * mid / (2 * p.saturation)) < m.nu0 * (b - mid) ? lo : hi) = mid;
    }
    CHECK(std::abs(J[0].dot(dir) - 0.5 * (lo + hi)) < 1e-12 * p.saturation);
    CHECK(std::abs(J[0].x() * dir.y() - J[0].y() * dir.x()) < 1e-14);
    const Vec2 balance = energy_gradient(J[0], p) - m.nu0 * (b * dir - J[0]);
    CHECK(balance.norm() < 1e-9 * (m.nu0 * b));
  }
}

TEST_CASE("local update: two cells at B = (1, 0) match brute force") {
  MaterialModel m;
  m.cells = {test::table_cell(1), test::table_cell(2)};
  const std::vector<Vec2> prev(2, Vec2::Zero());
  const auto J = local_polarization_update(Vec2(1.0, 0), prev, m);
  const auto ref = oracle::brute_force_joint_min(Vec2(1.0, 0), prev, m);
  for (int k = 0; k < 2; ++k) CHECK((J[k] - ref[k]).norm() < 1e-6);
}

TEST_CASE("local update: random five-cell states satisfy the cell bounds") {
  const MaterialModel m = five_cell_material(1e-6, 1);
  test::Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    std::vector<Vec2> prev;
    for (const auto& c : m.cells) prev.push_back(test::random_in_disk(rng, 0.0, 0.9 * c.saturation));
    const Vec2 B = test::random_in_disk(rng, 0.0, 2.0);
    const auto J = local_polarization_update(B, prev, m);
    Vec2 total = Vec2::Zero();
    for (const auto& j : J) total += j;
    const Vec2 H = m.nu0 * (B - total);
    for (std::size_t k = 0; k < m.size(); ++k) {
      CHECK(J[k].norm() < (1 - 1e-12) * m.cells[k].saturation);
      CHECK(dissipation_residual(H, J[k], m.cells[k]) <= 1e-6 * m.max_pinning());
    }
  }
}

TEST_CASE("loss density") {
  MaterialModel m;
  m.cells = {test::table_cell(2)};
  const std::vector<Vec2> J = {Vec2(0.15, 0.05)};
  CHECK(loss_density(J, J, m, 0.01) == 0.0);
  const std::vector<Vec2> prev = {Vec2(0.05, 0.05)};
  CHECK(loss_density(J, prev, m, 0.02) == doctest::Approx(50.0).epsilon(1e-14));

  const MaterialModel five = five_cell_material(1e-2);
  std::vector<Vec2> a(5, Vec2::Zero());
  std::vector<Vec2> b(5, Vec2::Zero());
  b[0] = Vec2(0.1, 0.0);
  CHECK(loss_density(b, a, five, 0.01) == 0.0);
  CHECK_THROWS(loss_density(b, a, five, 0.0));
}

TEST_CASE("parameter validation") {
  CellParams p;
  p.form_coeff = 3;
  CHECK_THROWS_AS(p.validate(), Error);
  p = CellParams{};
  p.pinning = -1;
  CHECK_THROWS_AS(p.validate(), Error);
  MaterialModel m;
  CHECK_THROWS_AS(m.validate(), Error);
}
