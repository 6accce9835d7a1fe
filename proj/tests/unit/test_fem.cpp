#include <Eigen/Dense>

#include "common.hpp"
#include "hystfem/errors.hpp"
#include "hystfem/fem.hpp"
#include "hystfem/linsolve.hpp"
#include "hystfem/oracle.hpp"
#include "hystfem/solvers.hpp"

using namespace hystfem;
using test::rel_diff;
using test::W1;
using test::W2;
using test::G1;
using test::G2;

namespace {

Mesh vertical_walls(int n) { return test::grid_square(n, {G1, W2, G2, W1}); }
Mesh horizontal_walls(int n) { return test::grid_square(n, {W1, G1, W2, G2}); }

FeSpace small_tjoint() { return FeSpace(generate_tjoint(TJointParams{.mesh_size = 0.2})); }

PolarizationState random_state(const FeSpace& space, const MaterialModel& m, test::Rng& rng) {
  PolarizationState s(space.num_elements(), m.size());
  for (std::size_t e = 0; e < space.num_elements(); ++e) {
    for (std::size_t k = 0; k < m.size(); ++k) {
      s.J[e * m.size() + k] = test::random_in_disk(rng, 0.0, 0.8 * m.cells[k].saturation);
      s.J_prev[e * m.size() + k] = test::random_in_disk(rng, 0.0, 0.8 * m.cells[k].saturation);
    }
  }
  return s;
}

PotentialField random_field(const FeSpace& space, test::Rng& rng, double scale) {
  PotentialField a = space.zero_field();
  for (Eigen::Index i = 0; i < a.free_coeffs.size(); ++i) a.free_coeffs[i] = test::uniform(rng, -scale, scale);
  for (std::size_t w = 1; w < a.wall_constants.size(); ++w) a.wall_constants[w] = test::uniform(rng, -scale, scale);
  return a;
}

}  // namespace

TEST_CASE("curl of linear potentials") {
  const FeSpace v(vertical_walls(4));
  const auto bx = curl2d(v, v.interpolate([](const Vec2& p) { return p.x(); }));
  for (const auto& b : bx) CHECK((b - Vec2(0, -1)).norm() < 1e-14);

  const FeSpace h(horizontal_walls(4));
  const auto by = curl2d(h, h.interpolate([](const Vec2& p) { return p.y(); }));
  for (const auto& b : by) CHECK((b - Vec2(1, 0)).norm() < 1e-14);

  const auto bc = curl2d(h, h.interpolate([](const Vec2&) { return 0.7; }));
  for (const auto& b : bc) CHECK(b.norm() < 1e-14);
}

TEST_CASE("wall constants") {
  const FeSpace space = small_tjoint();
  const auto zero = wall_constants(std::vector<double>{0, 0, 0}, space.topology());
  for (double c : zero) CHECK(c == 0.0);
  const double phi = 0.37;
  const auto c = wall_constants(std::vector<double>{phi, -phi, 0}, space.topology());
  REQUIRE(c.size() == 3);
  CHECK(c[0] == 0.0);
  CHECK(c[1] == doctest::Approx(phi).epsilon(1e-15));
  CHECK(std::abs(c[2]) < 1e-15);
  CHECK_THROWS_WITH_AS(wall_constants(std::vector<double>{1, 1, -1}, space.topology()),
                       doctest::Contains("flux balance"), FluxBalanceError);
}

TEST_CASE("walls and gates must alternate") {
  CHECK_THROWS_AS(FeSpace(test::grid_square(2, {W1, W2, G1, G2})), FluxBalanceError);
  CHECK_THROWS_AS(FeSpace(test::grid_square(2, {G1, G2, G1, G2})), Error);
}

TEST_CASE("corner nodes belong to the walls") {
  const FeSpace space = small_tjoint();
  for (const auto& seg : space.mesh().boundary_loop()) {
    if (!seg.label.is_gate()) continue;
    CHECK(space.wall_of(seg.nodes.front()) >= 0);
    CHECK(space.wall_of(seg.nodes.back()) >= 0);
    for (std::size_t i = 1; i + 1 < seg.nodes.size(); ++i) CHECK(space.free_index(seg.nodes[i]) >= 0);
  }
}

TEST_CASE("gate fluxes of a linear solve match the prescription") {
  const FeSpace space(generate_tjoint(TJointParams{.mesh_size = 0.1}));
  const std::vector<Mat2> nu(space.num_elements(), kNu0 * Mat2::Identity());
  const SparseMatrix K = assemble_tangent(space, nu);
  const MaterialModel m = five_cell_material();
  const PolarizationState zero(space.num_elements(), m.size());
  test::Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const double f1 = test::uniform(rng, -1, 1);
    const double f2 = test::uniform(rng, -1, 1);
    const std::vector<double> fluxes = {f1, f2, -f1 - f2};
    PotentialField a = space.zero_field();
    a.wall_constants = wall_constants(fluxes, space.topology());
    a.free_coeffs = solve_spd(K, potential_residual(space, a, zero, m));
    const auto got = gate_fluxes(space, a);
    for (int g = 0; g < 3; ++g) CHECK(std::abs(got[g] - fluxes[g]) <= 1e-10 * std::max(std::abs(f1), std::abs(f2)));
    for (std::size_t n = 0; n < space.mesh().num_nodes(); ++n) {
      const int w = space.wall_of(int(n));
      if (w >= 0) CHECK(space.nodal_value(a, int(n)) == a.wall_constants[w]);
    }
  }
}

TEST_CASE("P1 stiffness of the reference triangle") {
  // bottom w1, right g1, top w2, left g2; the first triangle is the reference one
  const std::vector<BoundaryEdge> edges = {{{0, 1}, W1}, {{1, 2}, G1}, {{2, 3}, W2}, {{3, 0}, G2}};
  const FeSpace space(Mesh({{0, 0}, {1, 0}, {1, 1}, {0, 1}}, {{{0, 1, 3}, 0}, {{1, 2, 3}, 0}}, edges));
  Eigen::Matrix3d expected;
  expected << 1, -0.5, -0.5, -0.5, 0.5, 0, -0.5, 0, 0.5;
  CHECK((element_matrix(space, 0, Mat2::Identity()) - expected).norm() < 1e-15);
  CHECK((element_matrix(space, 0, 3.5 * Mat2::Identity()) - 3.5 * expected).norm() < 1e-14);
}

TEST_CASE("tangent matrix: scaling, symmetry, kernel, SPD check") {
  const FeSpace space = small_tjoint();
  test::Rng rng(12);
  std::vector<Mat2> nu(space.num_elements());
  for (auto& t : nu) {
    Mat2 r = Mat2::Random();
    t = r * r.transpose() + 0.1 * Mat2::Identity();
  }
  const SparseMatrix K = assemble_tangent(space, nu);
  CHECK(K.rows() == Eigen::Index(space.num_free()));
  const Eigen::MatrixXd D(K);
  CHECK((D - D.transpose()).norm() == 0.0);

  std::vector<Mat2> scaled = nu;
  for (auto& t : scaled) t *= 2.5;
  CHECK((Eigen::MatrixXd(assemble_tangent(space, scaled)) - 2.5 * D).norm() < 1e-13 * D.norm());

  const Eigen::MatrixXd all(assemble_tangent_all_nodes(space, nu));
  const Eigen::VectorXd ones = Eigen::VectorXd::Constant(all.rows(), 1.0);
  CHECK((all * ones).norm() < 1e-12 * all.norm());

  nu[5] << 1, 2, 2, 1;
  CHECK_THROWS_WITH(assemble_tangent(space, nu), doctest::Contains("element 5"));
}

TEST_CASE("objective of the zero state") {
  const FeSpace space = small_tjoint();
  MaterialModel m = five_cell_material(0.0);
  const PolarizationState s(space.num_elements(), m.size());
  CHECK(objective_value(space, space.zero_field(), s, m) == 0.0);
  m = five_cell_material(1e-6);
  double chi = 0.0;
  for (const auto& c : m.cells) chi += c.pinning;
  CHECK(rel_diff(objective_value(space, space.zero_field(), s, m), chi * 1e-3 * space.mesh().total_area()) < 1e-12);
}

TEST_CASE("objective outside the saturation disk") {
  const FeSpace space = small_tjoint();
  const MaterialModel m = five_cell_material();
  PolarizationState s(space.num_elements(), m.size());
  s.J[3 * m.size() + 4] = Vec2(0.05, 0.0);
  CHECK_THROWS_AS(objective_value(space, space.zero_field(), s, m), DomainError);
  CHECK(std::isinf(objective_value_or_inf(space, space.zero_field(), s, m)));
  const PolarizationState s0(space.num_elements(), m.size());
  CHECK(std::isinf(objective_difference(space, space.zero_field(), s, space.zero_field(), s0, m)));
}

TEST_CASE("residuals are the negative objective gradient") {
  const FeSpace space = small_tjoint();
  const MaterialModel m = five_cell_material(1e-6, 1);
  test::Rng rng(13);
  std::vector<double> src(space.num_elements());
  for (auto& s : src) s = test::uniform(rng, -1e5, 1e5);
  for (int trial = 0; trial < 5; ++trial) {
    const PotentialField a = random_field(space, rng, 0.2);
    const PolarizationState s = random_state(space, m, rng);

    const auto f_of_a = [&](const Eigen::VectorXd& x) {
      PotentialField b = a;
      b.free_coeffs = x;
      return objective_value(space, b, s, m, src);
    };
    const Eigen::VectorXd fd = oracle::fd_gradient(f_of_a, a.free_coeffs, 1e-6);
    const Vector r = potential_residual(space, a, s, m, src);
    CHECK((r + fd).norm() < 1e-7 * fd.norm());

    const auto g = polarization_residual(space, a, s, m);
    for (int probe = 0; probe < 20; ++probe) {
      const std::size_t e = std::size_t(test::uniform(rng, 0, double(space.num_elements()) - 1e-9));
      const std::size_t k = std::size_t(test::uniform(rng, 0, double(m.size()) - 1e-9));
      const auto f_of_j = [&](const Eigen::VectorXd& x) {
        PolarizationState t = s;
        t.J[e * m.size() + k] = Vec2(x[0], x[1]);
        return objective_difference(space, a, t, a, s, m, src);
      };
      const Eigen::VectorXd fdj =
          oracle::fd_gradient(f_of_j, Eigen::Vector2d(s.J[e * m.size() + k]), 1e-7 * m.cells[k].saturation);
      const Vec2 expected = -space.area(e) * g[e * m.size() + k];
      CHECK((Vec2(fdj) - expected).norm() < 1e-6 * expected.norm());
    }
  }
}

TEST_CASE("objective difference agrees with differenced objective values") {
  const FeSpace space = small_tjoint();
  const MaterialModel m = five_cell_material(1e-6, 1);
  test::Rng rng(14);
  const PotentialField a0 = random_field(space, rng, 0.2);
  const PolarizationState s0 = random_state(space, m, rng);
  PotentialField a1 = a0;
  PolarizationState s1 = s0;
  for (Eigen::Index i = 0; i < a1.free_coeffs.size(); ++i) a1.free_coeffs[i] += test::uniform(rng, -0.01, 0.01);
  for (std::size_t i = 0; i < s1.J.size(); ++i) s1.J[i] *= 0.99;
  const double direct = objective_value(space, a1, s1, m) - objective_value(space, a0, s0, m);
  CHECK(std::abs(objective_difference(space, a1, s1, a0, s0, m) - direct) <
        1e-10 * std::abs(objective_value(space, a0, s0, m)));
}

TEST_CASE("newton right-hand side") {
  const FeSpace space = small_tjoint();
  const MaterialModel m = five_cell_material(1e-6, 1);
  const std::vector<double> walls = wall_constants(std::vector<double>{0.3, -0.1, -0.2}, space.topology());

  SUBCASE("zero state with moving walls: the lifting load") {
    PotentialField a = space.zero_field();
    a.wall_constants = walls;
    const PolarizationState s(space.num_elements(), m.size());
    // -int nu0 Curl A_g . Curl A' dx from the all-node stiffness
    const std::vector<Mat2> nu(space.num_elements(), m.nu0 * Mat2::Identity());
    const SparseMatrix all = assemble_tangent_all_nodes(space, nu);
    Eigen::VectorXd nodal = Eigen::VectorXd::Zero(Eigen::Index(space.mesh().num_nodes()));
    for (std::size_t n = 0; n < space.mesh().num_nodes(); ++n) {
      if (space.wall_of(int(n)) >= 0) nodal[Eigen::Index(n)] = walls[space.wall_of(int(n))];
    }
    const Eigen::VectorXd load_all = -(all * nodal);
    Vector load(space.num_free());
    for (std::size_t n = 0; n < space.mesh().num_nodes(); ++n) {
      if (space.free_index(int(n)) >= 0) load[space.free_index(int(n))] = load_all[Eigen::Index(n)];
    }
    const std::vector<Vec2> no_elimination(space.num_elements(), Vec2::Zero());
    CHECK((assemble_newton_rhs(space, a, s, m, no_elimination) - load).norm() < 1e-12 * load.norm());
    CHECK((potential_residual(space, a, s, m) - load).norm() < 1e-12 * load.norm());
  }

  SUBCASE("vanishes at the minimizer") {
    const PolarizationState init(space.num_elements(), m.size());
    NewtonConfig cfg;
    cfg.rel_tol = 1e-14;
    cfg.residual_cap = 1e-10;
    const auto res = newton_solve(space, space.zero_field(), init, m, cfg, walls);
    std::vector<Vec2> g_eff(space.num_elements());
    double scale = 0.0;
    for (std::size_t e = 0; e < space.num_elements(); ++e) {
      const Vec2 B = space.element_curl(res.a, e);
      g_eff[e] = local_tangent(B, res.state.cells(e), res.state.prev_cells(e), m).g_eff;
      scale = std::max(scale, space.area(e) * m.nu0 * B.norm());
    }
    const Vector rhs = assemble_newton_rhs(space, res.a, res.state, m, g_eff);
    CHECK(rhs.lpNorm<Eigen::Infinity>() < 1e-9 * scale);
  }

  SUBCASE("the newton direction descends") {
    test::Rng rng(15);
    PotentialField a = random_field(space, rng, 0.05);
    a.wall_constants = walls;
    const PolarizationState s = random_state(space, m, rng);
    std::vector<LocalTangent> lt;
    std::vector<Mat2> nu;
    std::vector<Vec2> g_eff;
    for (std::size_t e = 0; e < space.num_elements(); ++e) {
      lt.push_back(local_tangent(space.element_curl(a, e), s.cells(e), s.prev_cells(e), m));
      nu.push_back(lt.back().nu_eff);
      g_eff.push_back(lt.back().g_eff);
    }
    PotentialField step = space.zero_field();
    step.free_coeffs = solve_spd(assemble_tangent(space, nu), assemble_newton_rhs(space, a, s, m, g_eff));
    std::vector<Vec2> dJ(s.J.size());
    for (std::size_t e = 0; e < space.num_elements(); ++e) {
      lt[e].back_substitute(space.element_curl(step, e), std::span<Vec2>(dJ.data() + e * m.size(), m.size()));
    }
    const double f0 = objective_value(space, a, s, m);
    for (double t : {1e-2, 1e-3, 1e-4}) {
      PotentialField at = a;
      at.free_coeffs += t * step.free_coeffs;
      PolarizationState st = s;
      for (std::size_t i = 0; i < st.J.size(); ++i) st.J[i] += t * dJ[i];
      CHECK(objective_difference(space, at, st, a, s, m) < 0.0);
      CHECK(objective_value(space, at, st, m) < f0);
    }
  }
}

TEST_CASE("field intensity") {
  const FeSpace space = small_tjoint();
  MaterialModel m;
  m.cells = {test::table_cell(2), test::table_cell(3)};
  PolarizationState s(space.num_elements(), 2);
  s.J[0] = Vec2(0.2, 0.0);
  s.J[1] = Vec2(0.1, 0.05);
  const ElementField B(space.num_elements(), Vec2(0.5, 0.1));
  const auto H = field_intensity(space, B, s, m);
  CHECK((H[0] - kNu0 * Vec2(0.2, 0.05)).norm() < 1e-9);
  CHECK((H[1] - kNu0 * Vec2(0.5, 0.1)).norm() < 1e-9);
}
