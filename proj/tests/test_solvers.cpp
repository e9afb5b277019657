#include <doctest.h>

#include "oracles.hpp"

#include "glnbias/kkt.hpp"
#include "glnbias/norms.hpp"
#include "glnbias/solvers.hpp"

#include <random>
#include <set>
#include <sstream>

using namespace glnbias;

namespace {

Dataset two_points() {
  Dataset d{Matrix(2, 2), Vector(2)};
  d.inputs << 1, 0, -1, 0;
  d.labels << 1, -1;
  return d;
}

}  // namespace

TEST_CASE("gln lift places the sample in the selected blocks") {
  Dataset d{Matrix(1, 1), Vector(1)};
  d.inputs << 3;
  d.labels << 1;
  ContextMatrix c(1, 2);
  c << 1, 2;
  const auto p = lift(d, c, LiftFamily::Gln, Objective::GroupLasso, 2);
  CHECK(p.blocks() == 4);
  const auto a = oracle::dense_features(p);
  CHECK(a(0, 0) == 3);  // block (1,1)
  CHECK(a(0, 1) == 0);
  CHECK(a(0, 2) == 0);
  CHECK(a(0, 3) == 3);  // block (2,2)
  CHECK(p.groups.size() == 2);
}

TEST_CASE("plain and frelu lifts") {
  const auto p = lift(two_points(), ContextMatrix{}, LiftFamily::Plain, Objective::PlainL2);
  CHECK(p.blocks() == 1);
  CHECK(oracle::dense_features(p).row(1) == Eigen::RowVector2d(1, 0));
  Dataset d{Matrix(2, 2), Vector(2)};
  d.inputs << 1, 2, 3, 4;
  d.labels << 1, 1;
  ContextMatrix g(2, 2);
  g << 1, 0, 0, 0;
  const auto f = lift(d, g, LiftFamily::Frelu, Objective::GroupLasso);
  CHECK(f.size() == 1);
  CHECK(f.excluded == std::vector<Eigen::Index>{1});
  CHECK(f.gates.row(0) == Eigen::RowVector2d(1, 0));
  CHECK_THROWS(lift(d, g, LiftFamily::Frelu, Objective::QuadM));
}

TEST_CASE("lift identity against the model forward pass") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> ctx(1, 4);
  const int N = 12, H = 3, C = 4;
  Dataset d{Matrix(N, 3), Vector(N)};
  for (Eigen::Index k = 0; k < d.inputs.size(); ++k) d.inputs.data()[k] = normal(rng);
  for (int n = 0; n < N; ++n) d.labels[n] = n % 2 ? 1 : -1;
  ContextMatrix c(N, H);
  for (Eigen::Index k = 0; k < c.size(); ++k) c.data()[k] = ctx(rng);
  TwoLayerGLN m(H, C, 3);
  for (auto& v : m.params) v = normal(rng);
  const auto p = lift(d, c, LiftFamily::Gln, Objective::GroupLasso, C);
  const Vector lhs = p.apply(w_to_zeta(m).zeta);
  for (int n = 0; n < N; ++n) {
    CHECK(lhs[n] == doctest::Approx(d.labels[n] * forward(m, d.inputs.row(n).transpose(), context_row(c, n))).epsilon(1e-12));
  }
  // Shallow lift: one block per reachable global context.
  const auto s = lift(d, c, LiftFamily::Shallow, Objective::PlainL2);
  std::set<GlobalContext> reachable;
  for (int n = 0; n < N; ++n) reachable.insert(context_row(c, n));
  CHECK(s.blocks() == static_cast<Eigen::Index>(reachable.size()));
}

TEST_CASE("group lasso: single sample split across groups") {
  Dataset d{Matrix(1, 2), Vector(1)};
  d.inputs << 2, 0;
  d.labels << 1;
  ContextMatrix c(1, 2);
  c << 1, 1;
  const auto r = solve_group_lasso_margin(lift(d, c, LiftFamily::Gln, Objective::GroupLasso, 2));
  CHECK(r.status == SolveStatus::Optimal);
  CHECK(r.objective == doctest::Approx(0.5).epsilon(1e-7));
  CHECK((r.zeta.row(0) + r.zeta.row(2) - Eigen::RowVector2d(0.5, 0)).norm() < 1e-6);
}

TEST_CASE("group lasso on one block is the plain svm") {
  auto p = lift(two_points(), ContextMatrix{}, LiftFamily::Plain, Objective::GroupLasso);
  const auto r = solve_group_lasso_margin(p);
  CHECK(r.status == SolveStatus::Optimal);
  CHECK(r.objective == doctest::Approx(1.0).epsilon(1e-7));
  CHECK((r.zeta.row(0) - Eigen::RowVector2d(1, 0)).norm() < 1e-6);
}

TEST_CASE("contradictory samples are infeasible") {
  Dataset d{Matrix(2, 2), Vector(2)};
  d.inputs << 1, 1, 1, 1;
  d.labels << 1, -1;
  ContextMatrix c(2, 2);
  c << 1, 2, 1, 2;
  const auto p = lift(d, c, LiftFamily::Gln, Objective::GroupLasso, 2);
  CHECK_FALSE(structural_conflict(p).empty());
  CHECK(solve_group_lasso_margin(p).status == SolveStatus::Infeasible);
  CHECK(solve_quad_margin(lift(d, c, LiftFamily::Gln, Objective::QuadM, 2)).status == SolveStatus::Infeasible);
}

TEST_CASE("group lasso matches the barrier oracle and certifies") {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 15; ++rep) {
    const auto inst = oracle::planted_gln_instance(rng, 3 + rep % 4, 1 + rep % 3, 1 + rep % 2, Objective::GroupLasso);
    const auto& p = inst.problem;
    const double tol = 1e-8;
    const auto r = solve_group_lasso_margin(p, {tol, 100000, 10, std::nullopt});
    REQUIRE(r.status == SolveStatus::Optimal);
    CHECK(r.lambda.minCoeff() >= 0.0);
    CHECK(r.primal_residual <= tol);
    CHECK(r.stationarity <= tol);
    const auto ref = oracle::group_lasso_barrier(oracle::dense_features(p), p.rhs, oracle::group_columns(p), inst.planted);
    CHECK(r.objective == doctest::Approx(ref.objective).epsilon(1e-6));
    CHECK(kkt_certify(p, r.zeta).residual <= 10 * tol);
  }
}

TEST_CASE("plain svm two-point solution and duality") {
  const auto p = lift(two_points(), ContextMatrix{}, LiftFamily::Plain, Objective::PlainL2);
  const auto r = solve_quad_margin(p);
  CHECK(r.status == SolveStatus::Optimal);
  CHECK((r.zeta.row(0) - Eigen::RowVector2d(1, 0)).norm() < 1e-10);
  CHECK((r.lambda - Eigen::Vector2d(0.5, 0.5)).norm() < 1e-10);
  CHECK(r.dual_objective == doctest::Approx(r.objective).epsilon(1e-8));
  const auto k = kkt_certify(p, r.zeta);
  CHECK(k.residual < 1e-10);
  CHECK((k.lambda - Eigen::Vector2d(0.5, 0.5)).norm() < 1e-10);
}

TEST_CASE("plain svm matches support enumeration") {
  std::mt19937_64 rng(22);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::Index N = 2 + rep % 6, D = 1 + rep % 3;
    const Vector w = Vector::Random(D);
    Dataset d{Matrix(N, D), Vector(N)};
    for (Eigen::Index n = 0; n < N; ++n) {
      double s = 0.0;
      do {
        for (Eigen::Index j = 0; j < D; ++j) d.inputs(n, j) = normal(rng);
        s = w.dot(d.inputs.row(n).transpose());
      } while (std::abs(s) < 0.05 * w.norm());
      d.labels[n] = s > 0 ? 1 : -1;
    }
    const auto p = lift(d, ContextMatrix{}, LiftFamily::Plain, Objective::PlainL2);
    const auto r = solve_quad_margin(p, {1e-10, 100000, 10, std::nullopt});
    const auto ref = oracle::plain_svm_enumerate(oracle::dense_features(p));
    REQUIRE(ref.feasible);
    CHECK((r.zeta.row(0).transpose() - ref.beta).norm() < 1e-7);
    CHECK(r.dual_objective == doctest::Approx(r.objective).epsilon(1e-8));
  }
}

TEST_CASE("quad M solution is gauge invariant") {
  std::mt19937_64 rng(23);
  const auto inst = oracle::planted_gln_instance(rng, 6, 2, 2, Objective::QuadM);
  const auto& p = inst.problem;
  const auto r1 = solve_quad_margin(p);
  Matrix shift = Matrix::Zero(4, 2);
  shift.topRows(2).rowwise() += Eigen::RowVector2d(0.3, -2.0);
  shift.bottomRows(2).rowwise() -= Eigen::RowVector2d(0.3, -2.0);
  SolverOptions opt;
  opt.warm_start = r1.zeta + shift;
  const auto r2 = solve_quad_margin(p, opt);
  CHECK(r2.objective == doctest::Approx(r1.objective).epsilon(1e-7));
  const auto b1 = beta_table(GlnZeta{2, 2, r1.zeta}), b2 = beta_table(GlnZeta{2, 2, r2.zeta});
  CHECK((b1.values - b2.values).cwiseAbs().maxCoeff() < 1e-6);
  // The objective is |beta|^2 / 2 over the table.
  CHECK(r1.objective == doctest::Approx(0.5 * l2_norm_beta(GlnZeta{2, 2, r1.zeta})).epsilon(1e-8));
  CHECK(kkt_certify(p, r1.zeta).residual < 1e-6);
}

TEST_CASE("single sample quad M binds its constraint") {
  Dataset d{Matrix(1, 2), Vector(1)};
  d.inputs << 1, 2;
  d.labels << -1;
  ContextMatrix c(1, 2);
  c << 2, 1;
  const auto p = lift(d, c, LiftFamily::Gln, Objective::QuadM, 2);
  const auto r = solve_quad_margin(p);
  CHECK(r.lambda[0] > 0.0);
  CHECK(p.apply(r.zeta)[0] == doctest::Approx(1.0));
}

TEST_CASE("shallow solves one svm per context") {
  Dataset d{Matrix(4, 2), Vector(4)};
  d.inputs << 1, 0, -1, 0, 0, 2, 0, -2;
  d.labels << 1, -1, 1, -1;
  ContextMatrix c(4, 1);
  c << 1, 1, 2, 2;
  const auto p = lift(d, c, LiftFamily::Shallow, Objective::PlainL2);
  const auto r = solve_shallow(p);
  CHECK(r.status == SolveStatus::Optimal);
  for (std::size_t b = 0; b < 2; ++b) {
    const Eigen::RowVector2d expected = p.block_contexts[b][0] == 1 ? Eigen::RowVector2d(1, 0) : Eigen::RowVector2d(0, 0.5);
    CHECK((r.zeta.row(static_cast<Eigen::Index>(b)) - expected).norm() < 1e-8);
  }
  CHECK(r.objective == doctest::Approx(0.5 * (1 + 0.25)));
}

TEST_CASE("margin normalization") {
  CHECK(margin_scale(Vector::Constant(1, 4.0), {{}}, 2) == doctest::Approx(0.5));
  CHECK(margin_scale(Vector::Constant(1, 1.0), {{}}, 2) == doctest::Approx(1.0));
  Vector m(2);
  m << 4, 9;
  CHECK(margin_scale(m, {{1}, {2}}, 2) == doctest::Approx(0.5));
  m << 4, -1;
  CHECK_THROWS_AS(margin_scale(m, {{1}, {2}}, 2), std::domain_error);

  // Scaled margins: >= 1 in every context, = 1 in one.
  auto s = gen_synthetic(12, 2, 0.5, 1);
  ContextMatrix c(12, 2);
  for (int n = 0; n < 12; ++n) c.row(n) << 1 + n % 2, 1 + (n / 2) % 2;
  const auto r = solve_group_lasso_margin(lift(s.data, c, LiftFamily::Gln, Objective::GroupLasso, 2));
  AnyModel model = zeta_to_w(GlnZeta{2, 2, r.zeta * 7.0});
  const auto normalized = margin_normalize(model, s.data, c);
  const Vector margins = scores(normalized, s.data.inputs, c).cwiseProduct(s.data.labels);
  CHECK(margins.minCoeff() == doctest::Approx(1.0));
}

TEST_CASE("kkt certificates of trained and random networks") {
  const auto s = gen_synthetic(20, 2, 0.5, 5);
  ContextMatrix c(20, 2);
  for (int n = 0; n < 20; ++n) c.row(n) << 1 + n % 2, 1 + (n / 3) % 2;
  const auto r = solve_group_lasso_margin(lift(s.data, c, LiftFamily::Gln, Objective::GroupLasso, 2));
  REQUIRE(r.status == SolveStatus::Optimal);
  const auto exact = kkt_certify(zeta_to_w(GlnZeta{2, 2, r.zeta}), s.data, c);
  CHECK(exact.residual < 1e-5);
  CHECK_FALSE(exact.support.empty());
  CHECK(exact.lambda.minCoeff() >= 0.0);

  // Random weights that happen to separate still fail to certify.
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal(0.0, 1.0);
  int checked = 0;
  for (int rep = 0; rep < 200 && checked < 3; ++rep) {
    TwoLayerGLN m(2, 2, 2);
    for (auto& v : m.params) v = normal(rng);
    double residual = 0.0;
    try {
      residual = kkt_certify(m, s.data, c).residual;
    } catch (const std::domain_error&) {
      continue;
    }
    CHECK(residual > 0.05);
    ++checked;
  }
  CHECK(checked > 0);
}

TEST_CASE("problem dump round trip and result json") {
  std::mt19937_64 rng(25);
  const auto inst = oracle::planted_gln_instance(rng, 5, 2, 2, Objective::GroupLasso);
  std::stringstream io;
  write_problem(io, inst.problem);
  const auto back = read_problem(io);
  CHECK(back.gates == inst.problem.gates);
  CHECK(back.rows == inst.problem.rows);
  CHECK(back.rhs == inst.problem.rhs);
  CHECK(back.groups == inst.problem.groups);
  CHECK(back.objective == inst.problem.objective);
  std::ostringstream js;
  write_result_json(js, solve(back));
  for (const char* key : {"\"objective\"", "\"lambda\"", "\"status\"", "\"iterations\"", "\"stationarity\""}) {
    CHECK(js.str().find(key) != std::string::npos);
  }
}
