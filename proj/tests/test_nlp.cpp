#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "dgpricer/nlp.hpp"
#include "dgpricer/quadratic.hpp"

using namespace dgp;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("scalar bound via inequality: min x^2 s.t. x >= 1") {
  quad::QuadModel m;
  int x = m.add_var("x", -nlp::kInf, nlp::kInf);
  quad::QuadExpr f;
  f.add_quad(x, x, 1.0);
  m.set_objective(f);
  quad::QuadExpr g;
  g.add_linear(x, 1.0).add_const(-1.0);
  m.add_ineq(g, "x_ge_1");
  auto p = m.build();

  nlp::Options o;
  auto sol = nlp::solve(p, o);
  REQUIRE(sol.status == nlp::Status::kSolved);
  CHECK(sol.x[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(sol.mu_ineq[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(sol.kkt.max() <= o.tol);

  // hand-built KKT triple is an exact stationary point
  VectorXd xs(1), yin(1);
  xs << 1.0;
  yin << 2.0;
  auto res = nlp::kkt_residual(p, xs, VectorXd(), yin, VectorXd::Zero(1), VectorXd::Zero(1));
  CHECK(res.max() == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("least-norm equality QP matches the closed form") {
  std::mt19937 rng(42);
  std::normal_distribution<double> g(0.0, 1.0);
  MatrixXd A(3, 6);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 6; ++j) A(i, j) = g(rng);
  VectorXd b(3);
  for (int i = 0; i < 3; ++i) b[i] = g(rng);

  quad::QuadModel m;
  for (int j = 0; j < 6; ++j) m.add_var("x" + std::to_string(j), -nlp::kInf, nlp::kInf);
  quad::QuadExpr f;
  for (int j = 0; j < 6; ++j) f.add_quad(j, j, 0.5);
  m.set_objective(f);
  for (int i = 0; i < 3; ++i) {
    quad::QuadExpr row(-b[i]);
    for (int j = 0; j < 6; ++j) row.add_linear(j, A(i, j));
    m.add_eq(row, "r" + std::to_string(i));
  }
  auto p = m.build();
  auto sol = nlp::solve(p, nlp::Options{});
  REQUIRE(sol.status == nlp::Status::kSolved);

  VectorXd closed = A.transpose() * (A * A.transpose()).ldlt().solve(b);
  CHECK((sol.x - closed).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("contradictory equalities are reported infeasible") {
  quad::QuadModel m;
  int x = m.add_var("x", -nlp::kInf, nlp::kInf);
  m.set_objective(quad::QuadExpr(0.0));
  quad::QuadExpr e1, e2;
  e1.add_linear(x, 1.0).add_const(-1.0);
  e2.add_linear(x, 1.0).add_const(-2.0);
  m.add_eq(e1, "x_eq_1");
  m.add_eq(e2, "x_eq_2");
  auto p = m.build();
  nlp::Options o;
  o.max_iter = 200;
  auto sol = nlp::solve(p, o);
  CHECK(sol.status == nlp::Status::kInfeasible);
}

TEST_CASE("kkt residual on unconstrained quadratic") {
  quad::QuadModel m;
  int x = m.add_var("x", -nlp::kInf, nlp::kInf);
  quad::QuadExpr f;
  f.add_quad(x, x, 1.0);
  m.set_objective(f);
  auto p = m.build();
  VectorXd pt(1);
  pt << 0.37;
  auto r = nlp::kkt_residual(p, pt, VectorXd(), VectorXd(), VectorXd::Zero(1), VectorXd::Zero(1));
  CHECK(r.stationarity == doctest::Approx(2 * 0.37));
  CHECK(r.feasibility == doctest::Approx(0.0));
}

TEST_CASE("bounds and bound duals") {
  quad::QuadModel m;
  int x = m.add_var("x", 0.0, 2.0);
  quad::QuadExpr f;
  f.add_quad(x, x, 1.0).add_linear(x, -6.0).add_const(9.0);  // (x-3)^2
  m.set_objective(f);
  auto p = m.build();
  auto sol = nlp::solve(p, nlp::Options{});
  REQUIRE(sol.status == nlp::Status::kSolved);
  CHECK(sol.x[0] == doctest::Approx(2.0).epsilon(1e-7));
  CHECK(sol.z_upper[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(sol.z_lower[0] < 1e-7);

  // polish lands exactly on the bound
  nlp::Options op;
  op.polish = true;
  auto sp = nlp::solve(p, op);
  REQUIRE(sp.status == nlp::Status::kSolved);
  CHECK(sp.x[0] == 2.0);
}

TEST_CASE("multistart: convex agreement and nonconvex enumeration") {
  // convex: every start lands on the same optimum
  quad::QuadModel m;
  for (int j = 0; j < 4; ++j) m.add_var("x" + std::to_string(j), -5.0, 5.0);
  quad::QuadExpr f;
  for (int j = 0; j < 4; ++j) f.add_quad(j, j, 1.0 + j).add_linear(j, -j);
  m.set_objective(f);
  auto p = m.build();
  nlp::Options o;
  o.multistart = 5;
  o.seed = 123;
  auto ms = nlp::multistart_solve(p, o);
  REQUIRE(ms.best.status == nlp::Status::kSolved);
  for (auto& a : ms.attempts) {
    REQUIRE(a.status == nlp::Status::kSolved);
    CHECK((a.x - ms.best.x).lpNorm<Eigen::Infinity>() < 1e-6);
  }

  // multistart = 1 behaves exactly like solve()
  nlp::Options o1;
  o1.multistart = 1;
  auto single = nlp::multistart_solve(p, o1);
  auto direct = nlp::solve(p, o1);
  CHECK(single.best.x == direct.x);
  CHECK(single.best.iters == direct.iters);

  // nonconvex scalar: (x^2-1)^2 from starts near +-2 finds both minima
  nlp::Problem q;
  q.n = 1;
  q.lb = VectorXd::Constant(1, -nlp::kInf);
  q.ub = VectorXd::Constant(1, nlp::kInf);
  q.objective = [](const VectorXd& x) {
    double t = x[0] * x[0] - 1;
    return t * t;
  };
  q.gradient = [](const VectorXd& x, VectorXd& g) { g[0] = 4 * x[0] * (x[0] * x[0] - 1); };
  q.eval_eq = [](const VectorXd&, VectorXd&) {};
  q.eval_in = [](const VectorXd&, VectorXd&) {};
  q.jac_eq_values = [](const VectorXd&, VectorXd&) {};
  q.jac_in_values = [](const VectorXd&, VectorXd&) {};
  q.hess_pattern = {{0, 0}};
  q.hess = [](const VectorXd& x, double sf, const VectorXd&, const VectorXd&, VectorXd& v) {
    v[0] = sf * (12 * x[0] * x[0] - 4);
  };
  VectorXd sp(1), sm(1);
  sp << 2.0;
  sm << -2.0;
  auto a = nlp::solve(q, nlp::Options{}, sp);
  auto b = nlp::solve(q, nlp::Options{}, sm);
  REQUIRE(a.status == nlp::Status::kSolved);
  REQUIRE(b.status == nlp::Status::kSolved);
  CHECK(a.x[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(b.x[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(a.objective == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("determinism for fixed seed and start") {
  quad::QuadModel m;
  for (int j = 0; j < 3; ++j) m.add_var("x" + std::to_string(j), 0.0, 4.0);
  quad::QuadExpr f;
  f.add_quad(0, 1, 1.0).add_quad(2, 2, 0.5).add_linear(0, -1.0);
  m.set_objective(f);
  quad::QuadExpr e;
  e.add_linear(0, 1.0).add_linear(1, 1.0).add_linear(2, 1.0).add_const(-3.0);
  m.add_eq(e, "sum");
  auto p = m.build();
  nlp::Options o;
  o.multistart = 4;
  o.seed = 99;
  auto r1 = nlp::multistart_solve(p, o);
  auto r2 = nlp::multistart_solve(p, o);
  CHECK(r1.best_index == r2.best_index);
  CHECK(r1.best.x == r2.best.x);
  CHECK(r1.best.iters == r2.best.iters);
  for (size_t i = 0; i < r1.attempts.size(); ++i)
    CHECK(r1.attempts[i].x == r2.attempts[i].x);
}

TEST_CASE("trace reports a nonincreasing barrier parameter") {
  quad::QuadModel m;
  int x = m.add_var("x", 0.0, 10.0);
  quad::QuadExpr f;
  f.add_quad(x, x, 1.0).add_linear(x, -4.0);
  m.set_objective(f);
  quad::QuadExpr g;
  g.add_linear(x, 1.0).add_const(-0.5);
  m.add_ineq(g, "gap");
  auto p = m.build();
  nlp::Options o;
  o.trace_path = "trace_test.csv";
  auto sol = nlp::solve(p, o);
  REQUIRE(sol.status == nlp::Status::kSolved);

  std::ifstream tf("trace_test.csv");
  REQUIRE(tf.good());
  std::string line;
  std::getline(tf, line);  // header
  double last_mu = 1e30;
  int rows = 0;
  while (std::getline(tf, line)) {
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    std::getline(ss, field, ',');
    std::getline(ss, field, ',');
    double mu = std::stod(field);
    CHECK(mu <= last_mu + 1e-15);
    last_mu = mu;
    ++rows;
  }
  CHECK(rows >= 2);
}

TEST_CASE("quasi-Newton fallback solves a small problem") {
  quad::QuadModel m;
  for (int j = 0; j < 2; ++j) m.add_var("x" + std::to_string(j), -5.0, 5.0);
  quad::QuadExpr f;
  f.add_quad(0, 0, 2.0).add_quad(1, 1, 1.0).add_quad(0, 1, 0.5).add_linear(0, -1.0);
  m.set_objective(f);
  auto p = m.build();
  nlp::Options o;
  o.hessian_mode = nlp::HessianMode::kQuasiNewton;
  o.max_iter = 400;
  auto sol = nlp::solve(p, o);
  REQUIRE(sol.status == nlp::Status::kSolved);
  auto exact = nlp::solve(p, nlp::Options{});
  CHECK((sol.x - exact.x).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("evaluator failure names the offending row") {
  nlp::Problem q;
  q.n = 1;
  q.lb = VectorXd::Constant(1, -nlp::kInf);
  q.ub = VectorXd::Constant(1, nlp::kInf);
  q.m_eq = 1;
  q.eq_names = {"balance_bus7"};
  q.objective = [](const VectorXd& x) { return x[0] * x[0]; };
  q.gradient = [](const VectorXd& x, VectorXd& g) { g[0] = 2 * x[0]; };
  q.eval_eq = [](const VectorXd&, VectorXd& c) { c[0] = std::numeric_limits<double>::quiet_NaN(); };
  q.eval_in = [](const VectorXd&, VectorXd&) {};
  q.jac_eq_pattern = {{0, 0}};
  q.jac_eq_values = [](const VectorXd&, VectorXd& v) { v[0] = 1.0; };
  q.jac_in_values = [](const VectorXd&, VectorXd&) {};
  q.hess_pattern = {{0, 0}};
  q.hess = [](const VectorXd&, double sf, const VectorXd&, const VectorXd&, VectorXd& v) {
    v[0] = 2 * sf;
  };
  auto sol = nlp::solve(q, nlp::Options{});
  CHECK(sol.status == nlp::Status::kNumericalFailure);
  CHECK(sol.failure_detail == "balance_bus7");
}
