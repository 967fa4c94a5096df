#include <cmath>
#include <sstream>

#include "doctest.h"
#include "slicetwin/nlp.hpp"
#include "slicetwin/qp.hpp"
#include "support/instances.hpp"

using namespace slicetwin;
using namespace slicetwin::testing;

namespace {

// Circle cap: active nonlinear constraint at the optimum (0.5, 0.5), lambda = 1.
NlpProblem circle_problem() {
  NlpProblem p;
  p.n = 2;
  p.lo = {0, 0};
  p.hi = {1, 1};
  p.objective = [](const std::vector<double>& x, std::vector<double>* g) {
    if (g) *g = {1, 1};
    return x[0] + x[1];
  };
  p.add_constraint([](const std::vector<double>& x, std::vector<double>* g) {
    if (g) *g = {2 * x[0], 2 * x[1]};
    return x[0] * x[0] + x[1] * x[1] - 0.5;
  });
  return p;
}

void check_kkt(const NlpProblem& p, const NlpSolution& s, const NlpOptions& o = {}) {
  REQUIRE(s.status == NlpStatus::converged);
  CHECK(s.max_violation <= o.feas_tol);
  CHECK(s.kkt_residual <= o.kkt_tol);
  CHECK(kkt_residual(p, s) <= o.kkt_tol);
  for (std::size_t j = 0; j < p.constraints.size(); ++j) {
    CHECK(s.lambda[j] >= 0);
    CHECK(s.lambda[j] * p.constraints[j](s.x, nullptr) >= -o.kkt_tol);
  }
}

}  // namespace

TEST_CASE("qp: box-constrained quadratic") {
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(2, 2);
  Eigen::VectorXd c(2);
  c << -2, 0.5;
  Eigen::MatrixXd G(4, 2);
  G << 1, 0, 0, 1, -1, 0, 0, -1;
  Eigen::VectorXd h(4);
  h << 1, 1, 0, 0;
  const auto r = solve_qp(H, c, G, h);
  REQUIRE(r.status == QpResult::solved);
  CHECK(r.z(0) == doctest::Approx(1).epsilon(1e-9));
  CHECK(std::abs(r.z(1)) < 1e-9);
  CHECK(r.y(0) == doctest::Approx(1).epsilon(1e-8));    // 2 - 1
  CHECK(r.y(3) == doctest::Approx(0.5).epsilon(1e-8));  // pushes z1 up against its lower bound
}

TEST_CASE("qp: inconsistent rows are reported") {
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(1, 1);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(1);
  Eigen::MatrixXd G(2, 1);
  G << 1, -1;
  Eigen::VectorXd h(2);
  h << -1, -1;  // z <= -1 and z >= 1
  CHECK(solve_qp(H, c, G, h).status != QpResult::solved);
}

TEST_CASE("solve: unconstrained quadratic") {
  const auto p = quadratic_1d();
  const auto s = solve(p, {0.9});
  check_kkt(p, s);
  CHECK(s.x[0] == doctest::Approx(0.3).epsilon(1e-6));
  CHECK(s.lambda.empty());
}

TEST_CASE("solve: LP with known dual") {
  const auto p = lp_nonlinear_row();
  const auto s = solve_multistart(p);
  check_kkt(p, s);
  CHECK(s.objective == doctest::Approx(1).epsilon(1e-6));
  REQUIRE(s.lambda.size() == 1);
  CHECK(std::abs(s.lambda[0] - 1) <= 1e-6);
}

TEST_CASE("solve: the same LP with a linear row") {
  NlpProblem p = lp_nonlinear_row();
  p.constraints.clear();
  p.constraint_names.clear();
  p.add_linear({1, 1}, 1, "sum");
  const auto s = solve_multistart(p);
  check_kkt(p, s);
  CHECK(s.objective == doctest::Approx(1).epsilon(1e-6));
  CHECK(std::abs(s.lambda_linear[0] - 1) <= 1e-6);
}

TEST_CASE("solve: active curved constraint") {
  const auto p = circle_problem();
  const auto s = solve_multistart(p);
  check_kkt(p, s);
  CHECK(s.x[0] == doctest::Approx(0.5).epsilon(1e-5));
  CHECK(s.x[1] == doctest::Approx(0.5).epsilon(1e-5));
  CHECK(s.lambda[0] == doctest::Approx(1).epsilon(1e-5));
}

TEST_CASE("solve: product objective matches a 401x401 grid scan") {
  const auto p = product_problem();
  const auto s = solve_multistart(p);
  check_kkt(p, s);
  const auto g = grid_oracle(p, 401);
  REQUIRE(g.feasible);
  CHECK(s.objective >= g.objective - 1e-3);
  CHECK(std::abs(s.objective - g.objective) <= 1e-3);
}

TEST_CASE("solve: binding reciprocal constraint matches the grid scan") {
  // Maximize f + phi with 0.3/f + 0.2/phi <= 1 and f + phi <= 1.2: the
  // constraint binds and the optimum lies on its curve.
  NlpProblem p = product_problem();
  p.objective = [](const std::vector<double>& x, std::vector<double>* g) {
    if (g) *g = {1, 1.5};
    return x[0] + 1.5 * x[1];
  };
  p.add_linear({1, 1}, 1.2, "budget");
  const auto s = solve_multistart(p);
  check_kkt(p, s);
  const auto g = grid_oracle(p, 401);
  REQUIRE(g.feasible);
  CHECK(s.objective >= g.objective - 1e-3);
  CHECK(s.lambda[0] + s.lambda_linear[0] > 0);
}

TEST_CASE("solve: infeasible constraint is detected") {
  NlpProblem p = quadratic_1d();
  p.add_constraint([](const std::vector<double>& x, std::vector<double>* g) {
    if (g) (*g)[0] = -1;
    return 2 - x[0];
  });
  const auto s = solve_multistart(p);
  CHECK(s.status == NlpStatus::infeasible);
  CHECK(s.max_violation == doctest::Approx(1).epsilon(1e-6));
  CHECK(s.message.find("violation") != std::string::npos);
}

TEST_CASE("solve: start outside the linear constraints is projected") {
  NlpProblem p = lp_nonlinear_row();
  p.add_linear({1, 0}, 0.25, "cap");
  const auto s = solve(p, {1, 1});
  check_kkt(p, s);
  CHECK(s.x[0] <= 0.25 + 1e-9);
  CHECK(s.objective == doctest::Approx(1).epsilon(1e-6));
}

TEST_CASE("solve: non-finite callback aborts with the point") {
  NlpProblem p = quadratic_1d();
  p.objective = [](const std::vector<double>& x, std::vector<double>* g) {
    if (g) (*g)[0] = 0;
    return x[0] > 0.5 ? std::nan("") : 0.0;
  };
  CHECK_THROWS_WITH_AS(solve(p, {0.9}), doctest::Contains("x = (0.9"), NlpError);
}

TEST_CASE("solve: deterministic") {
  const auto p = circle_problem();
  const auto a = solve_multistart(p);
  const auto b = solve_multistart(p);
  CHECK(a.x == b.x);
  CHECK(a.lambda == b.lambda);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("solve: trace rows") {
  std::ostringstream trace;
  NlpOptions o;
  o.trace = &trace;
  const auto s = solve(circle_problem(), {0.1, 0.9}, o);
  std::size_t rows = 0;
  for (char c : trace.str()) rows += c == '\n';
  CHECK(rows == std::size_t(s.iterations) + 1);
  CHECK(trace_header() == "start,iteration,objective,violation,step_norm,kkt");
}

TEST_CASE("grid_oracle: constant violated constraint") {
  NlpProblem p = quadratic_1d();
  p.add_constraint([](const std::vector<double>&, std::vector<double>* g) {
    if (g) (*g)[0] = 0;
    return 1.0;
  });
  const auto g = grid_oracle(p, 11);
  CHECK_FALSE(g.feasible);
  CHECK(g.message == "no feasible grid point");
}

TEST_CASE("grid_oracle: resolution 2 visits exactly the endpoints") {
  NlpProblem p = quadratic_1d();
  std::vector<double> seen;
  p.objective = [&seen](const std::vector<double>& x, std::vector<double>*) {
    seen.push_back(x[0]);
    return -(x[0] - 0.3) * (x[0] - 0.3);
  };
  const auto g = grid_oracle(p, 2);
  CHECK(g.evaluated == 2);
  CHECK(seen == std::vector<double>{0.0, 1.0});
  CHECK(g.x[0] == 0.0);
}

TEST_CASE("grid_oracle: guards") {
  CHECK_THROWS_AS(grid_oracle(quadratic_1d(), 1), NlpError);
  NlpProblem p;
  p.n = 5;
  p.lo.assign(5, 0);
  p.hi.assign(5, 1);
  p.objective = [](const std::vector<double>&, std::vector<double>*) { return 0.0; };
  CHECK_THROWS_AS(grid_oracle(p, 2), NlpError);
}

TEST_CASE("grid_oracle agrees with solve on the regression problems") {
  for (const auto& p : regression_suite()) {
    const auto s = solve_multistart(p);
    const auto g = grid_oracle(p, p.n == 1 ? 1001 : 401);
    REQUIRE(g.feasible);
    CHECK(std::abs(s.objective - g.objective) <= 1e-3);
  }
}
