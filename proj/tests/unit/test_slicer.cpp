#include <cmath>
#include <functional>
#include <memory>

#include "doctest.h"
#include "slicetwin/slicer.hpp"

using namespace slicetwin;

namespace {

// Closed-form stand-in for a trained model over (f, phi).
class Analytic final : public QoeModel {
 public:
  using Fn = std::function<double(double, double)>;
  Analytic(Metric m, Fn f, Fn df, Fn dphi, double lo = 0.05) : m_(m), f_(f), df_(df), dphi_(dphi) {
    lo_ = {lo, lo};
    hi_ = {1, 1};
  }
  Metric metric() const override { return m_; }
  std::size_t input_dim() const override { return 2; }
  double predict(const std::vector<double>& x) const override { return f_(x[0], x[1]); }
  std::vector<double> input_gradient(const std::vector<double>& x) const override {
    return {df_(x[0], x[1]), dphi_(x[0], x[1])};
  }
  std::string kind() const override { return "analytic"; }
  void save(std::ostream&) const override {}

 private:
  Metric m_;
  Fn f_, df_, dphi_;
};

// (0.3/f + 0.2/phi) ms
std::shared_ptr<QoeModel> reciprocal_delay() {
  return std::make_shared<Analytic>(
      Metric::delay, [](double f, double p) { return (0.3 / f + 0.2 / p) * 1e-3; },
      [](double f, double) { return -0.3e-3 / (f * f); }, [](double, double p) { return -0.2e-3 / (p * p); });
}

// Increasing in both inputs, 1 at (1, 1).
std::shared_ptr<QoeModel> linear_throughput(double slope) {
  return std::make_shared<Analytic>(
      Metric::throughput, [slope](double f, double p) { return 1 - slope * (2 - f - p); },
      [slope](double, double) { return slope; }, [slope](double, double) { return slope; });
}

std::string scenario_text(const std::vector<std::pair<double, std::string>>& apps) {
  std::string s = "[topology]\nedge = link 1e9 1e-5\ncores = 1\ncore_speed = 1e5\n";
  int k = 1;
  for (const auto& [tau, prio] : apps) {
    s += "[app.A" + std::to_string(k++) + "]\ntau = " + std::to_string(tau) +
         "\nrho = 0.5\nwork = 10\npkt_rate = 100\npriority = " + prio + "\n";
  }
  return s + "[theta]\nlo = 1\nhi = 1\nseeds = 1\n";
}

SliceProblem make_problem(const std::vector<std::pair<double, std::string>>& apps,
                          const std::vector<double>& slopes) {
  SliceProblem p;
  p.config = parse_scenario(scenario_text(apps), "t");
  for (double s : slopes) p.models.push_back({reciprocal_delay(), linear_throughput(s)});
  return p;
}

double tau_of(const SliceResult& r, std::size_t i) { return r.predicted[i].tau; }

}  // namespace

TEST_CASE("solve_robust: a lone class takes everything") {
  const auto p = make_problem({{1e-3, "strict"}}, {0.05});
  const auto r = solve_robust(p);
  REQUIRE(r.feasible);
  CHECK(r.decision.flows[0][0] == doctest::Approx(1).epsilon(1e-6));
  CHECK(r.decision.cpu[0][0] == doctest::Approx(1).epsilon(1e-6));
  CHECK(r.objective == doctest::Approx(1).epsilon(1e-6));
  CHECK(r.predicted[0].delay == doctest::Approx(0.5e-3).epsilon(1e-5));
  CHECK(validate_decision(r.decision, p.config.topology).valid());
}

TEST_CASE("solve_robust: matches a brute-force scan") {
  // App2 has the steeper utility, so it takes what App1's delay bound leaves.
  const auto p = make_problem({{1.2e-3, "strict"}, {1.2e-3, "strict"}}, {0.05, 0.2});
  const auto r = solve_robust(p);
  REQUIRE(r.feasible);
  CHECK(validate_decision(r.decision, p.config.topology).valid());
  for (std::size_t i = 0; i < 2; ++i) CHECK(r.predicted[i].delay <= tau_of(r, i) * (1 + 1e-6));

  // The objective increases in every input, so the remaining capacity goes
  // to App2; scan App1's share.
  double best = -1;
  const int n = 800;
  for (int a = 0; a <= n; ++a) {
    for (int b = 0; b <= n; ++b) {
      const double f1 = 0.05 + 0.9 * a / n, p1 = 0.05 + 0.9 * b / n;
      const double f2 = 1 - f1, p2 = 1 - p1;
      auto delay = [](double f, double ph) { return (0.3 / f + 0.2 / ph) * 1e-3; };
      if (delay(f1, p1) > 1.2e-3 || delay(f2, p2) > 1.2e-3) continue;
      best = std::max(best, 1 - 0.05 * (2 - f1 - p1) + 1 - 0.2 * (2 - f2 - p2));
    }
  }
  REQUIRE(best > 0);
  CHECK(r.objective >= best - 1e-6);
  CHECK(r.objective <= best + 1e-3);
  CHECK(r.predicted[0].delay == doctest::Approx(1.2e-3).epsilon(1e-4));
}

TEST_CASE("solve_robust: infeasible coupling is reported") {
  // By symmetry and convexity the best split is even, which gives 1 ms > 0.9 ms.
  const auto p = make_problem({{0.9e-3, "strict"}, {0.9e-3, "strict"}}, {0.1, 0.1});
  const auto r = solve_robust(p);
  CHECK_FALSE(r.feasible);
  CHECK(r.message.find("graceful") != std::string::npos);
  CHECK(validate_decision(r.decision, p.config.topology).valid());
}

TEST_CASE("solve_robust: delay margin tightens the bound") {
  auto p = make_problem({{1.2e-3, "strict"}, {1.2e-3, "strict"}}, {0.05, 0.2});
  p.delay_margin = 0.1;
  const auto r = solve_robust(p);
  REQUIRE(r.feasible);
  CHECK(r.predicted[0].delay <= 1.2e-3 * 0.9 * (1 + 1e-6));
}

TEST_CASE("SliceProblem::validate") {
  auto p = make_problem({{1e-3, "strict"}}, {0.05});
  auto bad = p;
  bad.models.clear();
  CHECK_THROWS_AS(solve_robust(bad), SlicerError);
  bad = p;
  std::swap(bad.models[0].delay, bad.models[0].throughput);
  CHECK_THROWS_WITH_AS(solve_robust(bad), doctest::Contains("predicts"), SlicerError);
  bad = p;
  bad.delay_margin = 1;
  CHECK_THROWS_AS(solve_robust(bad), SlicerError);
  bad = p;
  bad.models[0].throughput = nullptr;
  CHECK_THROWS_WITH_AS(solve_robust(bad), doctest::Contains("missing model"), SlicerError);
}

TEST_CASE("solve_graceful: nothing degradable reproduces the robust optimum") {
  const auto p = make_problem({{1.2e-3, "strict"}, {1.2e-3, "strict"}}, {0.05, 0.2});
  const auto robust = solve_robust(p);
  const auto g = solve_graceful(p, DegradeSpec::from_config(p.config));
  REQUIRE(g.feasible);
  CHECK(g.relaxed.empty());
  CHECK(g.penalty == 0);
  CHECK(g.objective == doctest::Approx(-robust.objective).epsilon(1e-6));
}

TEST_CASE("solve_graceful: huge weights act as hard constraints") {
  const auto p = make_problem({{1.2e-3, "degradable"}, {1.2e-3, "strict"}}, {0.05, 0.2});
  const auto robust = solve_robust(p);
  const auto g = solve_graceful(p, DegradeSpec::from_config(p.config, 1e9));
  REQUIRE(g.feasible);
  CHECK(g.utility == doctest::Approx(robust.objective).epsilon(1e-4));
  CHECK(g.predicted[0].delay <= 1.2e-3 * (1 + 1e-4));
  REQUIRE(g.relaxed.size() == 1);
  CHECK(g.relaxed[0].app == "A1");
}

TEST_CASE("solve_graceful: light weights give up the degradable bound") {
  const auto p = make_problem({{0.9e-3, "degradable"}, {0.9e-3, "strict"}}, {0.1, 0.1});
  REQUIRE_FALSE(solve_robust(p).feasible);
  const auto g = solve_graceful(p, DegradeSpec::from_config(p.config, 1e-2));
  REQUIRE(g.feasible);
  CHECK(g.predicted[1].delay <= 0.9e-3 * (1 + 1e-6));
  REQUIRE(g.relaxed.size() == 1);
  CHECK(g.relaxed[0].tau > 0.9e-3);
  CHECK(g.relaxed[0].tau == doctest::Approx(g.predicted[0].delay));
  CHECK(g.penalty > 0);
  CHECK(g.objective == doctest::Approx(g.penalty - g.utility).epsilon(1e-6));
  CHECK(validate_decision(g.decision, p.config.topology).valid());
}

TEST_CASE("solve_graceful: infeasible strict set") {
  const auto p = make_problem({{0.9e-3, "strict"}, {0.9e-3, "strict"}, {1e-3, "degradable"}}, {0.1, 0.1, 0.1});
  CHECK_THROWS_WITH_AS(solve_graceful(p, DegradeSpec::from_config(p.config)),
                       doctest::Contains("strict set itself infeasible"), SlicerError);
}

TEST_CASE("DegradeSpec::validate") {
  DegradeSpec s{{true}, {0}, {1}};
  CHECK_THROWS_AS(s.validate(1), SlicerError);
  CHECK_THROWS_AS(s.validate(2), SlicerError);
  s.w_tau = {2};
  CHECK_NOTHROW(s.validate(1));
}

TEST_CASE("validate_decision") {
  const auto config = parse_scenario(scenario_text({{1e-3, "strict"}, {1e-3, "strict"}}), "t");
  SliceDecision d = SliceDecision::zeros(config);
  d.flows = {{0.25}, {0.75}};
  d.cpu = {{0.5}, {0.5}};
  auto rep = validate_decision(d, config.topology);
  CHECK(rep.valid());
  CHECK(rep.warnings.empty());

  d.cpu = {{1.2}, {0.0}};
  rep = validate_decision(d, config.topology);
  REQUIRE_FALSE(rep.valid());
  bool entry = false, sum = false;
  for (const auto& v : rep.violations) {
    if (v.what.find("phi[0]") != std::string::npos) entry = std::abs(v.margin - 0.2) < 1e-12;
    if (v.what.find("sum of cpu") != std::string::npos) sum = std::abs(v.margin - 0.2) < 1e-12;
  }
  CHECK(entry);
  CHECK(sum);

  rep = validate_decision(SliceDecision::zeros(config), config.topology);
  CHECK(rep.valid());
  REQUIRE(rep.warnings.size() == 1);
  CHECK(rep.warnings[0] == "nothing is allocated");

  d.flows = {{-0.1}, {0.5}};
  d.cpu = {{0.5}, {0.5}};
  rep = validate_decision(d, config.topology);
  REQUIRE(rep.violations.size() == 1);
  CHECK(rep.violations[0].margin == doctest::Approx(0.1));

  d.flows = {{0.5, 0.5}, {0.5}};
  CHECK_FALSE(validate_decision(d, config.topology).valid());
}
