#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <sstream>

#include "doctest.h"
#include "slicetwin/distributed.hpp"
#include "support/instances.hpp"

using namespace slicetwin;
using namespace slicetwin::testing;

namespace {

CouplingState one_class_state(double tau, double split) {
  auto s = CouplingState::initial({tau}, {0.9}, {1}, {1});
  s.classes[0].tau_n = split * tau;
  return s;
}

ControllerMessage msg(Site from, int it, double lt, double lr = 0, double g = 0) {
  ControllerMessage m;
  m.sender = from;
  m.iteration = it;
  m.classes.push_back({lt, lr, g, false});
  return m;
}

}  // namespace

TEST_CASE("network subproblem: binding split, one-dimensional KKT") {
  const auto config = parse_scenario(site_scenario({1.0}));
  const auto net = network_site(config, {{delay1(0, 0, 0.3, 0.01), nullptr}}, negative_utility());
  const auto m = solve_network_subproblem(net, one_class_state(1.0, 0.6));
  REQUIRE(m.feasible);
  CHECK(m.solution[0][0] == doctest::Approx(0.5).epsilon(1e-6));
  // -1 + lambda * 0.3 / (f^2 tau) = 0
  CHECK(m.classes[0].lambda_tau == doctest::Approx(0.25 / 0.3).epsilon(1e-5));
  CHECK(m.iteration == 1);
  CHECK(m.sender == Site::network);
}

TEST_CASE("server subproblem: complementary share") {
  const auto config = parse_scenario(site_scenario({1.0}));
  const auto srv = server_site(config, {{delay1(0, 0, 0.3, 0.01), nullptr}}, negative_utility());
  const auto m = solve_server_subproblem(srv, one_class_state(1.0, 0.4));
  REQUIRE(m.feasible);
  CHECK(m.solution[0][0] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(m.classes[0].lambda_tau == doctest::Approx(0.25 / 0.3).epsilon(1e-5));
  CHECK_THROWS_AS(solve_network_subproblem(srv, one_class_state(1.0, 0.4)), DistributedError);
}

TEST_CASE("subproblems: inactive split has zero multiplier") {
  const auto config = parse_scenario(site_scenario({10.0}));
  const auto net = network_site(config, {{delay1(0, 0, 0.3, 0.1), nullptr}}, log_utility());
  const auto srv = server_site(config, {{delay1(0, 0, 0.3, 0.1), nullptr}}, log_utility());
  const auto state = one_class_state(10.0, 0.5);
  for (const auto& m : {solve_subproblem(net, state), solve_subproblem(srv, state)}) {
    REQUIRE(m.feasible);
    CHECK(m.classes[0].lambda_tau == doctest::Approx(0).epsilon(1e-8));
    CHECK(m.solution[0][0] == doctest::Approx(1));
  }
}

TEST_CASE("subproblems: deterministic") {
  const auto s = convex_instance();
  const auto state = CouplingState::initial(s.net.tau, s.net.rho, s.net.theta_lo, s.net.theta_hi);
  CHECK(to_json(solve_subproblem(s.net, state)) == to_json(solve_subproblem(s.net, state)));
  CHECK(to_json(solve_subproblem(s.srv, state)) == to_json(solve_subproblem(s.srv, state)));
}

TEST_CASE("subproblems: infeasible split asks for more budget") {
  const auto config = parse_scenario(site_scenario({1.0}));
  const auto net = network_site(config, {{delay1(0, 0, 0.8, 0.01), nullptr}}, log_utility());
  const auto m = solve_subproblem(net, one_class_state(1.0, 0.5));
  CHECK_FALSE(m.feasible);
  CHECK(m.classes[0].split_violated);
  CHECK(m.classes[0].lambda_tau >= AgentOptions{}.infeasible_multiplier);
  auto state = one_class_state(1.0, 0.5);
  const auto next = master_update(state, m, msg(Site::server, 1, 0), MasterMode::fixed);
  CHECK(next.classes[0].tau_n > state.classes[0].tau_n);
}

TEST_CASE("subproblems: theta subgradient of the Lagrangian") {
  // D = 0.4 theta / f, u = -f, theta = 1, tau^N = 0.5: f = 0.8 and, from
  // -1 + lambda * 0.4 theta / f^2 = 0, lambda = 1.6; then
  // g = -lambda * (dD/dtheta) / tau = -lambda * 0.4 / f = -0.8.
  const auto config = parse_scenario(site_scenario({1.0}, 0.5, 1.5));
  auto d = std::make_shared<Fn>(
      Metric::site_delay, 1, [](const std::vector<double>& x) { return 0.4 * x[1] / x[0]; },
      [](const std::vector<double>& x) {
        return std::vector<double>{-0.4 * x[1] / (x[0] * x[0]), 0.4 / x[0]};
      },
      0.01);
  const auto net = network_site(config, {{d, nullptr}}, negative_utility());
  auto state = CouplingState::initial({1.0}, {0.9}, {0.5}, {1.5});
  REQUIRE(state.classes[0].theta == 1.0);
  const auto m = solve_subproblem(net, state);
  REQUIRE(m.feasible);
  CHECK(m.solution[0][0] == doctest::Approx(0.8).epsilon(1e-6));
  CHECK(m.classes[0].lambda_tau == doctest::Approx(1.6).epsilon(1e-5));
  CHECK(m.classes[0].g_theta == doctest::Approx(-0.8).epsilon(1e-5));
}

TEST_CASE("master_update: worked example and projection") {
  auto s = CouplingState::initial({1e-3}, {0.9}, {1}, {1});
  CHECK(s.classes[0].tau_n == doctest::Approx(0.5e-3));
  CHECK(s.alpha == 0.1);
  const auto next = master_update(s, msg(Site::network, 1, 2), msg(Site::server, 1, 1), MasterMode::fixed);
  CHECK(next.classes[0].tau_n == doctest::Approx(0.6e-3).epsilon(1e-12));
  CHECK(next.iteration == 2);
  CHECK(next.alpha == doctest::Approx(0.1 / std::sqrt(2.0)));

  s.step_cap = 1e3;
  const auto low = master_update(s, msg(Site::network, 1, 0), msg(Site::server, 1, 50), MasterMode::fixed);
  CHECK(low.classes[0].tau_n == 0.0);
  const auto high = master_update(s, msg(Site::network, 1, 50), msg(Site::server, 1, 0), MasterMode::fixed);
  CHECK(high.classes[0].tau_n == 1e-3);
  const auto rho = master_update(s, msg(Site::network, 1, 0, 50), msg(Site::server, 1, 0), MasterMode::fixed);
  CHECK(rho.classes[0].rho_n == 0.9);
}

TEST_CASE("master_update: fixed point") {
  auto s = CouplingState::initial({1.0, 2.0}, {0.9, 0.8}, {0.8, 0.8}, {1.2, 1.2});
  ControllerMessage n, v;
  n.sender = Site::network;
  v.sender = Site::server;
  n.iteration = v.iteration = 1;
  n.classes = {{0.7, 0.2, 0.3, false}, {0, 0, -1, false}};
  v.classes = {{0.7, 0.2, -0.3, false}, {0, 0, 1, false}};
  for (auto mode : {MasterMode::fixed, MasterMode::saddle}) {
    const auto next = master_update(s, n, v, mode);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(next.classes[i].tau_n == s.classes[i].tau_n);
      CHECK(next.classes[i].rho_n == s.classes[i].rho_n);
      CHECK(next.classes[i].theta == s.classes[i].theta);
    }
    CHECK(residuals(s, n, v, mode).max() == 0);
  }
}

TEST_CASE("master_update: theta direction per mode") {
  auto s = CouplingState::initial({1.0}, {0.9}, {0.8}, {1.2});
  s.step_cap = 10;
  const auto n = msg(Site::network, 1, 0, 0, 1), v = msg(Site::server, 1, 0, 0, 1);
  CHECK(master_update(s, n, v, MasterMode::fixed).classes[0].theta == doctest::Approx(1.2));
  CHECK(master_update(s, n, v, MasterMode::saddle).classes[0].theta == doctest::Approx(0.8));
  // Held at the bound, so the residual vanishes.
  s.classes[0].theta = 0.8;
  CHECK(residuals(s, n, v, MasterMode::saddle).theta[0] == 0);
  CHECK(residuals(s, n, v, MasterMode::fixed).theta[0] == doctest::Approx(0.4));
}

TEST_CASE("master_update: protocol errors") {
  auto s = CouplingState::initial({1.0}, {0.9}, {1}, {1});
  CHECK_THROWS_AS(master_update(s, msg(Site::network, 2, 0), msg(Site::server, 1, 0), MasterMode::fixed),
                  ProtocolError);
  CHECK_THROWS_AS(master_update(s, msg(Site::server, 1, 0), msg(Site::server, 1, 0), MasterMode::fixed),
                  ProtocolError);
  auto two = msg(Site::server, 1, 0);
  two.classes.push_back({});
  CHECK_THROWS_AS(master_update(s, msg(Site::network, 1, 0), two, MasterMode::fixed), ProtocolError);
}

TEST_CASE("master_update: stays in the box and projection is idempotent") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> lam(0, 20), g(-20, 20);
  auto s = CouplingState::initial({1e-3, 5e-3}, {0.9, 0.95}, {0.8, 0.8}, {1.2, 1.2}, 0.5);
  for (int k = 0; k < 300; ++k) {
    ControllerMessage n, v;
    n.sender = Site::network;
    v.sender = Site::server;
    n.iteration = v.iteration = s.iteration;
    for (int i = 0; i < 2; ++i) {
      n.classes.push_back({lam(rng), lam(rng), g(rng), false});
      v.classes.push_back({lam(rng), lam(rng), g(rng), false});
    }
    s = master_update(s, n, v, k % 2 ? MasterMode::fixed : MasterMode::saddle);
    REQUIRE(s.in_box());
  }
  auto one = CouplingState::initial({1.0}, {0.9}, {0.8}, {1.2});
  one.classes[0].tau_n = 1.0;
  const auto z = msg(Site::network, 1, 0), w = msg(Site::server, 1, 0);
  const auto p = master_update(one, z, w, MasterMode::fixed);
  CHECK(p.classes[0].tau_n == 1.0);
  CHECK(master_update(p, msg(Site::network, 2, 0), msg(Site::server, 2, 0), MasterMode::fixed).classes[0].tau_n ==
        1.0);
}

TEST_CASE("master_update: steps are clipped to step_cap") {
  auto s = CouplingState::initial({1.0}, {0.9}, {0.8}, {1.2});
  const auto next = master_update(s, msg(Site::network, 1, 1e3), msg(Site::server, 1, 0), MasterMode::fixed);
  CHECK(next.classes[0].tau_n == doctest::Approx(0.6));
  s.step_cap = 3;
  const auto wide = master_update(s, msg(Site::network, 1, 1e3), msg(Site::server, 1, 0), MasterMode::fixed);
  CHECK(wide.classes[0].tau_n == doctest::Approx(0.8));
  const auto th = master_update(s, msg(Site::network, 1, 0, 0, -0.5), msg(Site::server, 1, 0), MasterMode::saddle);
  CHECK(th.classes[0].theta == doctest::Approx(1.05));
}

TEST_CASE("wire format round trip") {
  ControllerMessage m = msg(Site::server, 7, 0.125, 0.5, -1.0 / 3);
  m.solution = {{0.1, 0.2}};
  m.objective = -2.5;
  m.status = "converged";
  const auto back = message_from_json(to_json(m));
  CHECK(to_json(back) == to_json(m));
  CHECK(back.classes[0].g_theta == -1.0 / 3);

  auto s = CouplingState::initial({1e-3}, {0.9}, {0.8}, {1.2});
  CHECK(to_json(state_from_json(to_json(s))) == to_json(s));

  CHECK_THROWS_AS(message_from_json("{"), ProtocolError);
  CHECK_THROWS_AS(message_from_json(to_json(msg(Site::server, 1, -1))), ProtocolError);
  CHECK_THROWS_AS(state_from_json("{}"), ProtocolError);
}

TEST_CASE("Channel passes messages in order across threads") {
  Channel c;
  std::thread t([&] {
    for (int i = 0; i < 100; ++i) c.push(std::to_string(i));
  });
  for (int i = 0; i < 100; ++i) CHECK(c.pop() == std::to_string(i));
  t.join();
}

TEST_CASE("run_algorithm1: matches the centralized optimum on a convex instance") {
  const auto s = convex_instance();
  std::ostringstream trace;
  DistributedOptions o;
  o.trace = &trace;
  const auto r = run_algorithm1(s.net, s.srv, o);
  CHECK(r.converged);
  CHECK(r.iterations <= 500);
  CHECK(r.residuals.max() < 1e-4);
  const auto c = solve_centralized(s.net, s.srv, {1.0, 1.0});
  CHECK(std::abs(r.objective - c.objective) <= 1e-3);
  CHECK(std::abs(c.objective - convex_optimum()) <= 1e-6);
  CHECK(std::abs(r.objective - convex_optimum()) <= 1e-3);

  // The combined decision meets both capacities and App1's end-to-end bound.
  const auto d = combine(s.config, r);
  CHECK(d.flows[0][0] + d.flows[1][0] <= 1 + 1e-9);
  CHECK(d.cpu[0][0] + d.cpu[1][0] <= 1 + 1e-9);
  CHECK((1.2 - d.flows[0][0]) + (1.2 - 0.8 * d.cpu[0][0]) <= 1 + 1e-6);

  std::istringstream in(trace.str());
  std::string line;
  int rows = 0;
  std::getline(in, line);
  CHECK(line == trace_header({"A1", "A2"}));
  while (std::getline(in, line)) ++rows;
  CHECK(rows == r.iterations);
}

TEST_CASE("run_algorithm1: loose eps stops at the first iteration") {
  const auto s = convex_instance();
  DistributedOptions o;
  o.eps = 1e6;
  const auto r = run_algorithm1(s.net, s.srv, o);
  CHECK(r.converged);
  CHECK(r.iterations == 1);
  const auto init = CouplingState::initial(s.net.tau, s.net.rho, s.net.theta_lo, s.net.theta_hi);
  CHECK(r.flows == solve_subproblem(s.net, init).solution);
  CHECK(r.cpu == solve_subproblem(s.srv, init).solution);
}

TEST_CASE("run_algorithm1: saddle mode on a bilinear toy") {
  const auto s = saddle_instance();
  DistributedOptions o;
  o.mode = MasterMode::saddle;
  const auto r = run_algorithm1(s.net, s.srv, o);
  CHECK(r.converged);
  CHECK(r.state.classes[0].theta == doctest::Approx(1).epsilon(1e-2));
  CHECK(std::abs(r.objective) <= 1e-2);
}

TEST_CASE("run_algorithm1: recovers from an infeasible initial split") {
  // The network needs at least 80 % of the budget, the server at least 10 %.
  const auto config = parse_scenario(site_scenario({1.0}));
  const auto net = network_site(config, {{delay1(0, 0, 0.8, 0.01), nullptr}}, log_utility());
  const auto srv = server_site(config, {{delay1(0, 0, 0.05, 0.01), nullptr}}, log_utility());
  DistributedOptions o;
  o.max_iter = 2000;
  const auto r = run_algorithm1(net, srv, o);
  CHECK(r.converged);
  CHECK(r.network.feasible);
  CHECK(r.server.feasible);
  CHECK(r.state.classes[0].tau_n >= 0.8 - 1e-6);
  CHECK(r.state.classes[0].tau_n <= 0.95 + 1e-6);
}

TEST_CASE("run_algorithm1: argument errors") {
  const auto s = convex_instance();
  CHECK_THROWS_AS(run_algorithm1(s.srv, s.net), DistributedError);
  DistributedOptions o;
  o.eps = 0;
  CHECK_THROWS_AS(run_algorithm1(s.net, s.srv, o), DistributedError);
  CHECK_THROWS_AS(parse_master_mode("both"), DistributedError);
  CHECK(parse_master_mode("saddle") == MasterMode::saddle);
}
