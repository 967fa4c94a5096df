#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "slicetwin/rng.hpp"
#include "slicetwin/simulator.hpp"
#include "support/instances.hpp"

using namespace slicetwin;
using namespace slicetwin::testing;

namespace {

const std::string kScenarios = std::string(SLICETWIN_SOURCE_DIR) + "/scenarios/";

ScenarioConfig table2() {
  auto c = load_scenario(kScenarios + "table2.cfg");
  c.sim_horizon = 2;
  c.warmup = 0.5;
  return c;
}

SliceDecision split(const ScenarioConfig& c, double f1, double p1, double f2, double p2) {
  auto d = SliceDecision::zeros(c);
  set_class_resources(c, d, 0, {f1, p1});
  set_class_resources(c, d, 1, {f2, p2});
  return d;
}

// One light client with fixed-size requests: the gap between requests while
// ON (1/(burst_ratio*pkt_rate) = 50 ms) dwarfs every service time.
ScenarioConfig single_client() {
  return parse_scenario(R"(
[topology]
edge = link 1e9 25e-6
cores = 1
core_speed = 3e8
[app.A]
tau = 1
rho = 0.9
work = 5e4
pkt_rate = 10
pkt_size = 1000 1000
[theta]
lo = 1
hi = 1
seeds = 1
[sim]
users = 1
horizon = 30
warmup = 0
)");
}

struct TmpDir {
  std::filesystem::path path;
  explicit TmpDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TmpDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("run_sim: no-queueing closed form") {
  const auto c = single_client();
  auto d = SliceDecision::zeros(c);
  d.flows[0][0] = 0.5;
  d.cpu[0][0] = 1.0;
  SimOptions o;
  o.keep_records = true;
  const auto s = run_sim(c, d, 1.0, 1, o);
  REQUIRE(s.records.size() > 20);
  const double tx = 8e3 / (0.5 * 1e9);
  const double service = 5e4 / 3e8;
  CHECK(service == doctest::Approx(0.1667e-3).epsilon(1e-3));
  const double expected = tx + 2 * 25e-6 + service;
  for (const auto& r : s.records) {
    REQUIRE(r.server_ok);
    CHECK(std::abs(to_seconds(r.e2e_delay) - expected) <= 1e-6);
    CHECK(std::abs(to_seconds(r.server_delay) - service) <= 1e-9);
    CHECK(std::abs(to_seconds(r.network_delay) - tx - 25e-6) <= 1e-9);
  }
  CHECK(s.classes[0].violations == 0);
  CHECK(s.classes[0].e2e_success() == 1.0);
}

TEST_CASE("run_sim: no emitted requests") {
  auto c = single_client();
  c.sim_horizon = 1e-6;
  c.warmup = 0;
  auto d = SliceDecision::zeros(c);
  d.flows[0][0] = 1;
  d.cpu[0][0] = 1;
  const auto s = run_sim(c, d, 1.0, 1);
  CHECK(s.classes[0].emitted == 0);
  CHECK(s.classes[0].e2e_success() == 1.0);
  CHECK(s.classes[0].network_success() == 1.0);
  CHECK(s.classes[0].server_success() == 1.0);
  CHECK(s.classes[0].histogram.total() == 0);
}

TEST_CASE("run_sim: zero allocation drops at that site") {
  const auto c = table2();
  const auto no_link = run_sim(c, split(c, 0, 0.5, 0.5, 0.5), 1.0, 1);
  CHECK(no_link.classes[0].emitted > 0);
  CHECK(no_link.classes[0].network_ok == 0);
  CHECK(no_link.classes[0].e2e_success() == 0.0);
  const auto no_cpu = run_sim(c, split(c, 0.5, 0, 0.5, 0.5), 1.0, 1);
  CHECK(no_cpu.classes[0].network_ok == no_cpu.classes[0].emitted);
  CHECK(no_cpu.classes[0].server_ok == 0);
  CHECK(no_cpu.classes[1].server_ok > 0);
}

TEST_CASE("run_sim: input errors") {
  const auto c = table2();
  CHECK_THROWS_AS(run_sim(c, split(c, 0.6, 0.5, 0.6, 0.5), 1.0, 1), SimulationError);
  CHECK_THROWS_AS(run_sim(c, split(c, 0.5, 1.2, 0.5, 0), 1.0, 1), SimulationError);
  CHECK_THROWS_AS(run_sim(c, split(c, 0.5, 0.5, 0.5, 0.5), 1.5, 1), SimulationError);
  CHECK_THROWS_AS(run_sim(c, SliceDecision::zeros(2, 2, 2), 1.0, 1), SimulationError);
  // Boundary sums are accepted.
  CHECK_NOTHROW(run_sim(c, split(c, 0.5, 0.5, 0.5, 0.5), 1.0, 1));
}

TEST_CASE("run_sim: warmup requests are excluded") {
  auto c = table2();
  SimOptions o;
  o.keep_records = true;
  const auto s = run_sim(c, split(c, 0.5, 0.5, 0.5, 0.5), 1.0, 2, o);
  for (const auto& r : s.records) CHECK(r.emit >= to_nanos(c.warmup));
  c.warmup = 0;
  const auto all = run_sim(c, split(c, 0.5, 0.5, 0.5, 0.5), 1.0, 2);
  CHECK(all.classes[0].emitted > s.classes[0].emitted);
}

TEST_CASE("run_sim: paired monotonicity in the flow fraction") {
  const auto c = table2();
  SimOptions o;
  o.keep_records = true;
  const auto lo = run_sim(c, split(c, 0.2, 0.5, 0.2, 0.5), 1.0, 3, o);
  const auto hi = run_sim(c, split(c, 0.8, 0.5, 0.2, 0.5), 1.0, 3, o);
  double mean_lo = 0, mean_hi = 0;
  std::size_t n_lo = 0, n_hi = 0;
  for (const auto& r : lo.records)
    if (r.app == 0 && r.network_ok) mean_lo += to_seconds(r.network_delay), ++n_lo;
  for (const auto& r : hi.records)
    if (r.app == 0 && r.network_ok) mean_hi += to_seconds(r.network_delay), ++n_hi;
  REQUIRE(n_lo > 0);
  REQUIRE(n_hi > 0);
  CHECK(mean_lo / n_lo >= mean_hi / n_hi);
  // Same emitted stream, so per-request transmission never grows with f.
  REQUIRE(lo.records.size() == hi.records.size());
  CHECK(lo.classes[0].max_network_delay >= hi.classes[0].max_network_delay);
}

TEST_CASE("run_sim: priority modes are unsliced") {
  const auto c = table2();
  SimOptions o;
  o.mode = ServiceMode::network_priority;
  // Fractions are ignored in the priority modes.
  const auto s = run_sim(c, split(c, 0, 0, 0, 0), 1.0, 1, o);
  CHECK(s.classes[0].server_ok > 0);
  CHECK(s.classes[1].server_ok > 0);
  o.mode = ServiceMode::compute_priority;
  o.priority_app = "nope";
  CHECK_THROWS_AS(run_sim(c, split(c, 0, 0, 0, 0), 1.0, 1, o), SimulationError);
  CHECK(parse_service_mode("network-priority") == ServiceMode::network_priority);
  CHECK(to_string(ServiceMode::compute_priority) == "compute-priority");
  CHECK_THROWS_AS(parse_service_mode("fifo"), std::invalid_argument);
}

TEST_CASE("properties over randomized configurations") {
  Rng rng(2024);
  std::uint64_t drops = 0, served = 0;
  const ServiceMode modes[] = {ServiceMode::sliced, ServiceMode::network_priority, ServiceMode::compute_priority};
  for (int trial = 0; trial < 120; ++trial) {
    CAPTURE(trial);
    const auto c = random_config(rng);
    const auto d = random_decision(c, rng);
    const double theta = 0.8 + 0.4 * rng.uniform();
    const std::uint64_t seed = rng.next();
    SimOptions o;
    o.keep_records = true;
    o.mode = modes[trial % 3];
    const auto s = run_sim(c, d, theta, seed, o);
    const auto again = run_sim(c, d, theta, seed, o);
    const Nanos reverse = to_nanos(c.topology.path_propagation());

    std::vector<std::uint64_t> emitted(c.apps.size()), net(c.apps.size()), both(c.apps.size());
    for (const auto& r : s.records) {
      ++emitted[r.app];
      if (r.network_ok) ++net[r.app];
      if (r.network_ok && r.server_ok) ++both[r.app];
      // Flags are monotone.
      CHECK((!r.server_ok || r.network_ok));
      if (r.server_ok) CHECK(r.e2e_delay == r.network_delay + r.server_delay + reverse);
    }
    for (std::size_t i = 0; i < c.apps.size(); ++i) {
      const auto& q = s.classes[i];
      // Conservation.
      CHECK(q.emitted == q.server_ok + q.network_dropped() + q.server_dropped());
      CHECK(q.emitted == emitted[i]);
      CHECK(q.network_ok == net[i]);
      // Success counting and the product identity.
      CHECK(q.server_ok == both[i]);
      if (q.emitted && q.network_ok)
        CHECK(q.e2e_success() == doctest::Approx(q.network_success() * q.server_success()).epsilon(1e-15));
      CHECK(q.histogram.total() == q.server_ok);
      drops += q.emitted - q.server_ok;
      served += q.server_ok;
    }
    // Determinism.
    REQUIRE(again.records.size() == s.records.size());
    for (std::size_t k = 0; k < s.records.size(); ++k) {
      CHECK(again.records[k].e2e_delay == s.records[k].e2e_delay);
      CHECK(again.records[k].network_ok == s.records[k].network_ok);
      CHECK(again.records[k].server_ok == s.records[k].server_ok);
    }
    for (std::size_t i = 0; i < c.apps.size(); ++i) {
      CHECK(again.classes[i].max_delay == s.classes[i].max_delay);
      CHECK(again.classes[i].histogram.counts == s.classes[i].histogram.counts);
    }
  }
  // The random set must actually exercise drops and deliveries.
  CHECK(drops > 0);
  CHECK(served > 0);
}

TEST_CASE("sweep_grid: cardinality and order") {
  auto c = table2();
  c.sim_horizon = 0.8;
  c.warmup = 0.2;
  const auto v = linspace(0.1, 1.0, 11);
  std::vector<SliceDecision> grid;
  for (double f : v)
    for (double p : v) grid.push_back(split(c, f, p, 0, 0));
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  CHECK(sweep_cells(grid.size(), {1.0}, seeds).size() == 605);
  // Run a slice of it to keep the test quick.
  std::vector<SliceDecision> few(grid.begin(), grid.begin() + 4);
  SweepOptions o;
  o.threads = 3;
  const auto r = sweep_grid(c, few, {1.0}, seeds, o);
  REQUIRE(r.samples.size() == 20);
  CHECK(r.failures.empty());
  for (std::size_t k = 0; k < 20; ++k) {
    CHECK(r.samples[k].decision == few[k / 5]);
    CHECK(r.samples[k].seed == seeds[k % 5]);
  }
  const auto serial = sweep_grid(c, few, {1.0}, seeds);
  for (std::size_t k = 0; k < 20; ++k) CHECK(serial.samples[k].classes[0].max_delay == r.samples[k].classes[0].max_delay);
}

TEST_CASE("sweep_grid: failures are recorded, resume skips done cells") {
  auto c = table2();
  c.sim_horizon = 0.6;
  c.warmup = 0.1;
  const std::vector<SliceDecision> grid{split(c, 0.5, 0.5, 0.5, 0.5), split(c, 0.9, 0.5, 0.9, 0.5),
                                        split(c, 0.3, 0.3, 0.3, 0.3)};
  TmpDir dir("slicetwin_sweep_test");
  SweepOptions o;
  o.persist = dir.path / "data.csv";
  const auto first = sweep_grid(c, grid, {1.0}, {1, 2}, o);
  CHECK(first.samples.size() == 4);
  REQUIRE(first.failures.size() == 2);
  CHECK(first.failures[0].cell.decision == 1);
  CHECK(first.failures[0].error.find("exceed") != std::string::npos);
  CHECK(first.reused == 0);

  // Simulate an interruption by dropping the last two lines.
  std::vector<std::string> lines;
  {
    std::ifstream in(*o.persist);
    for (std::string l; std::getline(in, l);) lines.push_back(l);
  }
  {
    std::ofstream out(*o.persist);
    for (std::size_t k = 0; k + 4 < lines.size(); ++k) out << lines[k] << '\n';
  }
  int runs = 0;
  o.progress = [&](std::size_t, std::size_t) { ++runs; };
  const auto resumed = sweep_grid(c, grid, {1.0}, {1, 2}, o);
  CHECK(resumed.reused == 4);
  CHECK(runs == 2);
  REQUIRE(resumed.samples.size() == 4);
  for (std::size_t k = 0; k < 4; ++k)
    CHECK(resumed.samples[k].classes[1].max_delay == first.samples[k].classes[1].max_delay);

  const auto again = sweep_grid(c, grid, {1.0}, {1, 2}, o);
  CHECK(again.reused == 6);

  const auto loaded = read_dataset_csv(*o.persist, c);
  CHECK(loaded.samples.size() == 4);
  CHECK(loaded.cells == std::vector<std::size_t>{0, 1, 4, 5});
  CHECK(loaded.samples[2].classes[0].histogram.counts == first.samples[2].classes[0].histogram.counts);
}

TEST_CASE("aggregate_worst_case") {
  const auto c = table2();
  CHECK_THROWS_AS(aggregate_worst_case(c, {}), std::invalid_argument);

  QoESample a;
  a.decision = split(c, 0.5, 0.5, 0.3, 0.3);
  a.classes.resize(2);
  for (auto& q : a.classes) q.emitted = q.network_ok = q.server_ok = 100;
  a.classes[0].max_delay = 1.1e-3;
  a.classes[0].server_ok = 95;
  const auto one = aggregate_worst_case(c, {a});
  REQUIRE(one.size() == 2);
  CHECK(one[0].max_delay == 1.1e-3);
  CHECK(one[0].min_success == 0.95);
  CHECK(one[0].inputs == std::vector<double>{0.5, 0.5});
  CHECK(one[1].inputs == std::vector<double>{0.3, 0.3});

  QoESample b = a;
  b.seed = 2;
  b.classes[0].max_delay = 1.4e-3;
  b.classes[0].server_ok = 99;
  const auto two = aggregate_worst_case(c, {a, b});
  REQUIRE(two.size() == 2);
  CHECK(two[0].max_delay == 1.4e-3);
  CHECK(two[0].min_success == 0.95);
  CHECK(two[0].samples == 2);

  QoESample dead = a;
  dead.decision = split(c, 0.1, 0.1, 0, 0);
  dead.classes[1].server_ok = 0;
  const auto rows = aggregate_worst_case(c, {a, dead});
  CHECK(rows.size() == 4);
  CHECK(std::isinf(rows[3].max_delay));
}

TEST_CASE("aggregate_per_site: site delays bounded by the end-to-end worst case") {
  const auto c = table2();
  std::vector<QoESample> data;
  SimOptions o;
  o.keep_records = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    data.push_back(run_sim(c, split(c, 0.3, 0.55, 0.2, 0.4), 1.2, seed, o));
    // D^N + D^S of any request is its e2e delay minus the reverse propagation,
    // so it cannot exceed the sample's worst e2e delay.
    for (std::size_t i = 0; i < 2; ++i) {
      const auto& q = data.back().classes[i];
      Nanos worst = 0;
      for (const auto& r : data.back().records)
        if (r.app == i && r.server_ok) worst = std::max(worst, r.network_delay + r.server_delay);
      CHECK(to_seconds(worst) <= q.max_delay + 1e-12);
      CHECK(q.max_network_delay <= q.max_delay);
      CHECK(q.max_server_delay <= q.max_delay);
    }
  }
  data.push_back(run_sim(c, split(c, 0.3, 0.55, 0.2, 0.4), 0.8, 1));
  const auto rows = aggregate_per_site(c, data);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].theta == 1.2);
  CHECK(rows[0].samples == 3);
  CHECK(rows[2].theta == 0.8);
  double worst_net = 0;
  for (int k = 0; k < 3; ++k) worst_net = std::max(worst_net, data[k].classes[0].max_network_delay);
  CHECK(rows[0].max_network_delay == worst_net);
  CHECK(rows[0].min_server_success <= 1.0);
}

TEST_CASE("dataset CSV round trip") {
  auto c = table2();
  TmpDir dir("slicetwin_csv_test");
  std::vector<QoESample> data{run_sim(c, split(c, 0.3, 0.55, 0.2, 0.4), 1.0, 1)};
  write_dataset_csv(dir.path / "d.csv", c, data);
  const auto back = read_dataset_csv(dir.path / "d.csv", c);
  REQUIRE(back.samples.size() == 1);
  CHECK(back.samples[0].decision == data[0].decision);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.samples[0].classes[i].max_delay == data[0].classes[i].max_delay);
    CHECK(back.samples[0].classes[i].emitted == data[0].classes[i].emitted);
    CHECK(back.samples[0].classes[i].histogram.counts == data[0].classes[i].histogram.counts);
  }
  std::ifstream in(dir.path / "d.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == dataset_header());
}
