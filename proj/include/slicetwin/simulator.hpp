// Event-driven digital twin of the sliced fronthaul and edge server.
//
// A request of class i leaves its client at its emit time, crosses every
// edge of the topology in order (FIFO queue + transmission + propagation per
// edge), queues for a CPU slice at the server, is served, and the response
// returns over an uncongested reverse path (propagation only). All event
// times are integer nanoseconds.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "slicetwin/arrivals.hpp"
#include "slicetwin/decision.hpp"
#include "slicetwin/scenario.hpp"

namespace slicetwin {

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ServiceMode {
  sliced,            // per-class isolated slices on every edge and core
  network_priority,  // unsliced; strict priority at the links, shared FIFO at the server
  compute_priority,  // unsliced; shared FIFO at the links, strict priority at the server
};

std::string to_string(ServiceMode mode);
ServiceMode parse_service_mode(const std::string& text);

struct SimOptions {
  ServiceMode mode = ServiceMode::sliced;
  std::string priority_app;  // class favoured by the priority modes; default: tightest tau
  bool keep_records = false;
  double hist_bin = 50e-6;   // seconds
  std::optional<double> horizon;  // overrides config.sim_horizon
};

struct RequestRecord {
  std::uint32_t app = 0;
  Nanos emit = 0;
  std::uint32_t bytes = 0;
  Nanos network_delay = 0;  // emit -> arrival at the server, incl. forward propagation
  Nanos server_delay = 0;   // arrival at the server -> end of service
  Nanos e2e_delay = 0;      // network + server + reverse propagation
  bool network_ok = false;
  bool server_ok = false;
};

struct DelayHistogram {
  double bin_width = 50e-6;  // seconds
  std::vector<std::uint64_t> counts;

  void add(Nanos delay);
  std::uint64_t total() const;
};

struct ClassQoE {
  std::string app;
  std::uint64_t emitted = 0;
  std::uint64_t network_ok = 0;  // delivered to the server
  std::uint64_t server_ok = 0;   // served, i.e. end-to-end success
  std::uint64_t violations = 0;  // delivered with e2e delay > tau

  double max_delay = 0;          // seconds, over delivered requests
  double mean_delay = 0;
  double p99_delay = 0;
  double max_network_delay = 0;  // over network_ok requests
  double max_server_delay = 0;   // over server_ok requests
  DelayHistogram histogram;

  // Empty denominators count as success.
  double network_success() const { return emitted ? double(network_ok) / double(emitted) : 1.0; }
  double server_success() const { return network_ok ? double(server_ok) / double(network_ok) : 1.0; }
  double e2e_success() const { return emitted ? double(server_ok) / double(emitted) : 1.0; }
  std::uint64_t network_dropped() const { return emitted - network_ok; }
  std::uint64_t server_dropped() const { return network_ok - server_ok; }
  double violation_fraction() const { return server_ok ? double(violations) / double(server_ok) : 0.0; }
};

struct QoESample {
  SliceDecision decision;
  double theta = 1.0;
  std::uint64_t seed = 0;
  std::vector<ClassQoE> classes;
  std::vector<RequestRecord> records;  // only with SimOptions::keep_records
};

// Throws SimulationError for shape mismatches, capacity violations, or theta
// outside the scenario range.
QoESample run_sim(const ScenarioConfig& config, const SliceDecision& decision, double theta,
                  std::uint64_t seed, const SimOptions& options = {});

// --- sweeps -----------------------------------------------------------------

struct SweepCell {
  std::size_t index = 0;
  std::size_t decision = 0;
  double theta = 1.0;
  std::uint64_t seed = 0;
};

struct SweepResult {
  std::vector<QoESample> samples;  // grid order, successful cells only
  struct Failure {
    SweepCell cell;
    std::string error;
  };
  std::vector<Failure> failures;
  std::size_t reused = 0;  // cells loaded from an earlier partial run
};

struct SweepOptions {
  SimOptions sim;
  unsigned threads = 1;
  // When set, every finished cell is appended to this dataset CSV (plus its
  // histogram sidecar) and cells already present are not run again.
  std::optional<std::filesystem::path> persist;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

// Cells are enumerated decision-major, then theta, then seed.
std::vector<SweepCell> sweep_cells(std::size_t decisions, const std::vector<double>& thetas,
                                   const std::vector<std::uint64_t>& seeds);

SweepResult sweep_grid(const ScenarioConfig& config, const std::vector<SliceDecision>& grid,
                       const std::vector<double>& thetas, const std::vector<std::uint64_t>& seeds,
                       const SweepOptions& options = {});

// --- aggregation ------------------------------------------------------------

// Worst case of one class at one decision over every (theta, seed).
struct WorstCaseRow {
  std::size_t app = 0;
  SliceDecision decision;
  std::vector<double> inputs;  // class_resources() of the class
  double max_delay = 0;        // seconds; +inf when nothing was delivered
  double min_success = 1;
  std::size_t samples = 0;
};

// Per-site worst case over seeds, keyed by (decision, theta).
struct SiteRow {
  std::size_t app = 0;
  SliceDecision decision;
  double theta = 1.0;
  std::vector<double> inputs;
  double max_network_delay = 0;
  double max_server_delay = 0;
  double min_network_success = 1;
  double min_server_success = 1;
  std::size_t samples = 0;
};

std::vector<WorstCaseRow> aggregate_worst_case(const ScenarioConfig& config, const std::vector<QoESample>& dataset);
std::vector<SiteRow> aggregate_per_site(const ScenarioConfig& config, const std::vector<QoESample>& dataset);

// --- persistence ------------------------------------------------------------

// One row per (class, decision, theta, seed); see README for the columns.
void write_dataset_csv(const std::filesystem::path& path, const ScenarioConfig& config,
                       const std::vector<QoESample>& samples);
void append_dataset_rows(std::ostream& csv, std::ostream& hist, std::size_t cell, const QoESample& sample);
std::string dataset_header();
std::string histogram_header();
std::filesystem::path histogram_sidecar(const std::filesystem::path& dataset);

struct LoadedDataset {
  std::vector<QoESample> samples;
  std::vector<std::size_t> cells;  // cell index of each sample
};
LoadedDataset read_dataset_csv(const std::filesystem::path& path, const ScenarioConfig& config);

}  // namespace slicetwin
