// Scenario description: topology, application classes, theta range and
// simulation settings, plus the loader for the .cfg text format.
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace slicetwin {

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Priority { strict, degradable };

struct PacketSizeDist {
  // Uniform over integer byte counts [min_bytes, max_bytes].
  std::uint32_t min_bytes = 20;
  std::uint32_t max_bytes = 65535;

  double mean() const { return 0.5 * (double(min_bytes) + double(max_bytes)); }
};

// On-off source parameters shared by every user of a class. ON and OFF
// durations are bounded Pareto with the same shape; packets are emitted at
// burst_ratio * pkt_rate while ON.
struct BurstModel {
  double pareto_shape = 1.4;
  double on_mean = 0.005;     // seconds
  double burst_ratio = 2.0;   // peak rate / nominal rate
  double pareto_cap = 100.0;  // upper bound of a duration, in units of its scale
};

struct AppClass {
  std::string id;
  double tau = 0.0;       // E2E delay bound, seconds
  double rho = 0.0;       // E2E success requirement in (0,1]
  double work = 0.0;      // MI per request
  double pkt_rate = 0.0;  // requests per second per user
  PacketSizeDist pkt_size;
  Priority priority = Priority::strict;
  BurstModel burst;
  std::vector<int> cores;  // cores this class may run on; empty = all

  void validate() const;
};

struct Edge {
  std::string id;
  double capacity = 0.0;  // bits/s
  double prop_delay = 0.0;  // seconds
};

struct Topology {
  std::vector<Edge> edges;  // traversed in order client -> server
  int cores = 1;
  double core_speed = 0.0;  // MIPS
  int buffer_len = 100;

  void validate() const;
  double path_propagation() const;
};

struct ThetaSpec {
  std::string kind = "arrival-rate";
  double lo = 1.0;
  double hi = 1.0;
  std::vector<double> grid;  // sweep values; defaults to {lo, mid, hi}
  std::vector<std::uint64_t> seeds;

  void validate() const;
  double mean() const { return 0.5 * (lo + hi); }
  bool contains(double theta) const { return theta >= lo && theta <= hi; }
};

struct ScenarioConfig {
  std::string name;
  Topology topology;
  std::vector<AppClass> apps;
  ThetaSpec theta;
  int users = 1;
  double sim_horizon = 10.0;  // seconds
  double warmup = 1.0;        // seconds

  void validate() const;
  int app_index(const std::string& id) const;  // -1 when absent
  // Cores assigned to app i, resolved from AppClass::cores.
  std::vector<int> cores_of(std::size_t app) const;
};

// Parses the structured text format. `origin` names the source in errors.
ScenarioConfig parse_scenario(const std::string& text, const std::string& origin = "<string>");
ScenarioConfig load_scenario(const std::filesystem::path& path);

// Inverse of parse_scenario; parse_scenario(to_text(c)) reproduces c.
std::string to_text(const ScenarioConfig& config);

// Stable 64-bit FNV-1a hash, used for scenario content hashes and seed mixing.
std::uint64_t fnv1a(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace slicetwin
