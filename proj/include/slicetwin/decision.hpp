#pragma once

#include <string>
#include <vector>

#include "slicetwin/scenario.hpp"

namespace slicetwin {

// Per-class resource fractions: flows[app][edge] of each link's capacity and
// cpu[app][core] of each core's speed.
struct SliceDecision {
  std::vector<std::vector<double>> flows;
  std::vector<std::vector<double>> cpu;

  static SliceDecision zeros(std::size_t apps, std::size_t edges, std::size_t cores);
  static SliceDecision zeros(const ScenarioConfig& config);

  std::size_t apps() const { return flows.size(); }
  bool shape_matches(const ScenarioConfig& config) const;
  // Canonical text form, used as a grouping key and in CSV files.
  std::string key() const;
  static SliceDecision from_key(const std::string& key);

  bool operator==(const SliceDecision&) const = default;
};

// Slicer variables of one class: its flow on every edge followed by one CPU
// fraction applied uniformly to each of the class's cores.
std::vector<double> class_resources(const ScenarioConfig& config, const SliceDecision& d, std::size_t app);
void set_class_resources(const ScenarioConfig& config, SliceDecision& d, std::size_t app,
                         const std::vector<double>& x);
inline std::size_t class_resource_dim(const ScenarioConfig& config) {
  return config.topology.edges.size() + 1;
}

// Probe decisions for the sweep: for each app, one decision per (f, phi) grid
// point in which only that app is allocated. Slices are isolated, so probing
// classes one at a time loses nothing.
std::vector<SliceDecision> probe_grid(const ScenarioConfig& config, const std::vector<double>& f_values,
                                      const std::vector<double>& phi_values);
std::vector<double> linspace(double lo, double hi, int n);

}  // namespace slicetwin
