// Centralized allocation: robust joint slicing with learned worst-case QoE
// constraints, and graceful degradation of low-priority classes.
#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "slicetwin/decision.hpp"
#include "slicetwin/nlp.hpp"
#include "slicetwin/scenario.hpp"
#include "slicetwin/surrogate.hpp"

namespace slicetwin {

class SlicerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Worst-case models of one class over its class_resources() vector.
struct ClassModels {
  std::shared_ptr<const QoeModel> delay;
  std::shared_ptr<const QoeModel> throughput;
};

struct SliceProblem {
  ScenarioConfig config;
  std::vector<ClassModels> models;  // one per app
  // Delay constraints use tau * (1 - delay_margin), leaving room for
  // surrogate error and unseen seeds.
  double delay_margin = 0.0;
  NlpOptions nlp;

  void validate() const;
};

struct ClassPrediction {
  std::string app;
  std::vector<double> resources;
  double delay = 0;       // seconds
  double throughput = 0;  // fraction
  double tau = 0;
  double rho = 0;
  bool degradable = false;
};

struct SliceResult {
  SliceDecision decision;
  NlpSolution solution;
  bool feasible = false;
  std::vector<ClassPrediction> predicted;
  // Objective in the form of the problem solved: sum of throughputs for the
  // robust problem, penalty minus utility for graceful degradation.
  double objective = 0;
  std::string message;
};

// Maximizes the summed predicted throughput subject to per-class delay and
// throughput constraints and the link and core capacities.
SliceResult solve_robust(const SliceProblem& problem);

struct DegradeSpec {
  std::vector<bool> degradable;  // per app
  std::vector<double> w_tau;     // weight on max(0, D/tau - 1)^2
  std::vector<double> w_rho;     // weight on max(0, rho - T)^2

  // Degradable set from the scenario priorities, unit weights.
  static DegradeSpec from_config(const ScenarioConfig& config, double weight = 1.0);
  void validate(std::size_t apps) const;
};

struct GracefulResult : SliceResult {
  // For each degradable app, the achieved (delay, throughput), i.e. the
  // relaxed bounds the class can be offered.
  struct Relaxed {
    std::string app;
    double tau = 0;
    double rho = 0;
  };
  std::vector<Relaxed> relaxed;
  double penalty = 0;
  double utility = 0;
};

// Strict classes keep their constraints; degradable ones trade them for a
// penalty. Throws SlicerError("strict set itself infeasible") when the strict
// classes alone cannot be satisfied.
GracefulResult solve_graceful(const SliceProblem& problem, const DegradeSpec& spec);

struct ValidationReport {
  struct Violation {
    std::string what;
    double margin = 0;
  };
  std::vector<Violation> violations;
  std::vector<std::string> warnings;
  bool valid() const { return violations.empty(); }
};

// Exact check of [0,1] entries and per-edge / per-core sums.
ValidationReport validate_decision(const SliceDecision& decision, const Topology& topology);

}  // namespace slicetwin
