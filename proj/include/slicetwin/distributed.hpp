// Primal decomposition of the joint slicing problem into a network-side and a
// server-side subproblem, coordinated by a master that moves the delay and
// throughput splits (and theta) along the exchanged multipliers.
#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "slicetwin/decision.hpp"
#include "slicetwin/nlp.hpp"
#include "slicetwin/scenario.hpp"
#include "slicetwin/surrogate.hpp"

namespace slicetwin {

class DistributedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ProtocolError : public DistributedError {
 public:
  using DistributedError::DistributedError;
};

std::string to_string(Site s);

// Site models of one class. Inputs are (local resources..., theta). A null
// throughput model means the site never loses requests.
struct SiteClassModels {
  std::shared_ptr<const QoeModel> delay;
  std::shared_ptr<const QoeModel> throughput;
};

struct SiteEval {
  double value = 0;
  std::vector<double> dx;  // w.r.t. the class's local resources
  double dtheta = 0;
};
// Local utility of one class, maximized by the agent.
using SiteUtility = std::function<SiteEval(std::size_t app, const std::vector<double>& x, double theta)>;

// Everything one agent knows. The network side never sees the server models
// and vice versa.
struct SiteProblem {
  Site site = Site::network;
  std::vector<std::string> apps;
  std::vector<double> tau, rho;  // end-to-end targets
  std::vector<double> theta_lo, theta_hi;
  std::vector<SiteClassModels> models;
  std::size_t dim = 0;                      // local resources per class
  std::vector<std::vector<double>> lo, hi;  // per class box
  std::vector<LinearConstraint> capacity;   // over the stacked local resources
  SiteUtility utility;                      // default: sum of log T
  NlpOptions nlp;

  void validate() const;
};

// The network side takes flows on every edge, the server side one CPU
// fraction per class applied to all of its cores.
SiteProblem network_site(const ScenarioConfig& config, std::vector<SiteClassModels> models, SiteUtility utility = {});
SiteProblem server_site(const ScenarioConfig& config, std::vector<SiteClassModels> models, SiteUtility utility = {});

struct CouplingState {
  struct Class {
    double tau = 0, rho = 0;            // end-to-end targets
    double tau_n = 0;                   // network share of tau, in [0, tau]
    double rho_n = 0;                   // network share of rho, in [rho, 1]
    double theta = 1, theta_lo = 1, theta_hi = 1;
  };
  std::vector<Class> classes;
  double alpha = 0.1;
  double alpha0 = 0.1;
  // Multiplier differences and theta subgradients are clipped to this
  // magnitude before the step, so one stiff or infeasible reply cannot throw
  // a split across its whole range.
  double step_cap = 1.0;
  int iteration = 1;

  // tau_n = tau/2, rho_n = sqrt(rho), theta at the centre of its range.
  static CouplingState initial(const std::vector<double>& tau, const std::vector<double>& rho,
                               const std::vector<double>& theta_lo, const std::vector<double>& theta_hi,
                               double alpha0 = 0.1);
  bool in_box() const;
};

struct ControllerMessage {
  struct Class {
    double lambda_tau = 0;
    double lambda_rho = 0;
    double g_theta = 0;
    bool split_violated = false;
  };
  Site sender = Site::network;
  int iteration = 0;
  std::vector<Class> classes;
  double objective = 0;
  std::vector<std::vector<double>> solution;  // local resources per class
  bool feasible = true;
  std::string status;
};

std::string to_json(const ControllerMessage& m);
ControllerMessage message_from_json(const std::string& text);
std::string to_json(const CouplingState& s);
CouplingState state_from_json(const std::string& text);

struct AgentOptions {
  // Reported on the split constraints a subproblem cannot meet; the other
  // multipliers of an infeasible solve are capped at it.
  double infeasible_multiplier = 1e3;
};

ControllerMessage solve_subproblem(const SiteProblem& site, const CouplingState& state, const AgentOptions& options = {});
ControllerMessage solve_network_subproblem(const SiteProblem& site, const CouplingState& state,
                                           const AgentOptions& options = {});
ControllerMessage solve_server_subproblem(const SiteProblem& site, const CouplingState& state,
                                          const AgentOptions& options = {});

enum class MasterMode { fixed, saddle };
std::string to_string(MasterMode m);
MasterMode parse_master_mode(const std::string& text);

// One subgradient step with projection; advances iteration and alpha.
CouplingState master_update(const CouplingState& state, const ControllerMessage& network,
                            const ControllerMessage& server, MasterMode mode);

// Per class, the distance a unit master step would move each coupling
// variable. Equals |lambda^N - lambda^S| (and |g^N + g^S|) away from the
// boundaries, and vanishes where the projection holds a variable in place.
struct Residuals {
  std::vector<double> tau, rho, theta;
  double max() const;
};
Residuals residuals(const CouplingState& state, const ControllerMessage& network, const ControllerMessage& server,
                    MasterMode mode);

// Unbounded blocking queue between actors.
class Channel {
 public:
  void push(std::string message);
  std::string pop();

 private:
  std::mutex mutex_;
  std::condition_variable ready_;
  std::deque<std::string> queue_;
};

struct DistributedOptions {
  MasterMode mode = MasterMode::fixed;
  double eps = 1e-4;
  int max_iter = 500;
  double alpha0 = 0.1;
  double step_cap = 1.0;
  AgentOptions agent;
  std::ostream* trace = nullptr;  // CSV, see trace_header()
};

struct DistributedResult {
  bool converged = false;
  int iterations = 0;
  CouplingState state;  // the state the final messages answer
  ControllerMessage network, server;
  Residuals residuals;
  double objective = 0;  // network plus server utility
  std::vector<std::vector<double>> flows, cpu;  // per class local solutions
  std::string message;
};

// Runs both agents on their own threads until every residual is below eps
// or max_iter is reached.
DistributedResult run_algorithm1(const SiteProblem& network, const SiteProblem& server,
                                 const DistributedOptions& options = {});

std::string trace_header(const std::vector<std::string>& apps);

// Decision in the scenario layout from the per-class local solutions.
SliceDecision combine(const ScenarioConfig& config, const DistributedResult& result);

struct CentralizedResult {
  NlpSolution solution;
  std::vector<std::vector<double>> flows, cpu;
  double objective = 0;
};

// Joint problem with the splits eliminated (D^N + D^S <= tau and
// T^N T^S >= rho) at the given theta; the reference the agents should reach.
CentralizedResult solve_centralized(const SiteProblem& network, const SiteProblem& server,
                                    const std::vector<double>& theta);

}  // namespace slicetwin
