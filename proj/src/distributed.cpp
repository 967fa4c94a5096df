#include "slicetwin/distributed.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace slicetwin {

using nlohmann::json;

std::string to_string(Site s) { return s == Site::network ? "network" : "server"; }

std::string to_string(MasterMode m) { return m == MasterMode::fixed ? "fixed" : "saddle"; }

MasterMode parse_master_mode(const std::string& text) {
  if (text == "fixed") return MasterMode::fixed;
  if (text == "saddle") return MasterMode::saddle;
  throw DistributedError("unknown master mode '" + text + "' (expected fixed or saddle)");
}

namespace {

std::vector<double> with_theta(const std::vector<double>& x, double theta) {
  std::vector<double> v = x;
  v.push_back(theta);
  return v;
}

SiteUtility log_throughput_utility(std::vector<SiteClassModels> models, std::size_t dim) {
  return [models = std::move(models), dim](std::size_t i, const std::vector<double>& x, double theta) {
    SiteEval e;
    e.dx.assign(dim, 0.0);
    const auto& thr = models[i].throughput;
    if (!thr) return e;
    const auto in = with_theta(x, theta);
    const double t = thr->predict(in);
    const auto g = thr->input_gradient(in);
    e.value = std::log(t);
    for (std::size_t k = 0; k < dim; ++k) e.dx[k] = g[k] / t;
    e.dtheta = g[dim] / t;
    return e;
  };
}

SiteProblem common_site(const ScenarioConfig& config, Site site, std::vector<SiteClassModels> models,
                        SiteUtility utility, std::size_t dim) {
  config.validate();
  SiteProblem p;
  p.site = site;
  p.dim = dim;
  for (const auto& a : config.apps) {
    p.apps.push_back(a.id);
    p.tau.push_back(a.tau);
    p.rho.push_back(a.rho);
    p.theta_lo.push_back(config.theta.lo);
    p.theta_hi.push_back(config.theta.hi);
  }
  if (models.size() != config.apps.size()) throw DistributedError("need one site model set per app");
  for (const auto& m : models) {
    if (!m.delay) throw DistributedError(to_string(site) + " delay model missing");
    std::vector<double> lo(dim, 0.0), hi(dim, 1.0);
    for (const QoeModel* q : {m.delay.get(), m.throughput.get()}) {
      if (!q) continue;
      if (q->input_dim() != dim + 1)
        throw DistributedError(to_string(site) + " model expects " + std::to_string(q->input_dim()) +
                               " inputs, the site has " + std::to_string(dim) + " plus theta");
      for (std::size_t k = 0; k < dim; ++k) {
        lo[k] = std::max(lo[k], q->lo()[k]);
        hi[k] = std::min(hi[k], q->hi()[k]);
      }
    }
    p.lo.push_back(lo);
    p.hi.push_back(hi);
  }
  p.utility = utility ? std::move(utility) : log_throughput_utility(models, dim);
  p.models = std::move(models);
  p.nlp.kkt_tol = 1e-7;
  return p;
}

void check_class_count(const CouplingState& s, std::size_t apps) {
  if (s.classes.size() != apps) throw ProtocolError("state has " + std::to_string(s.classes.size()) +
                                                    " classes, expected " + std::to_string(apps));
}

}  // namespace

void SiteProblem::validate() const {
  const std::size_t n = apps.size();
  if (n == 0) throw DistributedError("site has no classes");
  if (tau.size() != n || rho.size() != n || theta_lo.size() != n || theta_hi.size() != n || models.size() != n ||
      lo.size() != n || hi.size() != n)
    throw DistributedError("site problem fields disagree on the class count");
  if (dim == 0) throw DistributedError("site has no local resources");
  if (!utility) throw DistributedError("site has no utility");
  for (std::size_t i = 0; i < n; ++i) {
    if (!models[i].delay) throw DistributedError("delay model missing for " + apps[i]);
    if (!(tau[i] > 0) || !(rho[i] > 0 && rho[i] <= 1)) throw DistributedError("bad targets for " + apps[i]);
    if (!(theta_lo[i] <= theta_hi[i])) throw DistributedError("empty theta range for " + apps[i]);
    if (lo[i].size() != dim || hi[i].size() != dim) throw DistributedError("box of " + apps[i] + " has wrong size");
  }
  for (const auto& c : capacity)
    if (c.a.size() != n * dim) throw DistributedError("capacity row '" + c.name + "' has wrong length");
}

SiteProblem network_site(const ScenarioConfig& config, std::vector<SiteClassModels> models, SiteUtility utility) {
  const std::size_t E = config.topology.edges.size();
  SiteProblem p = common_site(config, Site::network, std::move(models), std::move(utility), E);
  for (std::size_t e = 0; e < E; ++e) {
    std::vector<double> a(p.apps.size() * E, 0.0);
    for (std::size_t i = 0; i < p.apps.size(); ++i) a[i * E + e] = 1.0;
    p.capacity.push_back({a, 1.0, "capacity:" + config.topology.edges[e].id});
  }
  return p;
}

SiteProblem server_site(const ScenarioConfig& config, std::vector<SiteClassModels> models, SiteUtility utility) {
  SiteProblem p = common_site(config, Site::server, std::move(models), std::move(utility), 1);
  std::vector<std::vector<double>> rows;
  for (int c = 0; c < config.topology.cores; ++c) {
    std::vector<double> a(p.apps.size(), 0.0);
    for (std::size_t i = 0; i < p.apps.size(); ++i) {
      const auto cores = config.cores_of(i);
      if (std::find(cores.begin(), cores.end(), c) != cores.end()) a[i] = 1.0;
    }
    if (std::all_of(a.begin(), a.end(), [](double v) { return v == 0; }) ||
        std::find(rows.begin(), rows.end(), a) != rows.end())
      continue;
    rows.push_back(a);
    p.capacity.push_back({a, 1.0, "capacity:core" + std::to_string(c)});
  }
  return p;
}

// --- coupling state ------------------------------------------------------------

CouplingState CouplingState::initial(const std::vector<double>& tau, const std::vector<double>& rho,
                                     const std::vector<double>& theta_lo, const std::vector<double>& theta_hi,
                                     double alpha0) {
  if (rho.size() != tau.size() || theta_lo.size() != tau.size() || theta_hi.size() != tau.size())
    throw DistributedError("initial state: per-class vectors differ in length");
  if (!(alpha0 > 0)) throw DistributedError("alpha0 must be > 0");
  CouplingState s;
  s.alpha = s.alpha0 = alpha0;
  s.iteration = 1;
  for (std::size_t i = 0; i < tau.size(); ++i) {
    Class c;
    c.tau = tau[i];
    c.rho = rho[i];
    c.tau_n = tau[i] / 2;
    c.rho_n = std::sqrt(rho[i]);
    c.theta_lo = theta_lo[i];
    c.theta_hi = theta_hi[i];
    c.theta = 0.5 * (theta_lo[i] + theta_hi[i]);
    s.classes.push_back(c);
  }
  return s;
}

bool CouplingState::in_box() const {
  for (const auto& c : classes) {
    if (!(c.tau_n >= 0 && c.tau_n <= c.tau)) return false;
    if (!(c.rho_n >= c.rho && c.rho_n <= 1)) return false;
    if (!(c.theta >= c.theta_lo && c.theta <= c.theta_hi)) return false;
  }
  return true;
}

// --- wire format ---------------------------------------------------------------

std::string to_json(const ControllerMessage& m) {
  json j;
  j["sender"] = to_string(m.sender);
  j["iteration"] = m.iteration;
  j["objective"] = m.objective;
  j["feasible"] = m.feasible;
  j["status"] = m.status;
  j["solution"] = m.solution;
  json classes = json::array();
  for (const auto& c : m.classes)
    classes.push_back({{"lambda_tau", c.lambda_tau},
                       {"lambda_rho", c.lambda_rho},
                       {"g_theta", c.g_theta},
                       {"split_violated", c.split_violated}});
  j["classes"] = classes;
  return j.dump();
}

ControllerMessage message_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    ControllerMessage m;
    const auto sender = j.at("sender").get<std::string>();
    if (sender == "network") m.sender = Site::network;
    else if (sender == "server") m.sender = Site::server;
    else throw ProtocolError("unknown sender '" + sender + "'");
    m.iteration = j.at("iteration").get<int>();
    m.objective = j.at("objective").get<double>();
    m.feasible = j.at("feasible").get<bool>();
    m.status = j.at("status").get<std::string>();
    m.solution = j.at("solution").get<std::vector<std::vector<double>>>();
    for (const auto& c : j.at("classes")) {
      ControllerMessage::Class k;
      k.lambda_tau = c.at("lambda_tau").get<double>();
      k.lambda_rho = c.at("lambda_rho").get<double>();
      k.g_theta = c.at("g_theta").get<double>();
      k.split_violated = c.at("split_violated").get<bool>();
      if (!(k.lambda_tau >= 0 && k.lambda_rho >= 0)) throw ProtocolError("negative multiplier from " + sender);
      m.classes.push_back(k);
    }
    return m;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed controller message: ") + e.what());
  }
}

std::string to_json(const CouplingState& s) {
  json j;
  j["alpha"] = s.alpha;
  j["alpha0"] = s.alpha0;
  j["step_cap"] = s.step_cap;
  j["iteration"] = s.iteration;
  json classes = json::array();
  for (const auto& c : s.classes)
    classes.push_back({{"tau", c.tau},
                       {"rho", c.rho},
                       {"tau_n", c.tau_n},
                       {"rho_n", c.rho_n},
                       {"theta", c.theta},
                       {"theta_lo", c.theta_lo},
                       {"theta_hi", c.theta_hi}});
  j["classes"] = classes;
  return j.dump();
}

CouplingState state_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    CouplingState s;
    s.alpha = j.at("alpha").get<double>();
    s.alpha0 = j.at("alpha0").get<double>();
    s.step_cap = j.at("step_cap").get<double>();
    s.iteration = j.at("iteration").get<int>();
    for (const auto& c : j.at("classes")) {
      CouplingState::Class k;
      k.tau = c.at("tau").get<double>();
      k.rho = c.at("rho").get<double>();
      k.tau_n = c.at("tau_n").get<double>();
      k.rho_n = c.at("rho_n").get<double>();
      k.theta = c.at("theta").get<double>();
      k.theta_lo = c.at("theta_lo").get<double>();
      k.theta_hi = c.at("theta_hi").get<double>();
      s.classes.push_back(k);
    }
    return s;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed coupling state: ") + e.what());
  }
}

// --- agents --------------------------------------------------------------------

ControllerMessage solve_subproblem(const SiteProblem& site, const CouplingState& state, const AgentOptions& options) {
  site.validate();
  const std::size_t n = site.apps.size(), dim = site.dim;
  check_class_count(state, n);
  const bool net = site.site == Site::network;

  NlpProblem nlp;
  nlp.n = n * dim;
  for (std::size_t i = 0; i < n; ++i) {
    nlp.lo.insert(nlp.lo.end(), site.lo[i].begin(), site.lo[i].end());
    nlp.hi.insert(nlp.hi.end(), site.hi[i].begin(), site.hi[i].end());
  }
  nlp.linear = site.capacity;
  auto local = [dim](const std::vector<double>& x, std::size_t i) {
    return std::vector<double>(x.begin() + std::ptrdiff_t(i * dim), x.begin() + std::ptrdiff_t((i + 1) * dim));
  };

  // Constraint indices per class; -1 when the class has no throughput model.
  std::vector<int> delay_idx(n), thr_idx(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = state.classes[i];
    const double share = net ? c.tau_n / c.tau : 1.0 - c.tau_n / c.tau;
    const double theta = c.theta, tau = c.tau;
    const auto delay = site.models[i].delay;
    delay_idx[i] = int(nlp.constraints.size());
    nlp.add_constraint(
        [=](const std::vector<double>& x, std::vector<double>* g) {
          const auto in = with_theta(local(x, i), theta);
          if (g) {
            g->assign(n * dim, 0.0);
            const auto gi = delay->input_gradient(in);
            for (std::size_t k = 0; k < dim; ++k) (*g)[i * dim + k] = gi[k] / tau;
          }
          return delay->predict(in) / tau - share;
        },
        "delay:" + site.apps[i]);
    if (const auto thr = site.models[i].throughput) {
      const double log_target = net ? std::log(c.rho_n) : std::log(c.rho) - std::log(c.rho_n);
      thr_idx[i] = int(nlp.constraints.size());
      nlp.add_constraint(
          [=](const std::vector<double>& x, std::vector<double>* g) {
            const auto in = with_theta(local(x, i), theta);
            const double t = thr->predict(in);
            if (g) {
              g->assign(n * dim, 0.0);
              const auto gi = thr->input_gradient(in);
              for (std::size_t k = 0; k < dim; ++k) (*g)[i * dim + k] = -gi[k] / t;
            }
            return log_target - std::log(t);
          },
          "throughput:" + site.apps[i]);
    }
  }
  nlp.objective = [&site, &state, n, dim, local](const std::vector<double>& x, std::vector<double>* g) {
    if (g) g->assign(n * dim, 0.0);
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const SiteEval e = site.utility(i, local(x, i), state.classes[i].theta);
      sum += e.value;
      if (g)
        for (std::size_t k = 0; k < dim; ++k) (*g)[i * dim + k] = e.dx[k];
    }
    return sum;
  };

  const NlpSolution sol = solve_multistart(nlp, site.nlp);
  ControllerMessage m;
  m.sender = site.site;
  m.iteration = state.iteration;
  m.objective = sol.objective;
  m.feasible = sol.status == NlpStatus::converged ||
               (sol.status == NlpStatus::max_iter && sol.max_violation <= site.nlp.feas_tol);
  m.status = to_string(sol.status) + (sol.message.empty() ? "" : ": " + sol.message);
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = local(sol.x, i);
    m.solution.push_back(xi);
    const auto& c = state.classes[i];
    const auto in = with_theta(xi, c.theta);
    ControllerMessage::Class k;
    k.lambda_tau = std::max(0.0, sol.lambda[std::size_t(delay_idx[i])]);
    if (thr_idx[i] >= 0) k.lambda_rho = std::max(0.0, sol.lambda[std::size_t(thr_idx[i])]);
    if (!m.feasible) {
      // The elastic multipliers of a failed solve mean little; ask the master
      // for more of whatever split this class cannot meet.
      k.lambda_tau = std::min(k.lambda_tau, options.infeasible_multiplier);
      k.lambda_rho = std::min(k.lambda_rho, options.infeasible_multiplier);
      if (nlp.constraints[std::size_t(delay_idx[i])](sol.x, nullptr) > site.nlp.feas_tol) {
        k.lambda_tau = options.infeasible_multiplier;
        k.split_violated = true;
      }
      if (thr_idx[i] >= 0 && nlp.constraints[std::size_t(thr_idx[i])](sol.x, nullptr) > site.nlp.feas_tol) {
        k.lambda_rho = options.infeasible_multiplier;
        k.split_violated = true;
      }
    }
    double g = site.utility(i, xi, c.theta).dtheta;
    g -= k.lambda_tau * site.models[i].delay->input_gradient(in)[dim] / c.tau;
    if (const auto& thr = site.models[i].throughput) g += k.lambda_rho * thr->input_gradient(in)[dim] / thr->predict(in);
    k.g_theta = g;
    m.classes.push_back(k);
  }
  return m;
}

ControllerMessage solve_network_subproblem(const SiteProblem& site, const CouplingState& state,
                                           const AgentOptions& options) {
  if (site.site != Site::network) throw DistributedError("not a network site");
  return solve_subproblem(site, state, options);
}

ControllerMessage solve_server_subproblem(const SiteProblem& site, const CouplingState& state,
                                          const AgentOptions& options) {
  if (site.site != Site::server) throw DistributedError("not a server site");
  return solve_subproblem(site, state, options);
}

// --- master --------------------------------------------------------------------

namespace {

void check_pair(const CouplingState& s, const ControllerMessage& n, const ControllerMessage& v) {
  if (n.sender != Site::network || v.sender != Site::server) throw ProtocolError("messages from the wrong senders");
  if (n.iteration != s.iteration || v.iteration != s.iteration)
    throw ProtocolError("iteration mismatch: state " + std::to_string(s.iteration) + ", network " +
                        std::to_string(n.iteration) + ", server " + std::to_string(v.iteration));
  check_class_count(s, n.classes.size());
  check_class_count(s, v.classes.size());
}

double theta_sign(MasterMode mode) { return mode == MasterMode::fixed ? 1.0 : -1.0; }

}  // namespace

CouplingState master_update(const CouplingState& state, const ControllerMessage& network,
                            const ControllerMessage& server, MasterMode mode) {
  check_pair(state, network, server);
  CouplingState next = state;
  const double a = state.alpha;
  auto cap = [&](double d) { return std::clamp(d, -state.step_cap, state.step_cap); };
  for (std::size_t i = 0; i < state.classes.size(); ++i) {
    auto& c = next.classes[i];
    const auto& nm = network.classes[i];
    const auto& sm = server.classes[i];
    const double s = std::clamp(c.tau_n / c.tau + a * cap(nm.lambda_tau - sm.lambda_tau), 0.0, 1.0);
    c.tau_n = s == 1.0 ? c.tau : s * c.tau;
    c.rho_n = std::clamp(c.rho_n + a * cap(sm.lambda_rho - nm.lambda_rho), c.rho, 1.0);
    c.theta = std::clamp(c.theta + theta_sign(mode) * a * cap(nm.g_theta + sm.g_theta), c.theta_lo, c.theta_hi);
  }
  next.iteration = state.iteration + 1;
  next.alpha = state.alpha0 / std::sqrt(double(next.iteration));
  return next;
}

double Residuals::max() const {
  double m = 0;
  for (const auto* v : {&tau, &rho, &theta})
    for (double x : *v) m = std::max(m, x);
  return m;
}

Residuals residuals(const CouplingState& state, const ControllerMessage& network, const ControllerMessage& server,
                    MasterMode mode) {
  check_pair(state, network, server);
  Residuals r;
  for (std::size_t i = 0; i < state.classes.size(); ++i) {
    const auto& c = state.classes[i];
    const auto& nm = network.classes[i];
    const auto& sm = server.classes[i];
    const double s = c.tau_n / c.tau;
    r.tau.push_back(std::abs(std::clamp(s + nm.lambda_tau - sm.lambda_tau, 0.0, 1.0) - s));
    r.rho.push_back(std::abs(std::clamp(c.rho_n + sm.lambda_rho - nm.lambda_rho, c.rho, 1.0) - c.rho_n));
    r.theta.push_back(std::abs(
        std::clamp(c.theta + theta_sign(mode) * (nm.g_theta + sm.g_theta), c.theta_lo, c.theta_hi) - c.theta));
  }
  return r;
}

void Channel::push(std::string message) {
  {
    std::lock_guard lock(mutex_);
    queue_.push_back(std::move(message));
  }
  ready_.notify_one();
}

std::string Channel::pop() {
  std::unique_lock lock(mutex_);
  ready_.wait(lock, [this] { return !queue_.empty(); });
  std::string m = std::move(queue_.front());
  queue_.pop_front();
  return m;
}

std::string trace_header(const std::vector<std::string>& apps) {
  std::string h = "iteration";
  for (const auto& a : apps)
    for (const char* col : {"tau_n", "rho_n", "theta", "lambda_tau_n", "lambda_tau_s", "lambda_rho_n", "lambda_rho_s",
                            "g_theta_n", "g_theta_s", "r_tau", "r_rho", "r_theta"})
      h += "," + a + "_" + col;
  return h + ",objective_n,objective_s";
}

namespace {

constexpr const char* kStop = "stop";

// Answers coupling states with controller messages until told to stop.
void agent_loop(const SiteProblem& site, const AgentOptions& options, Channel& inbox, Channel& master) {
  for (;;) {
    const std::string in = inbox.pop();
    if (in == kStop) return;
    try {
      master.push(to_json(solve_subproblem(site, state_from_json(in), options)));
    } catch (const std::exception& e) {
      master.push(json{{"error", to_string(site.site) + " agent: " + e.what()}}.dump());
    }
  }
}

void trace_row(std::ostream& out, const CouplingState& s, const ControllerMessage& n, const ControllerMessage& v,
               const Residuals& r) {
  std::ostringstream row;
  row.precision(12);
  row << s.iteration;
  for (std::size_t i = 0; i < s.classes.size(); ++i) {
    const auto& c = s.classes[i];
    row << ',' << c.tau_n << ',' << c.rho_n << ',' << c.theta << ',' << n.classes[i].lambda_tau << ','
        << v.classes[i].lambda_tau << ',' << n.classes[i].lambda_rho << ',' << v.classes[i].lambda_rho << ','
        << n.classes[i].g_theta << ',' << v.classes[i].g_theta << ',' << r.tau[i] << ',' << r.rho[i] << ','
        << r.theta[i];
  }
  row << ',' << n.objective << ',' << v.objective << '\n';
  out << row.str();
}

}  // namespace

DistributedResult run_algorithm1(const SiteProblem& network, const SiteProblem& server,
                                 const DistributedOptions& options) {
  network.validate();
  server.validate();
  if (network.site != Site::network || server.site != Site::server)
    throw DistributedError("run_algorithm1 needs a network and a server site");
  if (network.apps != server.apps || network.tau != server.tau || network.rho != server.rho ||
      network.theta_lo != server.theta_lo || network.theta_hi != server.theta_hi)
    throw DistributedError("sites disagree on the classes or their targets");
  if (!(options.eps > 0)) throw DistributedError("eps must be > 0");
  if (options.max_iter < 1) throw DistributedError("max_iter must be >= 1");
  if (!(options.step_cap > 0)) throw DistributedError("step_cap must be > 0");

  CouplingState state =
      CouplingState::initial(network.tau, network.rho, network.theta_lo, network.theta_hi, options.alpha0);
  state.step_cap = options.step_cap;
  if (options.trace) *options.trace << trace_header(network.apps) << '\n';

  Channel to_network, to_server, to_master;
  std::thread tn(agent_loop, std::cref(network), std::cref(options.agent), std::ref(to_network), std::ref(to_master));
  std::thread ts(agent_loop, std::cref(server), std::cref(options.agent), std::ref(to_server), std::ref(to_master));
  struct Joiner {
    Channel &a, &b;
    std::thread &ta, &tb;
    ~Joiner() {
      a.push(kStop);
      b.push(kStop);
      ta.join();
      tb.join();
    }
  } joiner{to_network, to_server, tn, ts};

  DistributedResult res;
  for (int k = 1;; ++k) {
    const std::string wire = to_json(state);
    to_network.push(wire);
    to_server.push(wire);
    std::optional<ControllerMessage> mn, ms;
    for (int got = 0; got < 2; ++got) {
      const std::string reply = to_master.pop();
      const json j = json::parse(reply);
      if (j.contains("error")) {
        // Drain the other reply so the agents are idle before joining.
        if (got == 0) to_master.pop();
        throw DistributedError(j["error"].get<std::string>());
      }
      auto m = message_from_json(reply);
      (m.sender == Site::network ? mn : ms) = std::move(m);
    }
    if (!mn || !ms) throw ProtocolError("expected one reply from each agent");

    res.residuals = residuals(state, *mn, *ms, options.mode);
    if (options.trace) trace_row(*options.trace, state, *mn, *ms, res.residuals);
    res.iterations = k;
    res.state = state;
    res.network = *mn;
    res.server = *ms;
    if (mn->feasible && ms->feasible && res.residuals.max() < options.eps) {
      res.converged = true;
      break;
    }
    if (k >= options.max_iter) break;
    state = master_update(state, *mn, *ms, options.mode);
  }

  res.flows = res.network.solution;
  res.cpu = res.server.solution;
  res.objective = res.network.objective + res.server.objective;
  std::ostringstream msg;
  msg.precision(3);
  if (res.converged) msg << "converged after " << res.iterations << " iterations";
  else msg << "no convergence after " << res.iterations << " iterations (max residual " << res.residuals.max()
           << (res.network.feasible && res.server.feasible ? "" : ", a subproblem is infeasible") << ")";
  res.message = msg.str();
  return res;
}

SliceDecision combine(const ScenarioConfig& config, const DistributedResult& result) {
  if (result.flows.size() != config.apps.size() || result.cpu.size() != config.apps.size())
    throw DistributedError("result does not match the scenario");
  SliceDecision d = SliceDecision::zeros(config);
  for (std::size_t i = 0; i < config.apps.size(); ++i) {
    std::vector<double> x = result.flows[i];
    x.insert(x.end(), result.cpu[i].begin(), result.cpu[i].end());
    set_class_resources(config, d, i, x);
  }
  return d;
}

CentralizedResult solve_centralized(const SiteProblem& network, const SiteProblem& server,
                                    const std::vector<double>& theta) {
  network.validate();
  server.validate();
  const std::size_t n = network.apps.size(), dn = network.dim, ds = server.dim;
  if (server.apps.size() != n || theta.size() != n) throw DistributedError("class counts differ");
  const std::size_t off = n * dn;

  NlpProblem nlp;
  nlp.n = off + n * ds;
  const std::size_t N = nlp.n;
  for (std::size_t i = 0; i < n; ++i) {
    nlp.lo.insert(nlp.lo.end(), network.lo[i].begin(), network.lo[i].end());
    nlp.hi.insert(nlp.hi.end(), network.hi[i].begin(), network.hi[i].end());
  }
  for (std::size_t i = 0; i < n; ++i) {
    nlp.lo.insert(nlp.lo.end(), server.lo[i].begin(), server.lo[i].end());
    nlp.hi.insert(nlp.hi.end(), server.hi[i].begin(), server.hi[i].end());
  }
  for (auto row : network.capacity) {
    row.a.resize(nlp.n, 0.0);
    nlp.linear.push_back(row);
  }
  for (auto row : server.capacity) {
    std::vector<double> a(off, 0.0);
    a.insert(a.end(), row.a.begin(), row.a.end());
    row.a = a;
    nlp.linear.push_back(row);
  }
  auto xn = [=](const std::vector<double>& x, std::size_t i) {
    std::vector<double> v(x.begin() + std::ptrdiff_t(i * dn), x.begin() + std::ptrdiff_t((i + 1) * dn));
    v.push_back(theta[i]);
    return v;
  };
  auto xs = [=](const std::vector<double>& x, std::size_t i) {
    std::vector<double> v(x.begin() + std::ptrdiff_t(off + i * ds), x.begin() + std::ptrdiff_t(off + (i + 1) * ds));
    v.push_back(theta[i]);
    return v;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const auto dN = network.models[i].delay, dS = server.models[i].delay;
    const double tau = network.tau[i];
    nlp.add_constraint(
        [=](const std::vector<double>& x, std::vector<double>* g) {
          const auto a = xn(x, i), b = xs(x, i);
          if (g) {
            g->assign(N, 0.0);
            const auto ga = dN->input_gradient(a), gb = dS->input_gradient(b);
            for (std::size_t k = 0; k < dn; ++k) (*g)[i * dn + k] = ga[k] / tau;
            for (std::size_t k = 0; k < ds; ++k) (*g)[off + i * ds + k] = gb[k] / tau;
          }
          return (dN->predict(a) + dS->predict(b)) / tau - 1.0;
        },
        "delay:" + network.apps[i]);
    const auto tN = network.models[i].throughput, tS = server.models[i].throughput;
    if (!tN && !tS) continue;
    const double log_rho = std::log(network.rho[i]);
    nlp.add_constraint(
        [=](const std::vector<double>& x, std::vector<double>* g) {
          if (g) g->assign(N, 0.0);
          double v = log_rho;
          if (tN) {
            const auto a = xn(x, i);
            const double t = tN->predict(a);
            v -= std::log(t);
            if (g) {
              const auto ga = tN->input_gradient(a);
              for (std::size_t k = 0; k < dn; ++k) (*g)[i * dn + k] = -ga[k] / t;
            }
          }
          if (tS) {
            const auto b = xs(x, i);
            const double t = tS->predict(b);
            v -= std::log(t);
            if (g) {
              const auto gb = tS->input_gradient(b);
              for (std::size_t k = 0; k < ds; ++k) (*g)[off + i * ds + k] = -gb[k] / t;
            }
          }
          return v;
        },
        "throughput:" + network.apps[i]);
  }
  nlp.objective = [&network, &server, &theta, n, dn, ds, off, N, xn, xs](const std::vector<double>& x, std::vector<double>* g) {
    if (g) g->assign(N, 0.0);
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      auto a = xn(x, i), b = xs(x, i);
      a.pop_back();
      b.pop_back();
      const SiteEval en = network.utility(i, a, theta[i]);
      const SiteEval es = server.utility(i, b, theta[i]);
      sum += en.value + es.value;
      if (g) {
        for (std::size_t k = 0; k < dn; ++k) (*g)[i * dn + k] = en.dx[k];
        for (std::size_t k = 0; k < ds; ++k) (*g)[off + i * ds + k] = es.dx[k];
      }
    }
    return sum;
  };

  NlpOptions opt = network.nlp;
  CentralizedResult r;
  r.solution = solve_multistart(nlp, opt);
  r.objective = r.solution.objective;
  for (std::size_t i = 0; i < n; ++i) {
    auto a = xn(r.solution.x, i), b = xs(r.solution.x, i);
    a.pop_back();
    b.pop_back();
    r.flows.push_back(a);
    r.cpu.push_back(b);
  }
  return r;
}

}  // namespace slicetwin
