#include "slicetwin/slicer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace slicetwin {

namespace {

struct Layout {
  std::size_t apps = 0;
  std::size_t dim = 0;  // per class
  std::size_t n() const { return apps * dim; }
  std::vector<double> slice(const std::vector<double>& x, std::size_t i) const {
    return {x.begin() + std::ptrdiff_t(i * dim), x.begin() + std::ptrdiff_t((i + 1) * dim)};
  }
};

// Value and gradient of a class model lifted to the full variable vector.
double lifted(const QoeModel& m, const Layout& L, std::size_t i, const std::vector<double>& x, std::vector<double>* g,
              double* local_value = nullptr) {
  const auto xi = L.slice(x, i);
  const double v = m.predict(xi);
  if (local_value) *local_value = v;
  if (g) {
    g->assign(L.n(), 0.0);
    const auto gi = m.input_gradient(xi);
    std::copy(gi.begin(), gi.end(), g->begin() + std::ptrdiff_t(i * L.dim));
  }
  return v;
}

double effective_tau(const SliceProblem& p, std::size_t i) { return p.config.apps[i].tau * (1.0 - p.delay_margin); }

// Box, capacity rows and (optionally) the QoE constraints of the listed apps.
NlpProblem base_problem(const SliceProblem& p, const Layout& L) {
  const auto& topo = p.config.topology;
  const std::size_t E = topo.edges.size();
  NlpProblem nlp;
  nlp.n = L.n();
  nlp.lo.assign(nlp.n, 0.0);
  nlp.hi.assign(nlp.n, 1.0);
  for (std::size_t i = 0; i < L.apps; ++i) {
    const auto& m = p.models[i];
    for (std::size_t k = 0; k < L.dim; ++k) {
      nlp.lo[i * L.dim + k] = std::clamp(std::max(m.delay->lo()[k], m.throughput->lo()[k]), 0.0, 1.0);
      nlp.hi[i * L.dim + k] = std::clamp(std::min(m.delay->hi()[k], m.throughput->hi()[k]), 0.0, 1.0);
    }
  }
  for (std::size_t e = 0; e < E; ++e) {
    std::vector<double> a(nlp.n, 0.0);
    for (std::size_t i = 0; i < L.apps; ++i) a[i * L.dim + e] = 1.0;
    nlp.add_linear(a, 1.0, "capacity:" + topo.edges[e].id);
  }
  std::vector<std::vector<double>> rows;
  for (int c = 0; c < topo.cores; ++c) {
    std::vector<double> a(nlp.n, 0.0);
    bool any = false;
    for (std::size_t i = 0; i < L.apps; ++i) {
      const auto cores = p.config.cores_of(i);
      if (std::find(cores.begin(), cores.end(), c) != cores.end()) {
        a[i * L.dim + E] = 1.0;
        any = true;
      }
    }
    // Mirrored classes produce identical rows; one of each is enough.
    if (!any || std::find(rows.begin(), rows.end(), a) != rows.end()) continue;
    rows.push_back(a);
    nlp.add_linear(a, 1.0, "capacity:core" + std::to_string(c));
  }
  return nlp;
}

void add_qoe_constraints(NlpProblem& nlp, const SliceProblem& p, const Layout& L, std::size_t i) {
  const auto& app = p.config.apps[i];
  const auto delay = p.models[i].delay;
  const auto thr = p.models[i].throughput;
  const double tau = effective_tau(p, i);
  nlp.add_constraint(
      [=](const std::vector<double>& x, std::vector<double>* g) {
        const double d = lifted(*delay, L, i, x, g);
        if (g)
          for (double& v : *g) v /= tau;
        return d / tau - 1.0;
      },
      "delay:" + app.id);
  const double log_rho = std::log(app.rho);
  nlp.add_constraint(
      [=](const std::vector<double>& x, std::vector<double>* g) {
        const double t = lifted(*thr, L, i, x, g);
        if (g)
          for (double& v : *g) v = -v / t;
        return log_rho - std::log(t);
      },
      "throughput:" + app.id);
}

SmoothFn utility(const SliceProblem& p, const Layout& L) {
  std::vector<std::shared_ptr<const QoeModel>> thr;
  for (const auto& m : p.models) thr.push_back(m.throughput);
  return [thr, L](const std::vector<double>& x, std::vector<double>* g) {
    if (g) g->assign(L.n(), 0.0);
    double sum = 0;
    std::vector<double> gi;
    for (std::size_t i = 0; i < L.apps; ++i) {
      sum += lifted(*thr[i], L, i, x, g ? &gi : nullptr);
      if (g)
        for (std::size_t k = 0; k < L.n(); ++k) (*g)[k] += gi[k];
    }
    return sum;
  };
}

// Shrinks each capacity group onto its bound, so the emitted decision meets
// the capacity rows exactly rather than within feas_tol.
std::vector<double> repair(const NlpProblem& nlp, std::vector<double> x) {
  for (std::size_t k = 0; k < x.size(); ++k) x[k] = std::clamp(x[k], nlp.lo[k], nlp.hi[k]);
  for (const auto& row : nlp.linear) {
    for (int pass = 0; pass < 4; ++pass) {
      double sum = 0;
      for (std::size_t k = 0; k < x.size(); ++k) sum += row.a[k] * x[k];
      if (sum <= row.b) break;
      const double scale = row.b / sum * (1.0 - 4e-16 * double(pass + 1));
      for (std::size_t k = 0; k < x.size(); ++k)
        if (row.a[k] != 0) x[k] *= scale;
    }
  }
  return x;
}

std::vector<ClassPrediction> predictions(const SliceProblem& p, const Layout& L, const std::vector<double>& x,
                                         const std::vector<bool>& degradable) {
  std::vector<ClassPrediction> out;
  for (std::size_t i = 0; i < L.apps; ++i) {
    ClassPrediction c;
    c.app = p.config.apps[i].id;
    c.resources = L.slice(x, i);
    c.delay = p.models[i].delay->predict(c.resources);
    c.throughput = p.models[i].throughput->predict(c.resources);
    c.tau = p.config.apps[i].tau;
    c.rho = p.config.apps[i].rho;
    c.degradable = degradable.empty() ? false : degradable[i];
    out.push_back(std::move(c));
  }
  return out;
}

SliceDecision to_decision(const ScenarioConfig& config, const Layout& L, const std::vector<double>& x) {
  SliceDecision d = SliceDecision::zeros(config);
  for (std::size_t i = 0; i < L.apps; ++i) set_class_resources(config, d, i, L.slice(x, i));
  return d;
}

bool usable(const NlpSolution& s, const NlpOptions& o) {
  return s.status == NlpStatus::converged || (s.status == NlpStatus::max_iter && s.max_violation <= o.feas_tol);
}

std::string describe(const NlpSolution& s) {
  std::ostringstream os;
  os << to_string(s.status) << " after " << s.iterations << " iterations";
  if (!s.message.empty()) os << ": " << s.message;
  return os.str();
}

}  // namespace

void SliceProblem::validate() const {
  config.validate();
  if (models.size() != config.apps.size()) throw SlicerError("need one model pair per app");
  if (!(delay_margin >= 0 && delay_margin < 1)) throw SlicerError("delay_margin must lie in [0, 1)");
  const std::size_t dim = class_resource_dim(config);
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& m = models[i];
    const std::string& id = config.apps[i].id;
    if (!m.delay || !m.throughput) throw SlicerError("missing model for app " + id);
    if (!is_delay(m.delay->metric())) throw SlicerError("delay model of " + id + " predicts " + to_string(m.delay->metric()));
    if (is_delay(m.throughput->metric()))
      throw SlicerError("throughput model of " + id + " predicts " + to_string(m.throughput->metric()));
    if (m.delay->input_dim() != dim || m.throughput->input_dim() != dim)
      throw SlicerError("model input dimension of " + id + " does not match the decision layout (" +
                        std::to_string(dim) + ")");
  }
}

SliceResult solve_robust(const SliceProblem& problem) {
  problem.validate();
  const Layout L{problem.config.apps.size(), class_resource_dim(problem.config)};
  NlpProblem nlp = base_problem(problem, L);
  for (std::size_t i = 0; i < L.apps; ++i) add_qoe_constraints(nlp, problem, L, i);
  nlp.objective = utility(problem, L);

  SliceResult r;
  r.solution = solve_multistart(nlp, problem.nlp);
  r.feasible = usable(r.solution, problem.nlp);
  const auto x = repair(nlp, r.solution.x);
  r.decision = to_decision(problem.config, L, x);
  r.predicted = predictions(problem, L, x, {});
  r.objective = r.solution.objective;
  r.message = r.feasible ? describe(r.solution)
                         : describe(r.solution) + "; the constraints cannot all be met, try graceful degradation";
  return r;
}

DegradeSpec DegradeSpec::from_config(const ScenarioConfig& config, double weight) {
  DegradeSpec s;
  for (const auto& a : config.apps) s.degradable.push_back(a.priority == Priority::degradable);
  s.w_tau.assign(config.apps.size(), weight);
  s.w_rho.assign(config.apps.size(), weight);
  return s;
}

void DegradeSpec::validate(std::size_t apps) const {
  if (degradable.size() != apps || w_tau.size() != apps || w_rho.size() != apps)
    throw SlicerError("degrade spec must list every app");
  for (std::size_t i = 0; i < apps; ++i)
    if (degradable[i] && !(w_tau[i] > 0 && w_rho[i] > 0)) throw SlicerError("penalty weights must be > 0");
}

GracefulResult solve_graceful(const SliceProblem& problem, const DegradeSpec& spec) {
  problem.validate();
  const Layout L{problem.config.apps.size(), class_resource_dim(problem.config)};
  spec.validate(L.apps);

  NlpProblem nlp = base_problem(problem, L);
  for (std::size_t i = 0; i < L.apps; ++i)
    if (!spec.degradable[i]) add_qoe_constraints(nlp, problem, L, i);
  nlp.objective = utility(problem, L);

  GracefulResult r;
  const NlpSolution strict = solve_multistart(nlp, problem.nlp);
  if (!usable(strict, problem.nlp)) throw SlicerError("strict set itself infeasible (" + describe(strict) + ")");

  struct Term {
    std::size_t i;
    std::shared_ptr<const QoeModel> delay, thr;
    double tau, rho, w_tau, w_rho;
  };
  std::vector<Term> terms;
  for (std::size_t i = 0; i < L.apps; ++i)
    if (spec.degradable[i])
      terms.push_back({i, problem.models[i].delay, problem.models[i].throughput, effective_tau(problem, i),
                       problem.config.apps[i].rho, spec.w_tau[i], spec.w_rho[i]});

  auto penalty = [terms, L](const std::vector<double>& x, std::vector<double>* g) {
    if (g) g->assign(L.n(), 0.0);
    double sum = 0;
    std::vector<double> gd, gt;
    for (const auto& t : terms) {
      const double d = lifted(*t.delay, L, t.i, x, g ? &gd : nullptr);
      const double v = lifted(*t.thr, L, t.i, x, g ? &gt : nullptr);
      const double over = std::max(0.0, d / t.tau - 1.0);
      const double under = std::max(0.0, t.rho - v);
      sum += t.w_tau * over * over + t.w_rho * under * under;
      if (g)
        for (std::size_t k = 0; k < L.n(); ++k) (*g)[k] += 2 * t.w_tau * over * gd[k] / t.tau - 2 * t.w_rho * under * gt[k];
    }
    return sum;
  };
  const SmoothFn u = nlp.objective;
  nlp.objective = [u, penalty, n = L.n()](const std::vector<double>& x, std::vector<double>* g) {
    std::vector<double> gp;
    const double value = u(x, g) - penalty(x, g ? &gp : nullptr);
    if (g)
      for (std::size_t k = 0; k < n; ++k) (*g)[k] -= gp[k];
    return value;
  };

  auto starts = default_starts(nlp);
  starts.push_back(strict.x);
  r.solution = solve_multistart(nlp, problem.nlp, starts);
  r.feasible = usable(r.solution, problem.nlp);
  const auto x = repair(nlp, r.solution.x);
  r.decision = to_decision(problem.config, L, x);
  r.predicted = predictions(problem, L, x, spec.degradable);
  r.penalty = penalty(x, nullptr);
  r.utility = u(x, nullptr);
  r.objective = -r.solution.objective;
  for (const auto& c : r.predicted)
    if (c.degradable) r.relaxed.push_back({c.app, std::max(c.delay, c.tau), std::min(c.throughput, c.rho)});
  r.message = describe(r.solution);
  return r;
}

ValidationReport validate_decision(const SliceDecision& d, const Topology& topo) {
  ValidationReport rep;
  const std::size_t E = topo.edges.size();
  const auto cores = static_cast<std::size_t>(topo.cores);
  for (std::size_t i = 0; i < d.apps(); ++i) {
    if (d.flows[i].size() != E || i >= d.cpu.size() || d.cpu[i].size() != cores) {
      rep.violations.push_back({"class " + std::to_string(i) + ": decision shape does not match the topology",
                                std::numeric_limits<double>::infinity()});
      return rep;
    }
  }
  auto entry = [&](double v, const std::string& what) {
    if (std::isnan(v)) rep.violations.push_back({what + " is NaN", std::numeric_limits<double>::infinity()});
    else if (v < 0) rep.violations.push_back({what + " < 0", -v});
    else if (v > 1) rep.violations.push_back({what + " > 1", v - 1});
  };
  for (std::size_t i = 0; i < d.apps(); ++i) {
    for (std::size_t e = 0; e < E; ++e) entry(d.flows[i][e], "f[" + std::to_string(i) + "][" + topo.edges[e].id + "]");
    for (std::size_t c = 0; c < cores; ++c) entry(d.cpu[i][c], "phi[" + std::to_string(i) + "][core" + std::to_string(c) + "]");
  }
  bool any = false;
  for (std::size_t e = 0; e < E; ++e) {
    double sum = 0;
    for (std::size_t i = 0; i < d.apps(); ++i) sum += d.flows[i][e];
    if (sum > 1) rep.violations.push_back({"sum of flows on " + topo.edges[e].id + " > 1", sum - 1});
    any = any || sum > 0;
  }
  for (std::size_t c = 0; c < cores; ++c) {
    double sum = 0;
    for (std::size_t i = 0; i < d.apps(); ++i) sum += d.cpu[i][c];
    if (sum > 1) rep.violations.push_back({"sum of cpu on core" + std::to_string(c) + " > 1", sum - 1});
    any = any || sum > 0;
  }
  if (!any) rep.warnings.push_back("nothing is allocated");
  for (std::size_t i = 0; i < d.apps(); ++i) {
    double f = 0, p = 0;
    for (double v : d.flows[i]) f += v;
    for (double v : d.cpu[i]) p += v;
    if ((f > 0) != (p > 0)) rep.warnings.push_back("class " + std::to_string(i) + " has only one of link and cpu share");
  }
  return rep;
}

}  // namespace slicetwin
