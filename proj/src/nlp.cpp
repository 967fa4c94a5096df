#include "slicetwin/nlp.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>

#include "slicetwin/qp.hpp"

namespace slicetwin {

void NlpProblem::validate() const {
  if (n == 0) throw NlpError("problem has no variables");
  if (lo.size() != n || hi.size() != n) throw NlpError("box bounds do not match the variable count");
  for (std::size_t i = 0; i < n; ++i)
    if (!(lo[i] <= hi[i])) throw NlpError("empty box in variable " + std::to_string(i));
  if (!objective) throw NlpError("problem has no objective");
  for (const auto& g : constraints)
    if (!g) throw NlpError("empty constraint callback");
  for (const auto& l : linear)
    if (l.a.size() != n) throw NlpError("linear constraint '" + l.name + "' has wrong length");
}

void NlpProblem::add_constraint(SmoothFn g, std::string name) {
  if (name.empty()) name = "g" + std::to_string(constraints.size());
  constraints.push_back(std::move(g));
  constraint_names.push_back(std::move(name));
}

void NlpProblem::add_linear(std::vector<double> a, double b, std::string name) {
  if (name.empty()) name = "lin" + std::to_string(linear.size());
  linear.push_back({std::move(a), b, std::move(name)});
}

std::string to_string(NlpStatus s) {
  switch (s) {
    case NlpStatus::converged: return "converged";
    case NlpStatus::max_iter: return "max-iter";
    case NlpStatus::infeasible: return "infeasible";
  }
  return "?";
}

std::string trace_header() { return "start,iteration,objective,violation,step_norm,kkt"; }

namespace {

std::string point_text(const std::vector<double>& x) {
  std::ostringstream os;
  os.precision(17);
  os << '(';
  for (std::size_t i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
  os << ')';
  return os.str();
}

// Everything the SQP needs at one point, in minimisation form (phi = -f).
struct Point {
  std::vector<double> x;
  double f = 0;
  Eigen::VectorXd grad_phi;
  Eigen::VectorXd g;
  Eigen::MatrixXd J;  // rows = constraint gradients
};

Point evaluate(const NlpProblem& p, const std::vector<double>& x) {
  Point pt;
  pt.x = x;
  std::vector<double> grad(p.n, 0.0);
  pt.f = p.objective(x, &grad);
  auto bad = [&](const std::string& what) {
    return NlpError("non-finite " + what + " at x = " + point_text(x));
  };
  if (!std::isfinite(pt.f)) throw bad("objective");
  pt.grad_phi.resize(p.n);
  for (std::size_t i = 0; i < p.n; ++i) {
    if (!std::isfinite(grad[i])) throw bad("objective gradient");
    pt.grad_phi(i) = -grad[i];
  }
  const std::size_t m = p.constraints.size();
  pt.g.resize(m);
  pt.J.resize(m, p.n);
  for (std::size_t j = 0; j < m; ++j) {
    std::fill(grad.begin(), grad.end(), 0.0);
    pt.g(j) = p.constraints[j](x, &grad);
    if (!std::isfinite(pt.g(j))) throw bad("constraint '" + p.constraint_names[j] + "'");
    for (std::size_t i = 0; i < p.n; ++i) {
      if (!std::isfinite(grad[i])) throw bad("gradient of constraint '" + p.constraint_names[j] + "'");
      pt.J(j, i) = grad[i];
    }
  }
  return pt;
}

double linear_violation(const NlpProblem& p, const std::vector<double>& x) {
  double v = 0;
  for (const auto& l : p.linear) {
    double s = -l.b;
    for (std::size_t i = 0; i < p.n; ++i) s += l.a[i] * x[i];
    v = std::max(v, s);
  }
  return v;
}

double violation(const NlpProblem& p, const Point& pt) {
  double v = linear_violation(p, pt.x);
  for (Eigen::Index j = 0; j < pt.g.size(); ++j) v = std::max(v, pt.g(j));
  return std::max(v, 0.0);
}

double merit(const Point& pt, double nu) {
  double s = 0;
  for (Eigen::Index j = 0; j < pt.g.size(); ++j) s += std::max(0.0, pt.g(j));
  return -pt.f + nu * s;
}

// Euclidean projection onto {lo <= x <= hi, A x <= b}.
bool project(const NlpProblem& p, std::vector<double>& x) {
  const Eigen::Index n = Eigen::Index(p.n);
  const Eigen::Index L = Eigen::Index(p.linear.size());
  Eigen::MatrixXd G(L + 2 * n, n);
  Eigen::VectorXd h(L + 2 * n);
  G.setZero();
  for (Eigen::Index k = 0; k < L; ++k) {
    for (Eigen::Index i = 0; i < n; ++i) G(k, i) = p.linear[k].a[i];
    h(k) = p.linear[k].b;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    G(L + i, i) = 1;
    h(L + i) = p.hi[i];
    G(L + n + i, i) = -1;
    h(L + n + i) = -p.lo[i];
  }
  Eigen::VectorXd x0 = Eigen::Map<const Eigen::VectorXd>(x.data(), n);
  bool inside = true;
  for (Eigen::Index i = 0; i < n && inside; ++i) inside = x0(i) >= p.lo[i] && x0(i) <= p.hi[i];
  if (inside && linear_violation(p, x) <= 0) return true;
  const QpResult r = solve_qp(Eigen::MatrixXd::Identity(n, n), -x0, G, h);
  if (r.status != QpResult::solved) return false;
  for (Eigen::Index i = 0; i < n; ++i) x[i] = std::clamp(r.z(i), p.lo[i], p.hi[i]);
  return linear_violation(p, x) <= 1e-9;
}

struct Multipliers {
  Eigen::VectorXd lambda, lambda_lin, z_lo, z_hi;
};

Eigen::VectorXd lagrangian_gradient(const NlpProblem& p, const Point& pt, const Multipliers& mu) {
  Eigen::VectorXd r = pt.grad_phi;
  if (pt.g.size()) r += pt.J.transpose() * mu.lambda;
  for (std::size_t k = 0; k < p.linear.size(); ++k)
    for (std::size_t i = 0; i < p.n; ++i) r(i) += mu.lambda_lin(k) * p.linear[k].a[i];
  r += mu.z_hi - mu.z_lo;
  return r;
}

double kkt_of(const NlpProblem& p, const Point& pt, const Multipliers& mu) {
  double r = lagrangian_gradient(p, pt, mu).lpNorm<Eigen::Infinity>();
  for (Eigen::Index j = 0; j < pt.g.size(); ++j) r = std::max(r, std::abs(mu.lambda(j) * pt.g(j)));
  for (std::size_t k = 0; k < p.linear.size(); ++k) {
    double s = -p.linear[k].b;
    for (std::size_t i = 0; i < p.n; ++i) s += p.linear[k].a[i] * pt.x[i];
    r = std::max(r, std::abs(mu.lambda_lin(k) * s));
  }
  for (std::size_t i = 0; i < p.n; ++i) {
    r = std::max(r, std::abs(mu.z_lo(i) * (pt.x[i] - p.lo[i])));
    r = std::max(r, std::abs(mu.z_hi(i) * (p.hi[i] - pt.x[i])));
  }
  return r;
}

struct Step {
  Eigen::VectorXd d;
  double slack = 0;  // largest elastic slack
  Multipliers mu;
  bool ok = false;
};

// Elastic QP: nonlinear linearisations may be violated by t >= 0 at cost
// nu_e * sum(t); linear rows and the box stay hard.
Step qp_step(const NlpProblem& p, const Point& pt, const Eigen::MatrixXd& B, double nu_e) {
  const Eigen::Index n = Eigen::Index(p.n);
  const Eigen::Index m = pt.g.size();
  const Eigen::Index L = Eigen::Index(p.linear.size());
  const Eigen::Index nz = n + m;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(nz, nz);
  H.topLeftCorner(n, n) = B;
  for (Eigen::Index j = 0; j < m; ++j) H(n + j, n + j) = 1e-10;
  Eigen::VectorXd c(nz);
  c.head(n) = pt.grad_phi;
  c.tail(m).setConstant(nu_e);

  const Eigen::Index rows = 2 * m + L + 2 * n;
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(rows, nz);
  Eigen::VectorXd h(rows);
  Eigen::Index r = 0;
  for (Eigen::Index j = 0; j < m; ++j, ++r) {
    G.block(r, 0, 1, n) = pt.J.row(j);
    G(r, n + j) = -1;
    h(r) = -pt.g(j);
  }
  for (Eigen::Index j = 0; j < m; ++j, ++r) {
    G(r, n + j) = -1;
    h(r) = 0;
  }
  for (Eigen::Index k = 0; k < L; ++k, ++r) {
    double ax = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      G(r, i) = p.linear[k].a[i];
      ax += p.linear[k].a[i] * pt.x[i];
    }
    h(r) = p.linear[k].b - ax;
  }
  for (Eigen::Index i = 0; i < n; ++i, ++r) {
    G(r, i) = 1;
    h(r) = p.hi[i] - pt.x[i];
  }
  for (Eigen::Index i = 0; i < n; ++i, ++r) {
    G(r, i) = -1;
    h(r) = pt.x[i] - p.lo[i];
  }

  const QpResult q = solve_qp(H, c, G, h);
  Step s;
  s.ok = q.status == QpResult::solved;
  s.d = q.z.head(n);
  s.slack = m ? q.z.tail(m).maxCoeff() : 0.0;
  s.mu.lambda = q.y.segment(0, m);
  s.mu.lambda_lin = q.y.segment(2 * m, L);
  s.mu.z_hi = q.y.segment(2 * m + L, n);
  s.mu.z_lo = q.y.segment(2 * m + L + n, n);
  return s;
}

void trace_row(std::ostream* out, int start, int it, double f, double v, double step, double kkt) {
  if (!out) return;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%d,%.12g,%.6g,%.6g,%.6g\n", start, it, f, v, step, kkt);
  *out << buf;
}

NlpSolution solve_from(const NlpProblem& p, const std::vector<double>& x0, const NlpOptions& o, int start) {
  p.validate();
  if (x0.size() != p.n) throw NlpError("start point has wrong dimension");
  NlpSolution sol;
  sol.start = start;
  std::vector<double> x = x0;
  if (!project(p, x)) {
    sol.x = x0;
    sol.status = NlpStatus::infeasible;
    sol.max_violation = linear_violation(p, x0);
    sol.message = "box and linear constraints have no common point";
    return sol;
  }

  const Eigen::Index n = Eigen::Index(p.n);
  Point pt = evaluate(p, x);
  Eigen::MatrixXd B = Eigen::MatrixXd::Identity(n, n);
  bool scaled = false;
  double nu = 1.0;     // merit penalty
  double nu_e = 1e3;   // elastic QP penalty
  constexpr double nu_e_max = 1e9;
  int stalls = 0;
  Multipliers mu;

  for (int it = 0;; ++it) {
    Step st = qp_step(p, pt, B, nu_e);
    while (st.ok && st.slack > 1e-9 && nu_e < nu_e_max) {
      nu_e *= 10;
      st = qp_step(p, pt, B, nu_e);
    }
    if (!st.ok) {
      B = Eigen::MatrixXd::Identity(n, n);
      st = qp_step(p, pt, B, nu_e);
    }
    mu = st.mu;
    const double v = violation(p, pt);
    const double kkt = kkt_of(p, pt, mu);
    const double dn = st.d.lpNorm<Eigen::Infinity>();
    trace_row(o.trace, start, it, pt.f, v, dn, kkt);
    sol.iterations = it;

    if (v <= o.feas_tol && kkt <= o.kkt_tol) {
      sol.status = NlpStatus::converged;
      break;
    }
    if (st.slack > 1e-9 && dn <= 1e-12) {
      sol.status = NlpStatus::infeasible;
      sol.message = "linearised constraints inconsistent at a stationary point of the violation";
      break;
    }
    if (it >= o.max_iter) {
      sol.status = v > o.feas_tol && st.slack > 1e-9 ? NlpStatus::infeasible : NlpStatus::max_iter;
      sol.message = "iteration limit reached";
      break;
    }
    if (!st.ok) {
      sol.status = NlpStatus::max_iter;
      sol.message = "QP subproblem failed";
      break;
    }

    const double lam_max = mu.lambda.size() ? mu.lambda.maxCoeff() : 0.0;
    nu = std::max(nu, 2.0 * lam_max + 1e-3);
    double viol_sum = 0;
    for (Eigen::Index j = 0; j < pt.g.size(); ++j) viol_sum += std::max(0.0, pt.g(j));
    double slack_sum = 0;
    if (pt.g.size()) {
      // Linearised violation left after the step.
      const Eigen::VectorXd lin = pt.g + pt.J * st.d;
      for (Eigen::Index j = 0; j < lin.size(); ++j) slack_sum += std::max(0.0, lin(j));
    }
    double D = pt.grad_phi.dot(st.d) - nu * (viol_sum - slack_sum);
    D = std::min(D, -1e-16);

    const double m0 = merit(pt, nu);
    double alpha = 1.0;
    Point next;
    bool accepted = false;
    while (alpha >= 1e-10) {
      std::vector<double> xn(p.n);
      for (std::size_t i = 0; i < p.n; ++i) xn[i] = std::clamp(pt.x[i] + alpha * st.d(Eigen::Index(i)), p.lo[i], p.hi[i]);
      next = evaluate(p, xn);
      if (merit(next, nu) <= m0 + 1e-4 * alpha * D) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      if (++stalls >= 3) {
        sol.status = v > o.feas_tol ? NlpStatus::infeasible : NlpStatus::max_iter;
        sol.message = "line search failed";
        break;
      }
      B = Eigen::MatrixXd::Identity(n, n);
      continue;
    }
    stalls = 0;

    // Damped BFGS on the Lagrangian with the new multipliers.
    Eigen::VectorXd s(n);
    for (Eigen::Index i = 0; i < n; ++i) s(i) = next.x[i] - pt.x[i];
    Eigen::VectorXd y = next.grad_phi - pt.grad_phi;
    if (pt.g.size()) y += (next.J - pt.J).transpose() * mu.lambda;
    if (s.norm() > 1e-14) {
      if (!scaled) {
        const double sy = s.dot(y);
        if (sy > 1e-14) B *= y.squaredNorm() / sy;
        scaled = true;
      }
      const Eigen::VectorXd Bs = B * s;
      const double sBs = s.dot(Bs);
      const double sy = s.dot(y);
      Eigen::VectorXd rr = y;
      if (sy < 0.2 * sBs) {
        const double th = 0.8 * sBs / (sBs - sy);
        rr = th * y + (1 - th) * Bs;
      }
      const double sr = s.dot(rr);
      if (sBs > 1e-300 && sr > 1e-300) {
        B += rr * rr.transpose() / sr - Bs * Bs.transpose() / sBs;
        B = 0.5 * (B + B.transpose());
      }
    }
    pt = std::move(next);
  }

  sol.x = pt.x;
  sol.objective = pt.f;
  sol.max_violation = violation(p, pt);
  sol.lambda.assign(mu.lambda.data(), mu.lambda.data() + mu.lambda.size());
  sol.lambda_linear.assign(mu.lambda_lin.data(), mu.lambda_lin.data() + mu.lambda_lin.size());
  sol.bound_lo.assign(mu.z_lo.data(), mu.z_lo.data() + mu.z_lo.size());
  sol.bound_hi.assign(mu.z_hi.data(), mu.z_hi.data() + mu.z_hi.size());
  sol.kkt_residual = kkt_of(p, pt, mu);
  if (sol.status == NlpStatus::infeasible && sol.message.empty()) sol.message = "no feasible point found";
  if (sol.status == NlpStatus::infeasible) {
    char buf[96];
    std::snprintf(buf, sizeof buf, " (max violation %.3g)", sol.max_violation);
    sol.message += buf;
  }
  return sol;
}

}  // namespace

NlpSolution solve(const NlpProblem& problem, const std::vector<double>& x0, const NlpOptions& options) {
  return solve_from(problem, x0, options, 0);
}

std::vector<std::vector<double>> default_starts(const NlpProblem& p) {
  std::vector<std::vector<double>> s(5, std::vector<double>(p.n));
  for (std::size_t i = 0; i < p.n; ++i) {
    s[0][i] = 0.5 * (p.lo[i] + p.hi[i]);
    s[1][i] = p.lo[i];
    s[2][i] = p.hi[i];
    s[3][i] = i % 2 ? p.hi[i] : p.lo[i];
    s[4][i] = i % 2 ? p.lo[i] : p.hi[i];
  }
  return s;
}

NlpSolution solve_multistart(const NlpProblem& problem, const NlpOptions& options,
                             const std::vector<std::vector<double>>& starts_in) {
  problem.validate();
  const auto starts = starts_in.empty() ? default_starts(problem) : starts_in;
  std::optional<NlpSolution> best;
  auto better = [&](const NlpSolution& a, const NlpSolution& b) {
    const bool ca = a.status == NlpStatus::converged, cb = b.status == NlpStatus::converged;
    if (ca != cb) return ca;
    if (ca) return a.objective > b.objective + 1e-12;
    if (std::abs(a.max_violation - b.max_violation) > 1e-12) return a.max_violation < b.max_violation;
    return a.objective > b.objective + 1e-12;
  };
  for (std::size_t k = 0; k < starts.size(); ++k) {
    NlpSolution s = solve_from(problem, starts[k], options, int(k));
    if (!best || better(s, *best)) best = std::move(s);
  }
  return *best;
}

GridResult grid_oracle(const NlpProblem& p, int resolution) {
  p.validate();
  if (resolution < 2) throw NlpError("grid_oracle needs resolution >= 2");
  if (p.n > 4) throw NlpError("grid_oracle supports at most 4 dimensions");
  GridResult res;
  std::vector<int> idx(p.n, 0);
  std::vector<double> x(p.n);
  while (true) {
    for (std::size_t i = 0; i < p.n; ++i)
      x[i] = idx[i] == resolution - 1 ? p.hi[i] : p.lo[i] + (p.hi[i] - p.lo[i]) * double(idx[i]) / double(resolution - 1);
    ++res.evaluated;
    bool ok = linear_violation(p, x) <= 1e-12;
    for (std::size_t j = 0; ok && j < p.constraints.size(); ++j) ok = p.constraints[j](x, nullptr) <= 0;
    if (ok) {
      const double f = p.objective(x, nullptr);
      if (!res.feasible || f > res.objective) {
        res.feasible = true;
        res.objective = f;
        res.x = x;
      }
    }
    std::size_t i = 0;
    while (i < p.n && ++idx[i] == resolution) idx[i++] = 0;
    if (i == p.n) break;
  }
  if (!res.feasible) res.message = "no feasible grid point";
  return res;
}

double kkt_residual(const NlpProblem& p, const NlpSolution& s) {
  const Point pt = evaluate(p, s.x);
  Multipliers mu;
  auto vec = [](const std::vector<double>& v, std::size_t n) {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(Eigen::Index(n));
    for (std::size_t i = 0; i < std::min(n, v.size()); ++i) r(Eigen::Index(i)) = v[i];
    return r;
  };
  mu.lambda = vec(s.lambda, p.constraints.size());
  mu.lambda_lin = vec(s.lambda_linear, p.linear.size());
  mu.z_lo = vec(s.bound_lo, p.n);
  mu.z_hi = vec(s.bound_hi, p.n);
  return kkt_of(p, pt, mu);
}

}  // namespace slicetwin
