// Box-bounded smooth NLP solver (SQP) with multipliers, and a brute-force
// grid scan used to cross-check it.
#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace slicetwin {

class NlpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Returns f(x); fills *grad when grad is non-null.
using SmoothFn = std::function<double(const std::vector<double>& x, std::vector<double>* grad)>;

struct LinearConstraint {
  std::vector<double> a;  // a'x <= b
  double b = 0;
  std::string name;
};

struct NlpProblem {
  std::size_t n = 0;
  std::vector<double> lo, hi;
  SmoothFn objective;  // maximized
  std::vector<SmoothFn> constraints;  // g_j(x) <= 0
  std::vector<std::string> constraint_names;
  std::vector<LinearConstraint> linear;

  void validate() const;
  void add_constraint(SmoothFn g, std::string name = {});
  void add_linear(std::vector<double> a, double b, std::string name = {});
};

enum class NlpStatus { converged, max_iter, infeasible };
std::string to_string(NlpStatus s);

struct NlpOptions {
  double feas_tol = 1e-6;
  double kkt_tol = 1e-5;
  int max_iter = 200;
  std::ostream* trace = nullptr;  // CSV rows: start,iteration,objective,violation,step_norm,kkt
};

struct NlpSolution {
  std::vector<double> x;
  double objective = 0;
  std::vector<double> lambda;         // per nonlinear constraint, >= 0
  std::vector<double> lambda_linear;  // per linear constraint, >= 0
  std::vector<double> bound_lo, bound_hi;  // box multipliers, >= 0
  NlpStatus status = NlpStatus::max_iter;
  int iterations = 0;
  double kkt_residual = 0;   // max of stationarity and complementarity
  double max_violation = 0;  // over nonlinear and linear constraints
  int start = 0;             // which multi-start produced this
  std::string message;
};

NlpSolution solve(const NlpProblem& problem, const std::vector<double>& x0, const NlpOptions& options = {});

// Centre, all-lower, all-upper and the two alternating corners.
std::vector<std::vector<double>> default_starts(const NlpProblem& problem);

// Best converged run by objective (ties: lowest start index); when none
// converged, the run with the smallest violation.
NlpSolution solve_multistart(const NlpProblem& problem, const NlpOptions& options = {},
                             const std::vector<std::vector<double>>& starts = {});

struct GridResult {
  bool feasible = false;
  std::vector<double> x;
  double objective = 0;
  std::size_t evaluated = 0;
  std::string message;
};

// Exhaustive scan with `resolution` equally spaced points per dimension,
// endpoints included. Dimension must be <= 4 and resolution >= 2.
GridResult grid_oracle(const NlpProblem& problem, int resolution);

// Stationarity and complementarity residual of (x, multipliers) for the
// minimisation form of the problem.
double kkt_residual(const NlpProblem& problem, const NlpSolution& s);

std::string trace_header();

}  // namespace slicetwin
