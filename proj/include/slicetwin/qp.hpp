// Dense convex QP:  min 1/2 z'Hz + c'z  s.t.  G z <= h.
// Primal-dual interior point with Mehrotra's predictor-corrector. Meant for
// the handful of variables an SQP step has, not for large problems.
#pragma once

#include <Eigen/Dense>

namespace slicetwin {

struct QpResult {
  enum Status { solved, infeasible, max_iter } status = max_iter;
  Eigen::VectorXd z;
  Eigen::VectorXd y;  // multipliers of G z <= h, >= 0
  int iterations = 0;
  double primal_residual = 0;
  double dual_residual = 0;
  double gap = 0;
};

struct QpOptions {
  int max_iter = 100;
  double tol = 1e-10;    // on max(relative residuals, mean complementarity)
  double accept = 1e-8;  // looser bound accepted when tol is not reached
};

// H must be symmetric positive semidefinite.
QpResult solve_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& c, const Eigen::MatrixXd& G,
                  const Eigen::VectorXd& h, const QpOptions& options = {});

}  // namespace slicetwin
