#include "slicetwin/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace slicetwin {

namespace {

double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double a = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv(i) < 0) a = std::min(a, -v(i) / dv(i));
  return a;
}

}  // namespace

QpResult solve_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& c, const Eigen::MatrixXd& G,
                  const Eigen::VectorXd& h, const QpOptions& options) {
  const Eigen::Index n = c.size();
  const Eigen::Index m = h.size();
  QpResult res;
  res.z = Eigen::VectorXd::Zero(n);
  res.y = Eigen::VectorXd::Zero(m);
  if (m == 0) {
    // Unconstrained: H z = -c.
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H + 1e-12 * Eigen::MatrixXd::Identity(n, n));
    res.z = ldlt.solve(-c);
    res.status = QpResult::solved;
    return res;
  }

  // Start from the solution of [H G'; G -I][z; y] = [-c; h], then shift s
  // and y into the positive orthant.
  Eigen::MatrixXd K0 = H + G.transpose() * G;
  K0.diagonal().array() += 1e-10;
  Eigen::VectorXd z = K0.ldlt().solve(-c + G.transpose() * h);
  Eigen::VectorXd s = h - G * z;
  Eigen::VectorXd y = -s;
  auto shift = [](Eigen::VectorXd& v) {
    const double lo = v.minCoeff();
    if (lo < 1e-8 * (1.0 + v.cwiseAbs().maxCoeff())) v.array() += 1.0 - lo;
  };
  shift(s);
  shift(y);
  const double scale_c = 1.0 + c.lpNorm<Eigen::Infinity>();
  const double scale_h = 1.0 + h.lpNorm<Eigen::Infinity>();
  // Past the attainable accuracy the normal equations amplify rounding, so
  // the best iterate seen is kept.
  double best_err = std::numeric_limits<double>::infinity();
  QpResult best;

  for (int it = 0; it < options.max_iter; ++it) {
    const Eigen::VectorXd rd = H * z + c + G.transpose() * y;
    const Eigen::VectorXd rp = G * z + s - h;
    const double mu = s.dot(y) / double(m);
    res.iterations = it;
    res.primal_residual = rp.lpNorm<Eigen::Infinity>();
    res.dual_residual = rd.lpNorm<Eigen::Infinity>();
    res.gap = mu;
    const double err = std::max({res.primal_residual / scale_h, res.dual_residual / scale_c, mu});
    if (err < best_err) {
      best_err = err;
      best = res;
      best.z = z;
      best.y = y;
    }
    if (err <= options.tol) {
      res.status = QpResult::solved;
      break;
    }
    if (y.lpNorm<Eigen::Infinity>() > 1e14 && res.primal_residual > 1e-6 * scale_h) {
      res.status = QpResult::infeasible;
      break;
    }

    // Unreduced Newton system in (z, y, s). Solving it directly avoids the
    // y/s weights, which span many decades near the end.
    const Eigen::Index N = n + 2 * m;
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(N, N);
    M.topLeftCorner(n, n) = H;
    M.block(0, n, n, m) = G.transpose();
    M.block(n, 0, m, n) = G;
    M.block(n, n + m, m, m).diagonal().setOnes();
    M.block(n + m, n, m, m).diagonal() = s;
    M.block(n + m, n + m, m, m).diagonal() = y;
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(M);

    auto direction = [&](const Eigen::VectorXd& rc, Eigen::VectorXd& dz, Eigen::VectorXd& ds, Eigen::VectorXd& dy) {
      // rc is the complementarity residual s.*y - target.
      Eigen::VectorXd rhs(N);
      rhs << -rd, -rp, -rc;
      Eigen::VectorXd d = lu.solve(rhs);
      d += lu.solve(rhs - M * d);
      dz = d.head(n);
      dy = d.segment(n, m);
      ds = d.tail(m);
    };

    Eigen::VectorXd dz, ds, dy;
    direction(s.cwiseProduct(y), dz, ds, dy);
    const double a_aff = std::min(max_step(s, ds), max_step(y, dy));
    const double mu_aff = (s + a_aff * ds).dot(y + a_aff * dy) / double(m);
    const double sigma = std::pow(mu_aff / mu, 3);

    const Eigen::VectorXd rc = s.cwiseProduct(y) + ds.cwiseProduct(dy) - Eigen::VectorXd::Constant(m, sigma * mu);
    direction(rc, dz, ds, dy);
    const double a = std::min(1.0, 0.995 * std::min(max_step(s, ds), max_step(y, dy)));
    z += a * dz;
    s += a * ds;
    y += a * dy;
    s = s.cwiseMax(1e-300);
    y = y.cwiseMax(1e-300);
  }
  if (res.status == QpResult::solved) {
    res.z = z;
    res.y = y;
    return res;
  }
  if (res.status == QpResult::infeasible) return res;
  best.status = best_err <= options.accept ? QpResult::solved
                : best.primal_residual > 1e-6 * scale_h ? QpResult::infeasible
                                                        : QpResult::max_iter;
  return best;
}

}  // namespace slicetwin
