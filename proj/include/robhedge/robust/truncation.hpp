#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "robhedge/core/error.hpp"
#include "robhedge/robust/influence.hpp"

namespace robhedge {

struct AStarOptions {
  double step = 0.5;      ///< fixed-point damping
  int max_iter = 500;     ///< fixed-point iterations
  double tol = 1e-10;     ///< Frobenius residual
  int newton_iter = 60;   ///< polishing iterations when the fixed point stalls
};

struct AStarResult {
  ParamMatrix A;
  double residual = 0.0;
  int iterations = 0;        ///< fixed-point iterations used
  int newton_iterations = 0; ///< Newton polishing iterations used
  double feasibility_threshold = 0.0;  ///< lower bound c must exceed
};

namespace detail {

/// int h_c(A g) g' ds along the limit path.
inline ParamMatrix clipped_moment(const LimitPath& lp, const ParamMatrix& a, double c) {
  const auto s = lp.times();
  const Eigen::Index m = a.rows();
  ParamMatrix acc = ParamMatrix::Zero(m, m);
  ParamMatrix prev;
  for (std::size_t j = 0; j < lp.size(); ++j) {
    const ParamVector z = a * lp.grad[j];
    const ParamMatrix cur = huber_clip(z, c) * lp.grad[j].transpose();
    if (j > 0) acc += 0.5 * (s[j] - s[j - 1]) * (prev + cur);
    prev = cur;
  }
  return acc;
}

/// Jacobian of vec(clipped_moment) with respect to vec(A) (column-major).
inline Eigen::MatrixXd clipped_moment_jacobian(const LimitPath& lp, const ParamMatrix& a, double c) {
  const auto s = lp.times();
  const Eigen::Index m = a.rows();
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(m * m, m * m);
  for (std::size_t j = 0; j < lp.size(); ++j) {
    const double w = 0.5 * ((j > 0 ? s[j] - s[j - 1] : 0.0) + (j + 1 < lp.size() ? s[j + 1] - s[j] : 0.0));
    const ParamVector& g = lp.grad[j];
    const ParamVector z = a * g;
    const double nz = z.norm();
    // D h_c(z)[u] = P u with P = I inside the ball, (c/|z|)(I - z z'/|z|^2) outside
    ParamMatrix p = ParamMatrix::Identity(m, m);
    if (nz > c) p = (c / nz) * (ParamMatrix::Identity(m, m) - z * z.transpose() / (nz * nz));
    // d vec(P dA g g') / d vec(dA): entry (row = (i, l), col = (k, q)) = P_ik g_q g_l
    for (Eigen::Index q = 0; q < m; ++q)
      for (Eigen::Index k = 0; k < m; ++k)
        for (Eigen::Index l = 0; l < m; ++l)
          for (Eigen::Index i = 0; i < m; ++i) jac(l * m + i, q * m + k) += w * p(i, k) * g(q) * g(l);
  }
  return jac;
}

/// Lower bound 1 / min_e int |g' e| ds over sampled unit directions. Since the
/// sampled minimum is >= the true minimum, c below this bound is certainly
/// infeasible: e' Id e = 1 <= c int |g' e| ds must hold for every unit e.
inline double feasibility_threshold(const LimitPath& lp) {
  const Eigen::Index m = lp.grad.front().size();
  const auto s = lp.times();
  auto l1 = [&](const ParamVector& e) {
    double acc = 0.0;
    for (std::size_t j = 0; j + 1 < lp.size(); ++j)
      acc += 0.5 * (s[j + 1] - s[j]) * (std::abs(lp.grad[j].dot(e)) + std::abs(lp.grad[j + 1].dot(e)));
    return acc;
  };
  double best = 0.0;
  bool first = true;
  auto consider = [&](ParamVector e) {
    e.normalize();
    const double v = l1(e);
    if (first || v < best) best = v;
    first = false;
  };
  if (m == 1) {
    consider(ParamVector::Ones(1));
  } else if (m == 2) {
    for (int i = 0; i < 720; ++i) {
      const double th = M_PI * i / 720.0;
      consider(param_vector({std::cos(th), std::sin(th)}));
    }
  } else {
    for (Eigen::Index i = 0; i < m; ++i) consider(ParamVector::Unit(m, i));
    std::mt19937_64 eng(0x5EEDULL);
    std::normal_distribution<double> z;
    for (int i = 0; i < 4000; ++i) {
      ParamVector e(m);
      for (Eigen::Index k = 0; k < m; ++k) e(k) = z(eng);
      consider(e);
    }
  }
  return best > 0.0 ? 1.0 / best : std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Solves int h_c(A grad a) grad a' ds = Id along Y0(alpha). Damped fixed point
/// from A = I0^{-1}; if it stalls before the tolerance, Newton steps with the
/// analytic Jacobian finish the solve.
inline AStarResult solve_A_star(const LimitPath& lp, double c, const AStarOptions& opt = {}) {
  if (!(c > 0.0)) throw std::invalid_argument("solve_A_star: c must be positive");
  const Eigen::Index m = lp.grad.front().size();
  const ParamMatrix id = ParamMatrix::Identity(m, m);
  const ParamMatrix i0 = trapezoid_outer(lp.times(), lp.grad, lp.grad);
  const ParamMatrix i0inv = checked_inverse(i0, "Fisher information I0");

  AStarResult res;
  res.feasibility_threshold = detail::feasibility_threshold(lp);
  if (c < res.feasibility_threshold) {
    const ParamMatrix r = id - detail::clipped_moment(lp, i0inv, c);
    throw InfeasibleTruncation("solve_A_star: truncation level c = " + std::to_string(c) +
                                   " admits no solution; need c >= " + std::to_string(res.feasibility_threshold),
                               r.norm());
  }

  ParamMatrix a = i0inv;
  ParamMatrix r = id - detail::clipped_moment(lp, a, c);
  double rn = r.norm();
  ParamMatrix best_a = a;
  double best_rn = rn;
  int it = 0;
  for (; it < opt.max_iter && rn >= opt.tol; ++it) {
    a += opt.step * r * i0inv;
    if (!a.allFinite()) break;
    r = id - detail::clipped_moment(lp, a, c);
    rn = r.norm();
    if (rn < best_rn) {
      best_rn = rn;
      best_a = a;
    }
  }
  res.iterations = it;
  a = best_a;
  rn = best_rn;

  int nit = 0;
  for (; nit < opt.newton_iter && rn >= opt.tol; ++nit) {
    const Eigen::MatrixXd jac = detail::clipped_moment_jacobian(lp, a, c);
    const ParamMatrix rr = id - detail::clipped_moment(lp, a, c);
    Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(Eigen::MatrixXd(rr).data(), m * m);
    const Eigen::VectorXd step = jac.colPivHouseholderQr().solve(rhs);
    if (!step.allFinite()) break;
    double lambda = 1.0;
    bool improved = false;
    for (int bt = 0; bt < 30; ++bt, lambda *= 0.5) {
      ParamMatrix trial = a;
      for (Eigen::Index q = 0; q < m; ++q)
        for (Eigen::Index p = 0; p < m; ++p) trial(p, q) += lambda * step(q * m + p);
      const double tn = (id - detail::clipped_moment(lp, trial, c)).norm();
      if (tn < rn) {
        a = trial;
        rn = tn;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  res.newton_iterations = nit;
  res.A = a;
  res.residual = rn;
  if (!(rn < opt.tol))
    throw InfeasibleTruncation("solve_A_star: no standardizing matrix found for c = " + std::to_string(c) +
                                   " (residual plateau " + std::to_string(rn) + ")",
                               rn);
  if (matrix_rank(a) < m) throw NumericError("solve_A_star: solution is singular");
  return res;
}

inline AStarResult solve_A_star(const ParamDriftModel& model, const ParamVector& alpha, double c,
                                const TimeGrid& grid, const AStarOptions& opt = {}) {
  return solve_A_star(make_limit_path(model, alpha, grid), c, opt);
}

/// psi*(x; alpha') = h_c(A grad a(x; alpha')) with A solved at `alpha` and then
/// frozen. Throws NumericError if the standardization or the clip bound fails
/// on the limit path.
inline InfluenceSpec optimal_influence(const ParamDriftModel& model, const ParamVector& alpha, double c,
                                       const TimeGrid& grid, const AStarOptions& opt = {}) {
  const LimitPath lp = make_limit_path(model, alpha, grid);
  const AStarResult as = solve_A_star(lp, c, opt);
  InfluenceSpec spec = InfluenceSpec::clipped_score(model, as.A, c);
  spec.label = "optimal";
  const LimitMatrices lm = limit_matrices(lp, spec, alpha);
  const double std_err = (lm.gamma0 - ParamMatrix::Identity(lm.gamma0.rows(), lm.gamma0.cols())).norm();
  if (!(std_err < 1e-9))
    throw NumericError("optimal_influence: gamma0 deviates from Id by " + std::to_string(std_err));
  for (std::size_t j = 0; j < lp.size(); ++j)
    if (spec(lp.prefix(j), alpha).norm() > c * (1.0 + 1e-14))
      throw NumericError("optimal_influence: clip bound violated at node " + std::to_string(j));
  return spec;
}

struct CStarResult {
  double c = 0.0;               ///< truncation of the raw score [grad a]_{-c}^{c}
  double c_standardized = 0.0;  ///< c / gamma0: the level for the standardized form h_c(A grad a)
  double gamma0 = 0.0;          ///< int [grad a]_{-c}^{c} grad a ds
  double residual = 0.0;
  int iterations = 0;
};

/// Root of r^2 c^2 = int [g]_{-c}^{c} g ds - int ([g]_{-c}^{c})^2 ds along Y0
/// (scalar parameter) by bisection on (0, sup |g|).
inline CStarResult solve_c_star(const LimitPath& lp, double r) {
  if (lp.grad.front().size() != 1) throw std::invalid_argument("solve_c_star: scalar parameter required");
  if (!(r > 0.0)) throw std::invalid_argument("solve_c_star: r must be positive");
  const auto s = lp.times();
  std::vector<double> g(lp.size());
  double gmax = 0.0;
  for (std::size_t j = 0; j < g.size(); ++j) {
    g[j] = lp.grad[j](0);
    gmax = std::max(gmax, std::abs(g[j]));
  }
  auto moments = [&](double c) {
    double lin = 0.0, sq = 0.0;
    for (std::size_t j = 0; j + 1 < g.size(); ++j) {
      const double a0 = std::clamp(g[j], -c, c), a1 = std::clamp(g[j + 1], -c, c);
      const double h = 0.5 * (s[j + 1] - s[j]);
      lin += h * (a0 * g[j] + a1 * g[j + 1]);
      sq += h * (a0 * a0 + a1 * a1);
    }
    return std::pair{lin, sq};
  };
  auto fn = [&](double c) {
    const auto [lin, sq] = moments(c);
    return lin - sq - r * r * c * c;
  };
  if (!(gmax > 0.0)) throw NumericError("solve_c_star: drift gradient vanishes on the limit path");
  double lo = gmax * 1e-12, hi = gmax;
  double flo = fn(lo), fhi = fn(hi);
  if (!(flo > 0.0 && fhi < 0.0)) {
    std::ostringstream dump;
    dump << "solve_c_star: no sign change on (0, sup|grad a|]; curve:";
    for (int i = 1; i <= 10; ++i) dump << " (" << gmax * i / 10.0 << ", " << fn(gmax * i / 10.0) << ")";
    throw NumericError(dump.str());
  }
  CStarResult out;
  for (; out.iterations < 200 && hi - lo > 1e-16 * hi; ++out.iterations) {
    const double mid = 0.5 * (lo + hi);
    const double fm = fn(mid);
    if (fm > 0.0) lo = mid;
    else hi = mid;
    if (fm == 0.0) lo = hi = mid;
  }
  out.c = 0.5 * (lo + hi);
  out.residual = std::abs(fn(out.c));
  if (!(out.residual < 1e-10)) throw NumericError("solve_c_star: residual " + std::to_string(out.residual));
  out.gamma0 = moments(out.c).first;
  out.c_standardized = out.c / out.gamma0;
  return out;
}

inline CStarResult solve_c_star(const ParamDriftModel& model, double alpha, double r, const TimeGrid& grid) {
  if (model.dim != 1) throw std::invalid_argument("solve_c_star: model must have a scalar parameter");
  return solve_c_star(make_limit_path(model, param_vector({alpha}), grid), r);
}

}  // namespace robhedge
