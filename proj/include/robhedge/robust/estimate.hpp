#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "robhedge/core/error.hpp"
#include "robhedge/robust/influence.hpp"
#include "robhedge/sde/model.hpp"

namespace robhedge {

/// L(alpha) = sum_j psi(s_j, Y; alpha) (dY_j - a(s_j, Y; alpha) ds_j) on the data grid.
inline ParamVector estimating_equation(const ParamDriftModel& model, const InfluenceSpec& psi,
                                       const SamplePath& data, const ParamVector& alpha) {
  if (data.dim() != 1) throw std::invalid_argument("estimating_equation: scalar data path required");
  const auto s = data.grid().nodes();
  const auto& y = data.raw();
  ParamVector acc = ParamVector::Zero(alpha.size());
  for (std::size_t j = 0; j + 1 < data.size(); ++j) {
    const PathPrefix x = PathPrefix::at_node(data, j);
    acc += psi(x, alpha) * (y[j + 1] - y[j] - model.drift(x, alpha) * (s[j + 1] - s[j]));
  }
  return acc;
}

struct NewtonOptions {
  int max_iter = 100;
  double tol = 1e-13;        ///< |L| relative to the data scale
  double step_tol = 1e-15;   ///< relative step size at which iteration stops
};

struct EstimateResult {
  ParamVector alpha_hat;
  ParamMatrix V;
  double gamma_star = 0.0;
  int iterations = 0;
  double residual = 0.0;
  std::vector<double> residual_trace;
};

/// Gross-error sensitivity sup_j |gamma0^{-1} psi(s_j, Y0)| over the limit-path nodes.
inline double gross_error_sensitivity(const LimitPath& lp, const InfluenceSpec& psi, const ParamVector& alpha) {
  const LimitMatrices lm = limit_matrices(lp, psi, alpha);
  const ParamMatrix gi = checked_inverse(lm.gamma0, "gamma0");
  double sup = 0.0;
  for (std::size_t j = 0; j < lp.size(); ++j) sup = std::max(sup, (gi * psi(lp.prefix(j), alpha)).norm());
  return sup;
}

inline double gross_error_sensitivity(const ParamDriftModel& model, const InfluenceSpec& psi,
                                      const ParamVector& alpha, const TimeGrid& grid) {
  return gross_error_sensitivity(make_limit_path(model, alpha, grid), psi, alpha);
}

/// Damped Newton on L(alpha) = 0 with a central finite-difference Jacobian
/// (step 1e-6 (1 + |alpha_i|)) and backtracking on |L|.
inline EstimateResult m_estimate(const ParamDriftModel& model, const InfluenceSpec& psi, const SamplePath& data,
                                 const ParamVector& alpha_init, const NewtonOptions& opt = {}) {
  const Eigen::Index m = static_cast<Eigen::Index>(model.dim);
  if (alpha_init.size() != m) throw std::invalid_argument("m_estimate: alpha_init has wrong dimension");
  double scale = 0.0;
  for (std::size_t j = 0; j + 1 < data.size(); ++j) scale += std::abs(data(j + 1) - data(j));
  scale = std::max(scale, 1e-300);

  EstimateResult res;
  ParamVector a = alpha_init;
  ParamVector l = estimating_equation(model, psi, data, a);
  double ln = l.norm();
  res.residual_trace.push_back(ln);
  auto trace_text = [&] {
    std::ostringstream os;
    for (double v : res.residual_trace) os << ' ' << v;
    return os.str();
  };
  int it = 0;
  for (; it < opt.max_iter && ln > opt.tol * scale; ++it) {
    ParamMatrix jac(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double h = 1e-6 * (1.0 + std::abs(a(i)));
      ParamVector ap = a, am = a;
      ap(i) += h;
      am(i) -= h;
      jac.col(i) = (estimating_equation(model, psi, data, ap) - estimating_equation(model, psi, data, am)) / (2.0 * h);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu{Eigen::MatrixXd(jac)};
    if (!lu.isInvertible())
      throw NumericError("m_estimate: singular Jacobian at iteration " + std::to_string(it) + "; residuals:" +
                         trace_text());
    const ParamVector step = -ParamVector(lu.solve(Eigen::VectorXd(l)));
    double lambda = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < 40; ++bt, lambda *= 0.5) {
      const ParamVector trial = a + lambda * step;
      const ParamVector lt = estimating_equation(model, psi, data, trial);
      if (lt.allFinite() && lt.norm() < ln) {
        a = trial;
        l = lt;
        ln = lt.norm();
        accepted = true;
        break;
      }
    }
    res.residual_trace.push_back(ln);
    if (!accepted) {
      // no descent: accept only if already at rounding level
      if (step.norm() <= 1e3 * opt.step_tol * (1.0 + a.norm()) || ln <= 1e3 * opt.tol * scale) break;
      throw NumericError("m_estimate: Newton failed to reduce the residual; residuals:" + trace_text());
    }
    if (!a.allFinite()) throw NumericError("m_estimate: Newton diverged; residuals:" + trace_text());
    if ((lambda * step).norm() <= opt.step_tol * (1.0 + a.norm())) break;
  }
  if (ln > 1e-6 * scale)
    throw NumericError("m_estimate: no root after " + std::to_string(it) + " iterations; residuals:" + trace_text());
  res.alpha_hat = a;
  res.iterations = it;
  res.residual = ln;
  const LimitPath lp = make_limit_path(model, a, data.grid());
  res.V = asymptotic_cov(limit_matrices(lp, psi, a));
  res.gamma_star = gross_error_sensitivity(lp, psi, a);
  return res;
}

/// Coarse starting point: the node of a uniform `points`^m grid on the box
/// [lo, hi] with the smallest |L|.
inline ParamVector grid_search_start(const ParamDriftModel& model, const InfluenceSpec& psi, const SamplePath& data,
                                     const ParamVector& lo, const ParamVector& hi, int points = 11) {
  const Eigen::Index m = lo.size();
  if (hi.size() != m || points < 2) throw std::invalid_argument("grid_search_start: bad box");
  std::vector<int> idx(static_cast<std::size_t>(m), 0);
  ParamVector best = lo;
  double best_n = std::numeric_limits<double>::infinity();
  while (true) {
    ParamVector a(m);
    for (Eigen::Index i = 0; i < m; ++i)
      a(i) = lo(i) + (hi(i) - lo(i)) * idx[static_cast<std::size_t>(i)] / (points - 1.0);
    const double n = estimating_equation(model, psi, data, a).norm();
    if (n < best_n) {
      best_n = n;
      best = a;
    }
    Eigen::Index k = 0;
    while (k < m && ++idx[static_cast<std::size_t>(k)] == points) idx[static_cast<std::size_t>(k++)] = 0;
    if (k == m) break;
  }
  return best;
}

struct BiasResult {
  ParamVector b;        ///< int psi h ds along Y0
  ParamVector b_tilde;  ///< gamma0^{-1} b
};

inline BiasResult bias_functional(const LimitPath& lp, const InfluenceSpec& psi, const ContaminationSpec& h,
                                  const ParamVector& alpha) {
  const auto s = lp.times();
  const LimitMatrices lm = limit_matrices(lp, psi, alpha);
  BiasResult out;
  out.b = ParamVector::Zero(alpha.size());
  ParamVector prev;
  for (std::size_t j = 0; j < lp.size(); ++j) {
    const PathPrefix x = lp.prefix(j);
    const ParamVector cur = psi(x, alpha) * h(x, alpha);
    if (j > 0) out.b += 0.5 * (s[j] - s[j - 1]) * (prev + cur);
    prev = cur;
  }
  out.b_tilde = checked_inverse(lm.gamma0, "gamma0") * out.b;
  return out;
}

inline BiasResult bias_functional(const ParamDriftModel& model, const InfluenceSpec& psi,
                                  const ContaminationSpec& h, const ParamVector& alpha, const TimeGrid& grid) {
  return bias_functional(make_limit_path(model, alpha, grid), psi, h, alpha);
}

/// D = |b~|^2 + tr V.
inline double risk_functional(const LimitPath& lp, const InfluenceSpec& psi, const ContaminationSpec& h,
                              const ParamVector& alpha) {
  const BiasResult b = bias_functional(lp, psi, h, alpha);
  return b.b_tilde.squaredNorm() + asymptotic_cov(limit_matrices(lp, psi, alpha)).trace();
}

inline double risk_functional(const ParamDriftModel& model, const InfluenceSpec& psi, const ContaminationSpec& h,
                              const ParamVector& alpha, const TimeGrid& grid) {
  return risk_functional(make_limit_path(model, alpha, grid), psi, h, alpha);
}

/// Ellipsoid {alpha : (alpha - center)' shape^{-1} (alpha - center) <= radius^2}
/// with shape = eps^2 V.
struct ConfidenceRegion {
  ParamVector center;
  ParamMatrix shape;
  double radius = 0.0;
  double level = 0.0;  ///< significance gamma: the region has coverage 1 - gamma

  bool contains(const ParamVector& alpha) const {
    const ParamVector d = alpha - center;
    const ParamVector w = ParamVector(Eigen::LLT<Eigen::MatrixXd>(Eigen::MatrixXd(shape)).solve(Eigen::VectorXd(d)));
    return d.dot(w) <= radius * radius;
  }
  /// Half-width of the projection on coordinate i.
  double half_width(Eigen::Index i) const { return radius * std::sqrt(shape(i, i)); }
};

/// Upper-gamma quantile of the chi-squared law with `dof` degrees of freedom.
inline double chi2_upper_quantile(double gamma, int dof) {
  boost::math::chi_squared dist(dof);
  return boost::math::quantile(boost::math::complement(dist, gamma));
}

inline ConfidenceRegion confidence_region(const EstimateResult& est, double eps, double gamma_level) {
  if (!(gamma_level > 0.0 && gamma_level < 1.0))
    throw std::invalid_argument("confidence_region: level must lie in (0, 1)");
  if (!(eps > 0.0)) throw std::invalid_argument("confidence_region: eps must be positive");
  Eigen::LLT<Eigen::MatrixXd> llt{Eigen::MatrixXd(est.V)};
  if (llt.info() != Eigen::Success) throw NumericError("confidence_region: V is not positive-definite");
  ConfidenceRegion cr;
  cr.center = est.alpha_hat;
  cr.shape = eps * eps * est.V;
  cr.radius = std::sqrt(chi2_upper_quantile(gamma_level, static_cast<int>(est.alpha_hat.size())));
  cr.level = gamma_level;
  return cr;
}

}  // namespace robhedge
