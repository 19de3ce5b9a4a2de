#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "robhedge/core/error.hpp"
#include "robhedge/core/grid.hpp"
#include "robhedge/core/linalg.hpp"
#include "robhedge/sde/model.hpp"
#include "robhedge/sde/simulate.hpp"

namespace robhedge {

using InfluenceFn = std::function<ParamVector(const PathPrefix&, const ParamVector&)>;

/// Huber function h_c(z) = z min(1, c/|z|) with the Euclidean norm.
template <class Vec>
Vec huber_clip(const Vec& z, double c) {
  if (!(c > 0.0)) throw std::invalid_argument("huber_clip: c must be positive");
  const double n = z.norm();
  if (n <= c) return z;
  return z * (c / n);
}

/// Influence function psi(s, x; alpha) of an M-estimating equation.
struct InfluenceSpec {
  InfluenceFn psi;
  std::optional<double> clip_c;     ///< c when psi is a clipped score
  std::optional<ParamMatrix> A;     ///< standardizing matrix of a clipped score
  std::string label = "custom";

  ParamVector operator()(const PathPrefix& x, const ParamVector& alpha) const { return psi(x, alpha); }

  /// psi = gradient of the drift (maximum-likelihood score).
  static InfluenceSpec score(const ParamDriftModel& model) {
    return {model.drift_grad, std::nullopt, std::nullopt, "score"};
  }
  /// psi = v for every input.
  static InfluenceSpec constant(const ParamVector& v) {
    return {[v](const PathPrefix&, const ParamVector&) { return v; }, std::nullopt, std::nullopt, "constant"};
  }
  /// psi = h_c(A grad a(x; alpha)).
  static InfluenceSpec clipped_score(const ParamDriftModel& model, const ParamMatrix& a, double c) {
    if (!(c > 0.0)) throw std::invalid_argument("clipped_score: c must be positive");
    auto grad = model.drift_grad;
    return {[grad, a, c](const PathPrefix& x, const ParamVector& alpha) {
              return huber_clip(ParamVector(a * grad(x, alpha)), c);
            },
            c, a, "clipped-score"};
  }
};

/// Quantities sampled at the nodes of the limit path Y0(alpha).
struct LimitPath {
  SamplePath path;
  std::vector<ParamVector> grad;  ///< drift gradient at each node

  std::span<const double> times() const { return path.grid().nodes(); }
  std::size_t size() const { return path.size(); }
  PathPrefix prefix(std::size_t j) const { return PathPrefix::at_node(path, j); }
};

inline LimitPath make_limit_path(const ParamDriftModel& model, const ParamVector& alpha, const TimeGrid& grid) {
  LimitPath lp{solve_limit_ode(model, alpha, grid), {}};
  lp.grad.reserve(lp.size());
  for (std::size_t j = 0; j < lp.size(); ++j) {
    lp.grad.push_back(model.drift_grad(lp.prefix(j), alpha));
    if (!lp.grad.back().allFinite())
      throw NumericError("drift gradient not finite on the limit path at node " + std::to_string(j));
  }
  return lp;
}

/// Trapezoid integral of u_j v_j' over the nodes.
inline ParamMatrix trapezoid_outer(std::span<const double> s, const std::vector<ParamVector>& u,
                                   const std::vector<ParamVector>& v) {
  const Eigen::Index m = u.front().size(), k = v.front().size();
  ParamMatrix acc = ParamMatrix::Zero(m, k);
  for (std::size_t j = 0; j + 1 < s.size(); ++j)
    acc += 0.5 * (s[j + 1] - s[j]) * (u[j] * v[j].transpose() + u[j + 1] * v[j + 1].transpose());
  return acc;
}

inline std::vector<ParamVector> sample_influence(const InfluenceSpec& psi, const LimitPath& lp,
                                                 const ParamVector& alpha) {
  std::vector<ParamVector> out;
  out.reserve(lp.size());
  for (std::size_t j = 0; j < lp.size(); ++j) {
    out.push_back(psi(lp.prefix(j), alpha));
    if (!out.back().allFinite())
      throw NumericError("influence function not finite on the limit path at node " + std::to_string(j));
    if (out.back().size() != alpha.size())
      throw std::invalid_argument("influence function has wrong dimension");
  }
  return out;
}

struct LimitMatrices {
  ParamMatrix Gamma0;  ///< int psi psi'
  ParamMatrix gamma0;  ///< int psi grad a'
  ParamMatrix I0;      ///< int grad a grad a' (Fisher information)
  int rank_gamma0 = 0;
  int rank_I0 = 0;
  bool standardizable() const { return rank_gamma0 == gamma0.rows(); }
};

inline int matrix_rank(const ParamMatrix& m) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu{Eigen::MatrixXd(m)};
  return static_cast<int>(lu.rank());
}

inline LimitMatrices limit_matrices(const LimitPath& lp, const InfluenceSpec& psi, const ParamVector& alpha) {
  const auto psis = sample_influence(psi, lp, alpha);
  LimitMatrices lm;
  lm.Gamma0 = trapezoid_outer(lp.times(), psis, psis);
  lm.gamma0 = trapezoid_outer(lp.times(), psis, lp.grad);
  lm.I0 = trapezoid_outer(lp.times(), lp.grad, lp.grad);
  lm.rank_gamma0 = matrix_rank(lm.gamma0);
  lm.rank_I0 = matrix_rank(lm.I0);
  return lm;
}

/// Trapezoid integrals along Y0(alpha) on `grid`; rank of gamma0 is reported,
/// not enforced.
inline LimitMatrices limit_matrices(const ParamDriftModel& model, const InfluenceSpec& psi, const ParamVector& alpha,
                                    const TimeGrid& grid) {
  return limit_matrices(make_limit_path(model, alpha, grid), psi, alpha);
}

inline ParamMatrix checked_inverse(const ParamMatrix& m, const char* what) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu{Eigen::MatrixXd(m)};
  if (!lu.isInvertible())
    throw NumericError(std::string(what) + " is singular (rank " + std::to_string(lu.rank()) + " of " +
                       std::to_string(m.rows()) + ")");
  return ParamMatrix(lu.inverse());
}

/// V = gamma0^{-1} Gamma0 gamma0^{-T}, symmetrized.
inline ParamMatrix asymptotic_cov(const LimitMatrices& lm) {
  const ParamMatrix gi = checked_inverse(lm.gamma0, "gamma0");
  const ParamMatrix v = gi * lm.Gamma0 * gi.transpose();
  return ParamMatrix(0.5 * (v + v.transpose()));
}

}  // namespace robhedge
