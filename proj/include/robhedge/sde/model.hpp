#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "robhedge/core/grid.hpp"
#include "robhedge/core/linalg.hpp"

namespace robhedge {

using DriftFn = std::function<double(const PathPrefix&, const ParamVector&)>;
using DriftGradFn = std::function<ParamVector(const PathPrefix&, const ParamVector&)>;

/// Small-noise diffusion dY = a(s, Y; alpha) ds + eps dw, Y_0 = 0, on [0, t_end].
struct ParamDriftModel {
  std::size_t dim = 1;  ///< parameter dimension m
  DriftFn drift;
  DriftGradFn drift_grad;  ///< gradient of the drift in alpha (m-vector)
  double epsilon = 0.0;
  double t_end = 1.0;

  /// Checks the structural invariants and probes drift/gradient at the zero
  /// path for `alpha`.
  void validate(const ParamVector& alpha) const {
    if (dim < 1 || dim > static_cast<std::size_t>(kMaxParams))
      throw std::invalid_argument("ParamDriftModel: parameter dimension must be in [1, " +
                                  std::to_string(kMaxParams) + "]");
    if (!drift || !drift_grad) throw std::invalid_argument("ParamDriftModel: drift and gradient required");
    if (!(epsilon > 0.0)) throw std::invalid_argument("ParamDriftModel: epsilon must be positive");
    if (!(t_end > 0.0)) throw std::invalid_argument("ParamDriftModel: horizon must be positive");
    if (static_cast<std::size_t>(alpha.size()) != dim)
      throw std::invalid_argument("ParamDriftModel: alpha has wrong dimension");
    const PathPrefix probe({}, {}, 0.0, 0.0);
    if (!std::isfinite(drift(probe, alpha))) throw std::invalid_argument("ParamDriftModel: drift not finite");
    const ParamVector g = drift_grad(probe, alpha);
    if (static_cast<std::size_t>(g.size()) != dim || !g.allFinite())
      throw std::invalid_argument("ParamDriftModel: gradient not finite or wrong size");
  }
};

/// Bounded nonanticipative perturbation h(s, x; alpha) of the drift.
struct ContaminationSpec {
  DriftFn h;
  double bound = 0.0;  ///< r: |h| <= r on every evaluation

  static ContaminationSpec zero() {
    return {[](const PathPrefix&, const ParamVector&) { return 0.0; }, 0.0};
  }
  static ContaminationSpec constant(double eta) {
    return {[eta](const PathPrefix&, const ParamVector&) { return eta; }, std::abs(eta)};
  }

  /// Evaluates h and enforces the bound.
  double operator()(const PathPrefix& x, const ParamVector& alpha) const {
    const double v = h(x, alpha);
    if (!std::isfinite(v) || std::abs(v) > bound * (1.0 + 1e-12) + 1e-300)
      throw std::invalid_argument("ContaminationSpec: |h| = " + std::to_string(std::abs(v)) +
                                  " exceeds the declared bound " + std::to_string(bound) +
                                  " at s = " + std::to_string(x.time()));
    return v;
  }
};

namespace models {

/// a(s, y; alpha) = alpha_1.
inline ParamDriftModel constant_drift(double epsilon, double t_end) {
  ParamDriftModel m;
  m.dim = 1;
  m.drift = [](const PathPrefix&, const ParamVector& a) { return a(0); };
  m.drift_grad = [](const PathPrefix&, const ParamVector&) { return param_vector({1.0}); };
  m.epsilon = epsilon;
  m.t_end = t_end;
  return m;
}

/// a(s, y; alpha) = alpha_1 - alpha_2 y.
inline ParamDriftModel ou_drift(double epsilon, double t_end) {
  ParamDriftModel m;
  m.dim = 2;
  m.drift = [](const PathPrefix& x, const ParamVector& a) { return a(0) - a(1) * x.value(); };
  m.drift_grad = [](const PathPrefix& x, const ParamVector&) { return param_vector({1.0, -x.value()}); };
  m.epsilon = epsilon;
  m.t_end = t_end;
  return m;
}

/// Drift linear in the parameter: a = sum_i alpha_i phi_i(s, y).
inline ParamDriftModel linear_in_parameter(std::vector<std::function<double(double, double)>> basis,
                                           double epsilon, double t_end) {
  ParamDriftModel m;
  m.dim = basis.size();
  auto shared = std::make_shared<const std::vector<std::function<double(double, double)>>>(std::move(basis));
  m.drift = [shared](const PathPrefix& x, const ParamVector& a) {
    double v = 0.0;
    for (std::size_t i = 0; i < shared->size(); ++i) v += a(static_cast<Eigen::Index>(i)) * (*shared)[i](x.time(), x.value());
    return v;
  };
  m.drift_grad = [shared](const PathPrefix& x, const ParamVector&) {
    ParamVector g(static_cast<Eigen::Index>(shared->size()));
    for (std::size_t i = 0; i < shared->size(); ++i) g(static_cast<Eigen::Index>(i)) = (*shared)[i](x.time(), x.value());
    return g;
  };
  m.epsilon = epsilon;
  m.t_end = t_end;
  return m;
}

}  // namespace models
}  // namespace robhedge
