#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "robhedge/core/error.hpp"
#include "robhedge/hedge/problem.hpp"

namespace robhedge {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Zero-rate lognormal call price with total variance v = int sigma^2 over the remaining life.
inline double lognormal_call(double x, double strike, double v) {
  if (v <= 0.0) return std::max(x - strike, 0.0);
  const double sd = std::sqrt(v);
  const double d1 = (std::log(x / strike) + 0.5 * v) / sd;
  return x * normal_cdf(d1) - strike * normal_cdf(d1 - sd);
}

inline double lognormal_call_delta(double x, double strike, double v) {
  if (v <= 0.0) return x > strike ? 1.0 : 0.0;
  const double sd = std::sqrt(v);
  return normal_cdf((std::log(x / strike) + 0.5 * v) / sd);
}

/// Representation integrands phi^H with H = EH + int phi' dw for claims on a
/// zero-drift market with volatility depending on time only.
namespace integrands {

/// H = X_T: phi = sigma0' X.
inline PathNodeFn terminal_asset(std::size_t a = 0) {
  return [a](const MarketPathView& v, std::size_t j) {
    const AssetMatrix s = v.sigma(j);
    return AssetVector(s.transpose().col(static_cast<Eigen::Index>(a)) * v.x(j)(static_cast<Eigen::Index>(a)));
  };
}

/// Call on a single asset with deterministic variance rate `var_rate(t)`;
/// the remaining variance is integrated on the path grid.
inline PathNodeFn call(double strike, std::function<double(double)> var_rate) {
  return [strike, var_rate = std::move(var_rate)](const MarketPathView& v, std::size_t j) {
    double rem = 0.0;
    for (std::size_t i = j; i < v.steps(); ++i) rem += var_rate(v.time(i)) * v.dt(i);
    const double x = v.x(j)(0);
    AssetVector phi(1);
    phi(0) = v.sigma(j)(0, 0) * x * lognormal_call_delta(x, strike, rem);
    return phi;
  };
}

}  // namespace integrands

namespace detail {

inline void require_zero_drift_scalar(const HedgeProblem& pb, const char* who) {
  if (pb.assets() != 1) throw ConfigError(std::string(who) + ": only the single-asset case is supported");
  if (!pb.market.k_is_zero())
    throw ConfigError(std::string(who) + ": requires zero market price of risk; use the general strategy");
}

}  // namespace detail

/// Band-extreme volatility maximizing the risk of a fixed strategy:
/// sigma0 - delta r where phi / theta >= sigma0, sigma0 + delta r where
/// phi / theta < sigma0, and 0 where theta = 0.
inline VolFn worst_case_sigma(const HedgeProblem& pb, PathNodeFn phi) {
  detail::require_zero_drift_scalar(pb, "worst_case_sigma");
  const double hw = pb.band_half_width();
  return [phi = std::move(phi), hw](const MarketPathView& v, std::size_t j, const AssetVector& theta) {
    AssetMatrix s = AssetMatrix::Zero(1, 1);
    const double th = theta(0);
    if (th == 0.0) return s;
    const double s0 = v.sigma(j)(0, 0);
    s(0, 0) = phi(v, j)(0) / th >= s0 ? s0 - hw : s0 + hw;
    return s;
  };
}

struct ZeroDriftStrategy {
  StrategyRule rule;
  /// In the zero-drift case the same strategy is optimal for the worst-case
  /// problem and for its first-order (Gateaux-constrained) approximation.
  bool solves_worst_case_and_linearized = true;
};

/// theta = phi / sigma0, with 0 / 0 read as 0.
inline ZeroDriftStrategy strategy_zero_drift(const HedgeProblem& pb, PathNodeFn phi) {
  detail::require_zero_drift_scalar(pb, "strategy_zero_drift");
  return {StrategyRule::feedback(
              [phi = std::move(phi)](const MarketPathView& v, std::size_t j) {
                AssetVector th = AssetVector::Zero(1);
                const double s0 = v.sigma(j)(0, 0);
                if (s0 != 0.0) th(0) = phi(v, j)(0) / s0;
                return th;
              },
              "zero-drift optimal"),
          true};
}

struct GateauxEstimate {
  double value = 0.0;
  double std_err = 0.0;
  std::string form;  ///< "analytic", "direct" or "bracket"
};

/// Zero-drift closed form 2 E int (sigma0' theta - phi)' h' theta dt.
inline GateauxEstimate gateaux_DJ_analytic(const HedgeProblem& pb, const MarketEnsemble& e, const StrategyRule& theta,
                                           const VolContamination& h, const PathNodeFn& phi, unsigned threads = 1) {
  if (!pb.market.k_is_zero()) throw ConfigError("gateaux_DJ_analytic: requires zero market price of risk");
  std::vector<double> per(e.size());
  parallel_for(e.size(), threads, [&](std::size_t p) {
    const MarketPathView v = e.view(p);
    const auto th = theta.evaluate(v);
    double s = 0.0;
    for (std::size_t j = 0; j < v.steps(); ++j) {
      const AssetVector miss = v.sigma(j).transpose() * th[j] - phi(v, j);
      s += miss.dot(h(v.time(j), v.y(j)).transpose() * th[j]) * v.dt(j);
    }
    per[p] = 2.0 * s;
  });
  const MCEstimate m = mean_and_se(per);
  return {m.value, m.std_err, "analytic"};
}

/// Derivative of the sample risk along sigma0 + delta h at delta = 0 for the
/// fixed claim and positions: -2 E (H - x - G) int theta' h dM0. Valid for
/// any k; it is the exact first-order coefficient of the finite difference.
inline GateauxEstimate gateaux_DJ_direct(const HedgeProblem& pb, const MarketEnsemble& e, const StrategyRule& theta,
                                         const VolContamination& h, unsigned threads = 1) {
  std::vector<double> per(e.size());
  parallel_for(e.size(), threads, [&](std::size_t p) {
    const MarketPathView v = e.view(p);
    const auto th = theta.evaluate(v);
    double g = 0.0, gh = 0.0;
    for (std::size_t j = 0; j < v.steps(); ++j) {
      const AssetVector dm = v.dm0(j);
      g += th[j].dot(v.sigma(j) * dm);
      gh += th[j].dot(h(v.time(j), v.y(j)) * dm);
    }
    per[p] = -2.0 * (detail::payoff_checked(pb.payoff, v, p) - pb.capital - g) * gh;
  });
  const MCEstimate m = mean_and_se(per);
  return {m.value, m.std_err, "direct"};
}

}  // namespace robhedge
