#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "robhedge/core/error.hpp"
#include "robhedge/core/grid.hpp"
#include "robhedge/hedge/problem.hpp"

namespace robhedge {

/// Density of the variance-optimal martingale measure when it is the
/// normalized minimal martingale density: z_t = E_t(-k . M0) / c with
/// c = E E_T(-k . M0), and integrand zeta = -k z.
struct DensityModel {
  double normalizer = 1.0;
  std::string method;  ///< "zero", "analytic" or "conditional-mc"
  bool trivial = false;

  /// z~_j along a path, j = 0..n.
  std::vector<double> ztilde(const MarketPathView& v) const {
    std::vector<double> z(v.steps() + 1, 1.0 / normalizer);
    if (trivial) return z;
    double log_e = 0.0;
    for (std::size_t j = 0; j < v.steps(); ++j) {
      const AssetVector k = v.k(j);
      log_e += -k.dot(v.dm0(j)) - 0.5 * k.squaredNorm() * v.dt(j);
      z[j + 1] = std::exp(log_e) / normalizer;
    }
    return z;
  }
};

struct DensityData {
  DensityModel model;
  std::vector<std::vector<double>> ztilde;  ///< per path, n+1 nodes
  std::vector<std::vector<double>> zeta;    ///< per path, n x d (row-major)
  double terminal_mean = 1.0;               ///< sample mean of z~_T
  double terminal_se = 0.0;                 ///< standard error of that mean, normalizer uncertainty included

  SamplePath ztilde_path(const TimeGrid& g, std::size_t p) const { return SamplePath::scalar(g, ztilde[p]); }
  SamplePath zeta_path(const TimeGrid& g, std::size_t p, std::size_t d) const {
    // zeta is predictable; the terminal node repeats the last step
    std::vector<double> v(zeta[p]);
    v.insert(v.end(), zeta[p].end() - static_cast<std::ptrdiff_t>(d), zeta[p].end());
    return SamplePath(g, d, std::move(v));
  }
};

/// Builds the normalized density from an independent estimate of the
/// normalizer: exp(-int |k|^2) when k is deterministic, and the ensemble mean
/// of exp(-K_T) when k = k(Y) with Y independent of the price noise. Other
/// configurations are refused because the product form is not known to be
/// variance-optimal there.
inline DensityData zeta_and_ztilde(const HedgeProblem& pb, const MarketEnsemble& e, unsigned threads = 1) {
  const SVMarketSpec& m = pb.market;
  DensityData out;
  const std::size_t n = e.grid.steps(), d = e.assets;
  if (m.k_is_zero()) {
    out.model = {1.0, "zero", true};
  } else if (m.k_deterministic) {
    const double kt = e.view(0).mvt(n);
    out.model = {std::exp(-kt), "analytic", false};
  } else if (m.rho == 0.0) {
    double s = 0.0;
    for (std::size_t p = 0; p < e.size(); ++p) s += std::exp(-e.view(p).mvt(n));
    out.model = {s / static_cast<double>(e.size()), "conditional-mc", false};
  } else {
    throw ConfigError(
        "zeta_and_ztilde: k depends on the volatility factor and the factor noise is correlated with the price "
        "noise (rho != 0); exp(-<k.M>_T) then need not split into a constant plus a martingale orthogonal to M, so "
        "the normalized minimal density is not known to be variance-optimal");
  }
  out.ztilde.resize(e.size());
  out.zeta.resize(e.size());
  parallel_for(e.size(), threads, [&](std::size_t p) {
    const MarketPathView v = e.view(p);
    out.ztilde[p] = out.model.ztilde(v);
    out.zeta[p].assign(n * d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const AssetVector k = v.k(j);
      for (std::size_t a = 0; a < d; ++a) out.zeta[p][j * d + a] = -k(static_cast<Eigen::Index>(a)) * out.ztilde[p][j];
    }
  });

  // mean of z_T and its error; for the conditional estimate the ratio
  // mean(E_T) / mean(exp(-K_T)) is linearized around both means
  const auto np = static_cast<double>(e.size());
  std::vector<double> resid(e.size());
  double mean = 0.0;
  for (std::size_t p = 0; p < e.size(); ++p) mean += out.ztilde[p][n];
  mean /= np;
  for (std::size_t p = 0; p < e.size(); ++p) {
    resid[p] = out.ztilde[p][n];
    if (out.model.method == "conditional-mc") resid[p] -= mean * std::exp(-e.view(p).mvt(n)) / out.model.normalizer;
  }
  out.terminal_mean = mean;
  out.terminal_se = mean_and_se(resid).std_err;
  return out;
}

}  // namespace robhedge
