#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "robhedge/core/error.hpp"
#include "robhedge/core/grid.hpp"
#include "robhedge/core/linalg.hpp"
#include "robhedge/core/seed.hpp"

namespace robhedge {

/// One-to-one positive map between the volatility factor and the variance,
/// sigma^2 = f(y).
struct VolMap {
  std::function<double(double)> f;
  std::function<double(double)> f_inverse;
  std::string name;

  /// f(y) = v0 * exp(y).
  static VolMap exponential(double v0 = 1.0) {
    if (!(v0 > 0.0)) throw std::invalid_argument("VolMap: v0 must be positive");
    return {[v0](double y) { return v0 * std::exp(y); },
            [v0](double v) { return std::log(v / v0); },
            "exp"};
  }
  /// f(y) = v0 (constant variance); f is not invertible, so f_inverse returns 0.
  static VolMap constant(double v0) {
    return {[v0](double) { return v0; }, [](double) { return 0.0; }, "constant"};
  }
  double sigma(double y) const { return std::sqrt(f(y)); }
};

using AssetMatrixFn = std::function<AssetMatrix(double t, double y)>;
using AssetVectorFn = std::function<AssetVector(double t, double y)>;
using ScalarFieldFn = std::function<double(double t, double y)>;

/// Stochastic-volatility market
///   dX = diag(X) dR,  dR = sigma dM0,  dM0 = k dt + dw^R,
///   dY = a*(t, Y) dt + eps dw^sigma,  sigma^2 = f(Y) by default.
/// The bracket of the driving martingale is the identity times dt.
struct SVMarketSpec {
  std::size_t assets = 1;
  AssetVector x0 = AssetVector::Constant(1, 1.0);
  AssetMatrixFn sigma0;   ///< reference volatility; defaults to sqrt(f(y)) I when empty
  AssetVectorFn k;        ///< market price of risk; zero when empty
  ScalarFieldFn vol_drift;  ///< a*(t, y); zero when empty
  double vol_noise = 0.0;   ///< eps
  double y0 = 0.0;
  double rho = 0.0;            ///< correlation of w^sigma with w^R_1
  bool k_deterministic = false;  ///< k does not depend on y
  VolMap f = VolMap::exponential(1.0);

  AssetMatrix sigma_at(double t, double y) const {
    if (sigma0) return sigma0(t, y);
    return AssetMatrix::Identity(static_cast<Eigen::Index>(assets), static_cast<Eigen::Index>(assets)) *
           f.sigma(y);
  }
  AssetVector k_at(double t, double y) const {
    if (k) return k(t, y);
    return AssetVector::Zero(static_cast<Eigen::Index>(assets));
  }
  double drift_at(double t, double y) const { return vol_drift ? vol_drift(t, y) : 0.0; }
  bool k_is_zero() const { return !k; }

  void validate() const {
    if (assets < 1 || assets > static_cast<std::size_t>(kMaxAssets))
      throw std::invalid_argument("SVMarketSpec: asset count must be in [1, " + std::to_string(kMaxAssets) + "]");
    if (static_cast<std::size_t>(x0.size()) != assets) throw std::invalid_argument("SVMarketSpec: x0 has wrong size");
    if (!((x0.array() > 0.0).all())) throw std::invalid_argument("SVMarketSpec: x0 must be positive");
    if (!(vol_noise >= 0.0)) throw std::invalid_argument("SVMarketSpec: vol noise must be >= 0");
    if (!(std::abs(rho) < 1.0)) throw std::invalid_argument("SVMarketSpec: |rho| must be < 1");
    if (!f.f) throw std::invalid_argument("SVMarketSpec: f required");
    // f positive and strictly monotone on a probe range around y0
    if (f.name == "constant") return;
    int direction = 0;
    double prev = f.f(y0 - 2.0);
    for (int i = 1; i <= 40; ++i) {
      const double v = f.f(y0 - 2.0 + 0.1 * i);
      if (!(v > 0.0)) throw std::invalid_argument("SVMarketSpec: f must be positive");
      const int dir = v > prev ? 1 : (v < prev ? -1 : 0);
      if (dir == 0 || (direction != 0 && dir != direction))
        throw std::invalid_argument("SVMarketSpec: f must be strictly monotone");
      direction = dir;
      prev = v;
    }
  }
};

/// Additive volatility perturbation h(t, y) with entries bounded by r.
struct VolContamination {
  AssetMatrixFn h;
  double bound = 0.0;

  AssetMatrix operator()(double t, double y) const {
    AssetMatrix v = h(t, y);
    if (!v.allFinite() || v.cwiseAbs().maxCoeff() > bound * (1.0 + 1e-12))
      throw std::invalid_argument("VolContamination: entries exceed the bound r at t = " + std::to_string(t));
    return v;
  }
};

/// Smallest singular value of sigma0 must exceed delta * r * d, so that every
/// sigma0 + delta h with |h_ij| <= r stays uniformly elliptic.
inline void check_ellipticity(const AssetMatrix& sigma0, double delta_r, double t) {
  const Eigen::Index d = sigma0.rows();
  double smin;
  if (d == 1) {
    smin = std::abs(sigma0(0, 0));
  } else {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd{Eigen::MatrixXd(sigma0)};
    smin = svd.singularValues().minCoeff();
  }
  const double margin = delta_r * static_cast<double>(d);
  if (!(smin > margin))
    throw ConfigError("ellipticity violated at t = " + std::to_string(t) + ": smallest singular value " +
                      std::to_string(smin) + " <= delta*r*d = " + std::to_string(margin));
}

/// Node-major buffers for one simulated market path with n steps and d assets.
struct MarketPathBuffers {
  std::vector<double> x;       ///< (n+1) x d prices
  std::vector<double> r;       ///< (n+1) x d yields
  std::vector<double> m0;      ///< (n+1) x d martingale-plus-drift M0
  std::vector<double> y;       ///< n+1 volatility factor
  std::vector<double> w_sigma; ///< n+1 volatility Brownian motion
  std::vector<double> dw;      ///< n x d price Brownian increments
  std::vector<double> sigma;   ///< n x d x d volatility actually used on each step (row-major)
  std::vector<double> k;       ///< n x d market price of risk on each step
  std::vector<double> mvt;     ///< n+1 mean-variance tradeoff K_t = int |k|^2 dt
};

/// Coupled Euler simulation. Prices use the exact log-step for frozen
/// coefficients, X_{j+1} = X_j exp(dR - |sigma row|^2 dt / 2), so they stay
/// positive. The used volatility is sigma0 + delta h when `h` is given.
inline MarketPathBuffers simulate_market_buffers(const SVMarketSpec& spec, const TimeGrid& grid, const SeedSpec& seed,
                                                 const VolContamination* h = nullptr, double delta = 0.0) {
  const std::size_t n = grid.steps();
  const std::size_t d = spec.assets;
  const auto di = static_cast<Eigen::Index>(d);
  const double delta_r = h ? delta * h->bound : 0.0;
  MarketPathBuffers b;
  b.x.assign((n + 1) * d, 0.0);
  b.r.assign((n + 1) * d, 0.0);
  b.m0.assign((n + 1) * d, 0.0);
  b.y.assign(n + 1, spec.y0);
  b.w_sigma.assign(n + 1, 0.0);
  b.dw.assign(n * d, 0.0);
  b.sigma.assign(n * d * d, 0.0);
  b.k.assign(n * d, 0.0);
  b.mvt.assign(n + 1, 0.0);

  // component 0: independent part of w^sigma; components 1..d: w^R
  std::vector<double> db(n);
  fill_brownian_increments(seed, 0, [&](std::size_t j) { return grid.dt(j); }, db);
  for (std::size_t a = 0; a < d; ++a) {
    std::vector<double> tmp(n);
    fill_brownian_increments(seed, a + 1, [&](std::size_t j) { return grid.dt(j); }, tmp);
    for (std::size_t j = 0; j < n; ++j) b.dw[j * d + a] = tmp[j];
  }
  const double rho_c = std::sqrt(1.0 - spec.rho * spec.rho);
  for (std::size_t a = 0; a < d; ++a) b.x[a] = spec.x0(static_cast<Eigen::Index>(a));

  for (std::size_t j = 0; j < n; ++j) {
    const double t = grid[j];
    const double dt = grid.dt(j);
    const double yj = b.y[j];
    AssetMatrix sig = spec.sigma_at(t, yj);
    if (sig.rows() != di || sig.cols() != di) throw std::invalid_argument("sigma0 has wrong shape");
    if (h) {
      check_ellipticity(sig, delta_r, t);
      sig += delta * (*h)(t, yj);
    }
    const AssetVector kv = spec.k_at(t, yj);
    double k2 = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
      const double ka = kv(static_cast<Eigen::Index>(a));
      b.k[j * d + a] = ka;
      k2 += ka * ka;
    }
    b.mvt[j + 1] = b.mvt[j] + k2 * dt;
    for (std::size_t a = 0; a < d; ++a) {
      const double dm0 = b.k[j * d + a] * dt + b.dw[j * d + a];
      b.m0[(j + 1) * d + a] = b.m0[j * d + a] + dm0;
    }
    for (std::size_t a = 0; a < d; ++a) {
      double dr = 0.0, var = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double s_ac = sig(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c));
        b.sigma[(j * d + a) * d + c] = s_ac;
        dr += s_ac * (b.m0[(j + 1) * d + c] - b.m0[j * d + c]);
        var += s_ac * s_ac;
      }
      b.r[(j + 1) * d + a] = b.r[j * d + a] + dr;
      b.x[(j + 1) * d + a] = b.x[j * d + a] * std::exp(dr - 0.5 * var * dt);
      if (!std::isfinite(b.x[(j + 1) * d + a]))
        throw DivergenceError("price overflow at t = " + std::to_string(grid[j + 1]), grid[j + 1]);
    }
    const double dws = spec.rho * b.dw[j * d] + rho_c * db[j];
    b.w_sigma[j + 1] = b.w_sigma[j] + dws;
    b.y[j + 1] = yj + spec.drift_at(t, yj) * dt + spec.vol_noise * dws;
    if (!std::isfinite(b.y[j + 1]))
      throw DivergenceError("volatility factor overflow at t = " + std::to_string(grid[j + 1]), grid[j + 1]);
  }
  return b;
}

struct SVMarketPaths {
  SamplePath X, R, Y, M0, w_sigma;
  SamplePath mvt;  ///< K_t = int_0^t |k_s|^2 ds
};

/// Single-path simulation of the market; `h` and `delta` model the
/// misspecified volatility sigma = sigma0 + delta h.
inline SVMarketPaths simulate_sv_market(const SVMarketSpec& spec, const TimeGrid& grid, const SeedSpec& seed,
                                        const std::optional<VolContamination>& h = std::nullopt, double delta = 0.0) {
  spec.validate();
  if (!(delta >= 0.0)) throw std::invalid_argument("simulate_sv_market: delta must be >= 0");
  auto b = simulate_market_buffers(spec, grid, seed, h ? &*h : nullptr, delta);
  const std::size_t d = spec.assets;
  return {SamplePath(grid, d, std::move(b.x)), SamplePath(grid, d, std::move(b.r)),
          SamplePath::scalar(grid, std::move(b.y)), SamplePath(grid, d, std::move(b.m0)),
          SamplePath::scalar(grid, std::move(b.w_sigma)), SamplePath::scalar(grid, std::move(b.mvt))};
}

}  // namespace robhedge
