#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "robhedge/core/error.hpp"
#include "robhedge/core/grid.hpp"
#include "robhedge/core/linalg.hpp"
#include "robhedge/core/parallel.hpp"
#include "robhedge/core/seed.hpp"
#include "robhedge/sde/sv_market.hpp"

namespace robhedge {

/// Read-only view of one simulated market path. Step quantities (sigma, k,
/// increments) are indexed by the left node j < steps().
class MarketPathView {
 public:
  MarketPathView(const MarketPathBuffers& b, const TimeGrid& grid, std::size_t d) : b_(&b), grid_(&grid), d_(d) {}

  const TimeGrid& grid() const { return *grid_; }
  std::size_t steps() const { return grid_->steps(); }
  std::size_t assets() const { return d_; }
  double time(std::size_t j) const { return (*grid_)[j]; }
  double dt(std::size_t j) const { return grid_->dt(j); }

  AssetVector x(std::size_t j) const { return node_vec(b_->x, j); }
  AssetVector m0(std::size_t j) const { return node_vec(b_->m0, j); }
  AssetVector dm0(std::size_t j) const { return node_vec(b_->m0, j + 1) - node_vec(b_->m0, j); }
  AssetVector dw(std::size_t j) const { return node_vec(b_->dw, j); }
  AssetVector k(std::size_t j) const { return node_vec(b_->k, j); }
  double y(std::size_t j) const { return b_->y[j]; }
  double w_sigma(std::size_t j) const { return b_->w_sigma[j]; }
  double mvt(std::size_t j) const { return b_->mvt[j]; }
  /// Volatility used on step j.
  AssetMatrix sigma(std::size_t j) const {
    const auto di = static_cast<Eigen::Index>(d_);
    AssetMatrix s(di, di);
    for (std::size_t a = 0; a < d_; ++a)
      for (std::size_t c = 0; c < d_; ++c) s(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)) =
          b_->sigma[(j * d_ + a) * d_ + c];
    return s;
  }

 private:
  AssetVector node_vec(const std::vector<double>& v, std::size_t j) const {
    AssetVector out(static_cast<Eigen::Index>(d_));
    for (std::size_t a = 0; a < d_; ++a) out(static_cast<Eigen::Index>(a)) = v[j * d_ + a];
    return out;
  }
  const MarketPathBuffers* b_;
  const TimeGrid* grid_;
  std::size_t d_;
};

/// Independent reference paths simulated under sigma0; path p uses seed
/// (master, p).
struct MarketEnsemble {
  TimeGrid grid;
  std::size_t assets = 1;
  std::vector<MarketPathBuffers> paths;

  std::size_t size() const { return paths.size(); }
  MarketPathView view(std::size_t p) const { return {paths[p], grid, assets}; }
};

inline MarketEnsemble simulate_ensemble(const SVMarketSpec& spec, const TimeGrid& grid, std::size_t n_paths,
                                        std::uint64_t seed, unsigned threads = 1) {
  spec.validate();
  if (n_paths < 1) throw std::invalid_argument("simulate_ensemble: need at least one path");
  MarketEnsemble e{grid, spec.assets, std::vector<MarketPathBuffers>(n_paths)};
  parallel_for(n_paths, threads, [&](std::size_t p) {
    e.paths[p] = simulate_market_buffers(spec, grid, SeedSpec{seed, p});
    e.paths[p].r.clear();
    e.paths[p].r.shrink_to_fit();
  });
  return e;
}

using Payoff = std::function<double(const MarketPathView&)>;
/// Per-node vector functional of the path prefix, e.g. a representation integrand.
using PathNodeFn = std::function<AssetVector(const MarketPathView&, std::size_t j)>;

namespace payoffs {

inline Payoff constant(double c) {
  return [c](const MarketPathView&) { return c; };
}
/// Terminal price of asset a.
inline Payoff asset(std::size_t a = 0) {
  return [a](const MarketPathView& v) { return v.x(v.steps())(static_cast<Eigen::Index>(a)); };
}
inline Payoff call(double strike, std::size_t a = 0) {
  return [strike, a](const MarketPathView& v) {
    return std::max(v.x(v.steps())(static_cast<Eigen::Index>(a)) - strike, 0.0);
  };
}
inline Payoff put(double strike, std::size_t a = 0) {
  return [strike, a](const MarketPathView& v) {
    return std::max(strike - v.x(v.steps())(static_cast<Eigen::Index>(a)), 0.0);
  };
}
/// Claim driven by the volatility noise alone, g(w^sigma_T).
inline Payoff of_vol_noise(std::function<double(double)> g) {
  return [g = std::move(g)](const MarketPathView& v) { return g(v.w_sigma(v.steps())); };
}

}  // namespace payoffs

/// Mean-variance hedging problem: reference market (sigma0 and k live in the
/// spec), band sigma0 + delta h with |h_ij| <= r, claim and initial capital.
struct HedgeProblem {
  SVMarketSpec market;
  double delta = 0.0;
  double r = 0.0;
  Payoff payoff;
  double capital = 0.0;

  std::size_t assets() const { return market.assets; }
  double band_half_width() const { return delta * r; }

  /// Bounded, uniformly elliptic sigma0 on a probe lattice in (t, y).
  void validate(double t_end) const {
    market.validate();
    if (!(delta >= 0.0) || !(r >= 0.0)) throw std::invalid_argument("HedgeProblem: delta and r must be >= 0");
    if (!payoff) throw std::invalid_argument("HedgeProblem: payoff required");
    if (!std::isfinite(capital)) throw std::invalid_argument("HedgeProblem: capital must be finite");
    for (int i = 0; i <= 10; ++i) {
      const double t = t_end * i / 10.0;
      for (int q = -4; q <= 4; ++q) {
        const AssetMatrix s = market.sigma_at(t, market.y0 + 0.5 * q);
        if (!s.allFinite()) throw ConfigError("HedgeProblem: sigma0 not finite at t = " + std::to_string(t));
        check_ellipticity(s, band_half_width(), t);
      }
    }
  }
};

/// A trading strategy in dollar amounts: evaluate(view) returns theta_j for
/// j < steps(), each computed from the path up to node j.
struct StrategyRule {
  std::function<std::vector<AssetVector>(const MarketPathView&)> evaluate;
  std::string label;

  /// Markov feedback rule theta_j = g(view, j).
  static StrategyRule feedback(PathNodeFn g, std::string label) {
    return {[g = std::move(g)](const MarketPathView& v) {
              std::vector<AssetVector> th(v.steps());
              for (std::size_t j = 0; j < v.steps(); ++j) th[j] = g(v, j);
              return th;
            },
            std::move(label)};
  }
  static StrategyRule zero(std::size_t d) {
    return feedback([d](const MarketPathView&, std::size_t) { return AssetVector::Zero(static_cast<Eigen::Index>(d)); },
                    "zero");
  }
};

/// Volatility functional: sigma on step j given the position theta_j held.
using VolFn = std::function<AssetMatrix(const MarketPathView&, std::size_t j, const AssetVector& theta)>;

inline VolFn reference_vol() {
  return [](const MarketPathView& v, std::size_t j, const AssetVector&) { return v.sigma(j); };
}
/// sigma0 + delta h.
inline VolFn perturbed_vol(VolContamination h, double delta) {
  return [h = std::move(h), delta](const MarketPathView& v, std::size_t j, const AssetVector&) {
    return AssetMatrix(v.sigma(j) + delta * h(v.time(j), v.y(j)));
  };
}

struct MCEstimate {
  double value = 0.0;
  double std_err = 0.0;
};

inline MCEstimate mean_and_se(const std::vector<double>& xs) {
  const auto n = static_cast<double>(xs.size());
  if (xs.empty()) throw std::invalid_argument("mean_and_se: empty sample");
  double m = 0.0;
  for (double x : xs) m += x;
  m /= n;
  if (xs.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1.0) / n)};
}

namespace detail {

inline void check_vol_in_band(const AssetMatrix& sigma, const AssetMatrix& sigma0, double half_width, double t) {
  if ((sigma - sigma0).cwiseAbs().maxCoeff() > half_width * (1.0 + 1e-12) + 1e-15)
    throw ConfigError("volatility leaves the band sigma0 +- delta r at t = " + std::to_string(t));
}

inline double payoff_checked(const Payoff& h, const MarketPathView& v, std::size_t p) {
  const double x = h(v);
  if (!std::isfinite(x)) throw NumericError("payoff not finite on path " + std::to_string(p));
  return x;
}

}  // namespace detail

/// Per-path hedging error H - x - sum theta' sigma dM0 under the volatility
/// `vol`. Claim and positions are those of the reference path, so the
/// volatility acts only through the gains.
inline std::vector<double> hedging_errors(const HedgeProblem& pb, const MarketEnsemble& e, const VolFn& vol,
                                          const StrategyRule& theta, unsigned threads = 1) {
  std::vector<double> err(e.size());
  const double hw = pb.band_half_width();
  parallel_for(e.size(), threads, [&](std::size_t p) {
    const MarketPathView v = e.view(p);
    const std::vector<AssetVector> th = theta.evaluate(v);
    if (th.size() != v.steps()) throw std::invalid_argument("strategy returned the wrong number of positions");
    double g = 0.0;
    for (std::size_t j = 0; j < v.steps(); ++j) {
      if (!th[j].allFinite()) throw NumericError("strategy not finite at t = " + std::to_string(v.time(j)));
      const AssetMatrix s = vol(v, j, th[j]);
      // sigma is irrelevant where no position is held
      if (th[j].cwiseAbs().maxCoeff() > 0.0) detail::check_vol_in_band(s, v.sigma(j), hw, v.time(j));
      g += th[j].dot(s * v.dm0(j));
    }
    err[p] = detail::payoff_checked(pb.payoff, v, p) - pb.capital - g;
  });
  return err;
}

/// J(sigma, theta) = E (H - x - G_T)^2.
inline MCEstimate risk_J(const HedgeProblem& pb, const MarketEnsemble& e, const VolFn& vol, const StrategyRule& theta,
                         unsigned threads = 1) {
  std::vector<double> sq = hedging_errors(pb, e, vol, theta, threads);
  for (double& x : sq) x *= x;
  return mean_and_se(sq);
}

inline MCEstimate risk_J(const HedgeProblem& pb, const VolFn& vol, const StrategyRule& theta, const TimeGrid& grid,
                         std::size_t n_paths, std::uint64_t seed, unsigned threads = 1) {
  pb.validate(grid.t_end());
  return risk_J(pb, simulate_ensemble(pb.market, grid, n_paths, seed, threads), vol, theta, threads);
}

/// E int |theta|^2 dC with C_t = t; must be finite for an admissible strategy.
inline MCEstimate admissibility(const MarketEnsemble& e, const StrategyRule& theta, unsigned threads = 1) {
  std::vector<double> acc(e.size());
  parallel_for(e.size(), threads, [&](std::size_t p) {
    const MarketPathView v = e.view(p);
    const auto th = theta.evaluate(v);
    double s = 0.0;
    for (std::size_t j = 0; j < v.steps(); ++j) s += th[j].squaredNorm() * v.dt(j);
    acc[p] = s;
  });
  const MCEstimate m = mean_and_se(acc);
  if (!std::isfinite(m.value)) throw NumericError("strategy '" + theta.label + "' is not admissible");
  return m;
}

}  // namespace robhedge
