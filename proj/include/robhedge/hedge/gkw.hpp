#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "robhedge/core/error.hpp"
#include "robhedge/hedge/density.hpp"
#include "robhedge/hedge/problem.hpp"
#include "robhedge/hedge/zero_drift.hpp"

namespace robhedge {

struct GKWOptions {
  /// Regression basis {1, X, Y, XY} plus X^2..X^x_power per asset.
  unsigned x_power = 1;
  bool use_y = true;
  /// Adds truncated lines (X - kappa)_+, and their products with Y, at this
  /// many per-step sample quantiles of each asset price.
  std::size_t x_knots = 6;
  double rank_tol = 1e-10;
};

/// Least-squares fit of one conditional expectation at one time step, on
/// standardized features. Inactive columns were constant or dependent.
struct StepFit {
  Eigen::VectorXd center, scale, coef;

  double predict(const Eigen::VectorXd& raw) const {
    double s = coef(0);
    for (Eigen::Index i = 1; i < raw.size(); ++i)
      if (coef(i) != 0.0) s += coef(i) * (raw(i) - center(i)) / scale(i);
    return s;
  }
};

namespace detail {

/// knots[a] holds the spline knots of asset a at this step.
inline Eigen::VectorXd gkw_features(const MarketPathView& v, std::size_t j, const GKWOptions& opt,
                                    const std::vector<std::vector<double>>& knots) {
  const auto d = static_cast<Eigen::Index>(v.assets());
  Eigen::Index q = 1 + d + (opt.use_y ? 1 + d : 0) + d * (opt.x_power > 1 ? opt.x_power - 1 : 0);
  for (const auto& k : knots) q += static_cast<Eigen::Index>(k.size()) * (opt.use_y ? 2 : 1);
  Eigen::VectorXd f(q);
  const AssetVector x = v.x(j);
  const double y = v.y(j);
  Eigen::Index i = 0;
  f(i++) = 1.0;
  for (Eigen::Index a = 0; a < d; ++a) f(i++) = x(a);
  if (opt.use_y) {
    f(i++) = y;
    for (Eigen::Index a = 0; a < d; ++a) f(i++) = x(a) * y;
  }
  for (unsigned p = 2; p <= opt.x_power; ++p)
    for (Eigen::Index a = 0; a < d; ++a) f(i++) = std::pow(x(a), static_cast<double>(p));
  for (std::size_t a = 0; a < knots.size(); ++a)
    for (double kappa : knots[a]) {
      const double hinge = std::max(x(static_cast<Eigen::Index>(a)) - kappa, 0.0);
      f(i++) = hinge;
      if (opt.use_y) f(i++) = hinge * y;
    }
  return f;
}

inline std::vector<std::vector<double>> quantile_knots(const MarketEnsemble& e, std::size_t j, std::size_t count) {
  std::vector<std::vector<double>> out(count > 0 ? e.assets : 0);
  for (std::size_t a = 0; a < out.size(); ++a) {
    std::vector<double> xs(e.size());
    for (std::size_t p = 0; p < e.size(); ++p) xs[p] = e.view(p).x(j)(static_cast<Eigen::Index>(a));
    std::sort(xs.begin(), xs.end());
    for (std::size_t i = 1; i <= count; ++i) {
      const double kappa = xs[i * (xs.size() - 1) / (count + 1)];
      if (out[a].empty() || kappa > out[a].back()) out[a].push_back(kappa);
    }
  }
  return out;
}

/// Weighted least squares of target on features; returns the fit and the
/// number of regressors dropped as constant or dependent.
inline StepFit weighted_fit(const Eigen::MatrixXd& raw, const Eigen::VectorXd& target, const Eigen::VectorXd& w,
                            double tol, std::size_t& dropped) {
  const Eigen::Index n = raw.rows(), q = raw.cols();
  StepFit fit{Eigen::VectorXd::Zero(q), Eigen::VectorXd::Ones(q), Eigen::VectorXd::Zero(q)};
  std::vector<Eigen::Index> active{0};
  for (Eigen::Index c = 1; c < q; ++c) {
    const double mu = raw.col(c).mean();
    const double sd = std::sqrt((raw.col(c).array() - mu).square().mean());
    fit.center(c) = mu;
    if (sd > 1e-12 * (1.0 + std::abs(mu))) {
      fit.scale(c) = sd;
      active.push_back(c);
    } else {
      ++dropped;
    }
  }
  const auto qa = static_cast<Eigen::Index>(active.size());
  Eigen::MatrixXd a(n, qa);
  const Eigen::VectorXd sw = w.array().sqrt();
  for (Eigen::Index c = 0; c < qa; ++c) {
    const Eigen::Index src = active[static_cast<std::size_t>(c)];
    a.col(c) = src == 0 ? Eigen::VectorXd(sw)
                        : Eigen::VectorXd(((raw.col(src).array() - fit.center(src)) / fit.scale(src)) * sw.array());
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(tol);
  if (qr.rank() == 0) {
    ++dropped;
    return fit;  // degenerate step: all coefficients stay zero
  }
  dropped += static_cast<std::size_t>(qa - qr.rank());
  const Eigen::VectorXd beta = qr.solve(Eigen::VectorXd(target.array() * sw.array()));
  for (Eigen::Index c = 0; c < qa; ++c) fit.coef(active[static_cast<std::size_t>(c)]) = beta(c);
  return fit;
}

/// Least squares of dg on (features x dm_a) for every asset a, so that
/// dg ~ sum_a xi_a(features) dm_a. Dividing dg dm by dt instead would add
/// the noise xi (dm^2 - dt) to the target.
inline std::vector<StepFit> increment_fit(const Eigen::MatrixXd& raw, const Eigen::MatrixXd& dm,
                                          const Eigen::VectorXd& dg, const Eigen::VectorXd& w, double tol,
                                          std::size_t& dropped) {
  const Eigen::Index n = raw.rows(), q = raw.cols(), d = dm.cols();
  StepFit base{Eigen::VectorXd::Zero(q), Eigen::VectorXd::Ones(q), Eigen::VectorXd::Zero(q)};
  std::vector<Eigen::Index> active{0};
  for (Eigen::Index c = 1; c < q; ++c) {
    const double mu = raw.col(c).mean();
    const double sd = std::sqrt((raw.col(c).array() - mu).square().mean());
    base.center(c) = mu;
    if (sd > 1e-12 * (1.0 + std::abs(mu))) {
      base.scale(c) = sd;
      active.push_back(c);
    } else {
      ++dropped;
    }
  }
  std::vector<StepFit> fits(static_cast<std::size_t>(d), base);
  const auto qa = static_cast<Eigen::Index>(active.size());
  const Eigen::ArrayXd sw = w.array().sqrt();
  Eigen::MatrixXd a(n, qa * d);
  for (Eigen::Index c = 0; c < qa; ++c) {
    const Eigen::Index src = active[static_cast<std::size_t>(c)];
    const Eigen::ArrayXd col = src == 0 ? Eigen::ArrayXd::Ones(n)
                                        : Eigen::ArrayXd((raw.col(src).array() - base.center(src)) / base.scale(src));
    for (Eigen::Index b = 0; b < d; ++b) a.col(b * qa + c) = (col * dm.col(b).array() * sw).matrix();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(tol);
  if (qr.rank() == 0) {
    ++dropped;
    return fits;
  }
  dropped += static_cast<std::size_t>(qa * d - qr.rank());
  const Eigen::VectorXd beta = qr.solve(Eigen::VectorXd(dg.array() * sw));
  for (Eigen::Index b = 0; b < d; ++b)
    for (Eigen::Index c = 0; c < qa; ++c)
      fits[static_cast<std::size_t>(b)].coef(active[static_cast<std::size_t>(c)]) = beta(b * qa + c);
  return fits;
}

/// Min-norm psi with psi' u = eta', where dU = u dM0 + drift and
/// u = (z0 / z) [k'; I + M0 k'].
inline Eigen::VectorXd min_norm_psi(const AssetVector& eta, const AssetVector& k, const AssetVector& m0, double z0_over_z) {
  const Eigen::Index d = eta.size();
  Eigen::MatrixXd u(d + 1, d);
  u.row(0) = k.transpose();
  u.bottomRows(d) = Eigen::MatrixXd::Identity(d, d) + Eigen::VectorXd(m0) * k.transpose();
  u *= z0_over_z;
  return u * (u.transpose() * u).ldlt().solve(Eigen::VectorXd(eta));
}

inline Eigen::VectorXd u_state(double z0, double z, const AssetVector& m0) {
  Eigen::VectorXd u(m0.size() + 1);
  u(0) = z0 / z;
  u.tail(m0.size()) = Eigen::VectorXd(m0) * (z0 / z);
  return u;
}

/// Model is anything with value(v, j) = V~_j and xi(v, j) = d<V~, M0>/dt.
template <class Model>
Eigen::VectorXd claim_psi(const Model& m, const MarketPathView& v, std::size_t j, double z0, double zj) {
  const AssetVector k = v.k(j);
  const AssetVector eta = (z0 / zj) * (m.xi(v, j) + k * m.value(v, j));
  return min_norm_psi(eta, k, v.m0(j), z0 / zj);
}

}  // namespace detail

/// Fitted conditional-expectation model: V~_j = E~[H | F_j] and the
/// integrand xi~_j = d<V~, M0>/dt, both as functions of the state at node j.
struct GKWModel {
  GKWOptions options;
  DensityModel density;
  std::vector<std::vector<std::vector<double>>> knots;  ///< n steps x d assets
  std::vector<StepFit> value_fits;                     ///< n steps
  std::vector<std::vector<StepFit>> xi_fits;           ///< n steps x d assets

  Eigen::VectorXd features(const MarketPathView& v, std::size_t j) const {
    return detail::gkw_features(v, j, options, knots[j]);
  }
  double value(const MarketPathView& v, std::size_t j) const { return value_fits[j].predict(features(v, j)); }
  AssetVector xi(const MarketPathView& v, std::size_t j) const {
    const Eigen::VectorXd f = features(v, j);
    AssetVector out(static_cast<Eigen::Index>(v.assets()));
    for (std::size_t a = 0; a < v.assets(); ++a) out(static_cast<Eigen::Index>(a)) = xi_fits[j][a].predict(f);
    return out;
  }
  /// Integrand of H z0 / z_T against U at node j given z~_j: with
  /// N = (z0 / z) V~ the M0-integrand is eta = (z0 / z)(xi~ + k V~).
  Eigen::VectorXd psi(const MarketPathView& v, std::size_t j, double z0, double zj) const {
    return detail::claim_psi(*this, v, j, z0, zj);
  }
};

struct GKWData {
  GKWModel model;
  std::vector<std::vector<double>> psi0H;  ///< per path, n
  std::vector<std::vector<double>> psi1H;  ///< per path, n x d
  std::vector<std::vector<double>> U;      ///< per path, (n+1) x (d+1)
  std::vector<double> L_terminal;          ///< per path
  std::vector<double> integral;            ///< per path, sum psi' dU
  std::vector<double> target;              ///< per path, H z0 / z_T
  std::vector<double> qtilde_weight;       ///< per path, z_T^2 / z0
  double mean_term = 0.0;                  ///< E~Q (H z0 / z_T) = E (z_T H)
  std::vector<std::string> warnings;
};

/// Time-stepwise weighted regression of the claim under the variance-optimal
/// measure, then the orthogonal decomposition against U.
inline GKWData gkw_decompose(const HedgeProblem& pb, const MarketEnsemble& e, const DensityData& dens,
                             const GKWOptions& opt = {}, unsigned threads = 1) {
  const std::size_t np = e.size(), n = e.grid.steps(), d = e.assets;
  if (np < 2) throw std::invalid_argument("gkw_decompose: need at least two paths");
  if (dens.ztilde.size() != np) throw std::invalid_argument("gkw_decompose: density does not match the ensemble");
  GKWData out;
  out.model.options = opt;
  out.model.density = dens.model;

  std::vector<double> h(np);
  for (std::size_t p = 0; p < np; ++p) h[p] = detail::payoff_checked(pb.payoff, e.view(p), p);

  std::vector<Eigen::MatrixXd> feats(n);
  out.model.knots.resize(n);
  parallel_for(n, threads, [&](std::size_t j) {
    out.model.knots[j] = detail::quantile_knots(e, j, j == 0 ? 0 : opt.x_knots);
    Eigen::MatrixXd f(static_cast<Eigen::Index>(np), out.model.features(e.view(0), j).size());
    for (std::size_t p = 0; p < np; ++p) f.row(static_cast<Eigen::Index>(p)) = out.model.features(e.view(p), j);
    feats[j] = std::move(f);
  });

  // value fits: E~[H | F_j] by least squares under weights z_T / z_j
  out.model.value_fits.resize(n);
  std::vector<std::size_t> dropped_value(n, 0), dropped_xi(n, 0);
  std::vector<Eigen::VectorXd> weights(n);
  parallel_for(n, threads, [&](std::size_t j) {
    Eigen::VectorXd w(static_cast<Eigen::Index>(np)), y(static_cast<Eigen::Index>(np));
    for (std::size_t p = 0; p < np; ++p) {
      w(static_cast<Eigen::Index>(p)) = dens.ztilde[p][n] / dens.ztilde[p][j];
      y(static_cast<Eigen::Index>(p)) = h[p];
    }
    out.model.value_fits[j] = detail::weighted_fit(feats[j], y, w, opt.rank_tol, dropped_value[j]);
    weights[j] = std::move(w);
  });

  // integrand fits: fitted one-step value increments regressed on dM0
  out.model.xi_fits.assign(n, std::vector<StepFit>(d));
  parallel_for(n, threads, [&](std::size_t j) {
    const auto rows = static_cast<Eigen::Index>(np);
    Eigen::VectorXd dg(rows);
    Eigen::MatrixXd dm(rows, static_cast<Eigen::Index>(d));
    for (std::size_t p = 0; p < np; ++p) {
      const auto r = static_cast<Eigen::Index>(p);
      const double next = j + 1 == n ? h[p] : out.model.value_fits[j + 1].predict(feats[j + 1].row(r).transpose());
      dg(r) = next - out.model.value_fits[j].predict(feats[j].row(r).transpose());
      dm.row(r) = e.view(p).dm0(j).transpose();
    }
    out.model.xi_fits[j] = detail::increment_fit(feats[j], dm, dg, weights[j], opt.rank_tol, dropped_xi[j]);
  });
  std::size_t steps_dropped = 0;
  for (std::size_t j = 1; j < n; ++j) steps_dropped += (dropped_value[j] + dropped_xi[j]) > 0;
  if (steps_dropped > 0)
    out.warnings.push_back("constant or dependent regressors dropped at " + std::to_string(steps_dropped) + " of " +
                           std::to_string(n) + " steps");

  // pathwise decomposition against U
  out.psi0H.assign(np, {});
  out.psi1H.assign(np, {});
  out.U.assign(np, {});
  out.L_terminal.assign(np, 0.0);
  out.integral.assign(np, 0.0);
  out.target.assign(np, 0.0);
  out.qtilde_weight.assign(np, 0.0);
  const double z0 = 1.0 / dens.model.normalizer;
  parallel_for(np, threads, [&](std::size_t p) {
    const MarketPathView v = e.view(p);
    const auto& z = dens.ztilde[p];
    out.psi0H[p].assign(n, 0.0);
    out.psi1H[p].assign(n * d, 0.0);
    out.U[p].assign((n + 1) * (d + 1), 0.0);
    for (std::size_t j = 0; j <= n; ++j) {
      const Eigen::VectorXd u = detail::u_state(z0, z[j], v.m0(j));
      for (std::size_t c = 0; c <= d; ++c) out.U[p][j * (d + 1) + c] = u(static_cast<Eigen::Index>(c));
    }
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const Eigen::VectorXd psi = out.model.psi(v, j, z0, z[j]);
      out.psi0H[p][j] = psi(0);
      for (std::size_t a = 0; a < d; ++a) out.psi1H[p][j * d + a] = psi(static_cast<Eigen::Index>(a + 1));
      for (std::size_t c = 0; c <= d; ++c)
        acc += psi(static_cast<Eigen::Index>(c)) * (out.U[p][(j + 1) * (d + 1) + c] - out.U[p][j * (d + 1) + c]);
    }
    out.integral[p] = acc;
    out.target[p] = h[p] * z0 / z[n];
    out.qtilde_weight[p] = z[n] * z[n] / z0;
  });
  double mt = 0.0;
  for (std::size_t p = 0; p < np; ++p) mt += dens.ztilde[p][n] * h[p];
  out.mean_term = mt / static_cast<double>(np);
  for (std::size_t p = 0; p < np; ++p) out.L_terminal[p] = out.target[p] - out.mean_term - out.integral[p];
  return out;
}

/// Largest Q~-weighted sample correlation of the residual L_T with the
/// stochastic integral and with the increments U_T - U_0.
inline double gkw_orthogonality(const GKWData& g) {
  const std::size_t np = g.L_terminal.size();
  const std::size_t width = g.U[0].size() / (g.psi0H[0].size() + 1);
  std::vector<std::vector<double>> probes{g.integral};
  for (std::size_t c = 0; c < width; ++c) {
    std::vector<double> du(np);
    for (std::size_t p = 0; p < np; ++p) du[p] = g.U[p][g.U[p].size() - width + c] - g.U[p][c];
    probes.push_back(std::move(du));
  }
  auto wmean = [&](const std::vector<double>& x) {
    double s = 0.0, ws = 0.0;
    for (std::size_t p = 0; p < np; ++p) s += g.qtilde_weight[p] * x[p], ws += g.qtilde_weight[p];
    return s / ws;
  };
  const double ml = wmean(g.L_terminal);
  double worst = 0.0;
  for (const auto& x : probes) {
    const double mx = wmean(x);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t p = 0; p < np; ++p) {
      const double a = g.L_terminal[p] - ml, b = x[p] - mx;
      sxy += g.qtilde_weight[p] * a * b;
      sxx += g.qtilde_weight[p] * a * a;
      syy += g.qtilde_weight[p] * b * b;
    }
    if (sxx > 0.0 && syy > 0.0) worst = std::max(worst, std::abs(sxy) / std::sqrt(sxx * syy));
  }
  return worst;
}

namespace detail {

inline AssetVector dollar_positions(const HedgeProblem& pb, const MarketPathView& v, std::size_t j,
                                    const AssetVector& vartheta) {
  const AssetMatrix s0 = pb.market.sigma_at(v.time(j), v.y(j));
  Eigen::FullPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd(s0.transpose()));
  if (!lu.isInvertible())
    throw NumericError("singular sigma0 at node " + std::to_string(j) + " (t = " + std::to_string(v.time(j)) + ")");
  return AssetVector(lu.solve(Eigen::VectorXd(vartheta)));
}

}  // namespace detail

struct GeneralStrategy {
  /// theta = (sigma0')^{-1} [psi1 + (zeta / z0)(x + int psi' dU - psi' U)].
  StrategyRule rule;
  /// Cross-check route with the same coefficients in feedback form,
  /// theta = (sigma0')^{-1} [xi~ + k (V~ - x - G)].
  StrategyRule feedback;
};

/// Model: GKWModel, SurfaceClaimModel, or any type with density, value and xi.
template <class Model>
GeneralStrategy strategy_general(const HedgeProblem& pb, const Model& gkw) {
  const double x = pb.capital;
  GeneralStrategy s;
  s.rule = {[pb, gkw, x](const MarketPathView& v) {
              const std::vector<double> z = gkw.density.ztilde(v);
              const double z0 = z[0];
              std::vector<AssetVector> th(v.steps());
              double acc = 0.0;
              for (std::size_t j = 0; j < v.steps(); ++j) {
                const Eigen::VectorXd psi = detail::claim_psi(gkw, v, j, z0, z[j]);
                const Eigen::VectorXd u = detail::u_state(z0, z[j], v.m0(j));
                const AssetVector zeta = -v.k(j) * z[j];
                const Eigen::Index d = static_cast<Eigen::Index>(v.assets());
                const AssetVector vt = AssetVector(psi.tail(d)) + zeta * ((x + acc - psi.dot(u)) / z0);
                th[j] = detail::dollar_positions(pb, v, j, vt);
                acc += psi.dot(detail::u_state(z0, z[j + 1], v.m0(j + 1)) - u);
              }
              return th;
            },
            "robust mean-variance"};
  s.feedback = {[pb, gkw, x](const MarketPathView& v) {
                  std::vector<AssetVector> th(v.steps());
                  double g = 0.0;
                  for (std::size_t j = 0; j < v.steps(); ++j) {
                    const AssetVector vt = gkw.xi(v, j) + v.k(j) * (gkw.value(v, j) - x - g);
                    th[j] = detail::dollar_positions(pb, v, j, vt);
                    g += th[j].dot(v.sigma(j) * v.dm0(j));
                  }
                  return th;
                },
                "robust mean-variance (feedback)"};
  return s;
}

/// Bracket form of the Gateaux differential,
///   2 z0^{-1} E~Q int (psi(sigma0) - psi^H)' d<U> psi(h),
/// where both brackets reduce to (z0 / z)[.]: (vartheta + k (x + G) - xi~ - k V~)
/// for the first and (h' theta + k G^h) for the second.
template <class Model>
GateauxEstimate gateaux_DJ_bracket(const HedgeProblem& pb, const MarketEnsemble& e, const StrategyRule& theta,
                                   const VolContamination& h, const Model& gkw, unsigned threads = 1) {
  std::vector<double> per(e.size());
  parallel_for(e.size(), threads, [&](std::size_t p) {
    const MarketPathView v = e.view(p);
    const auto th = theta.evaluate(v);
    const std::vector<double> z = gkw.density.ztilde(v);
    const double z0 = z[0];
    double g = 0.0, gh = 0.0, s = 0.0;
    for (std::size_t j = 0; j < v.steps(); ++j) {
      const AssetVector k = v.k(j);
      const AssetMatrix hj = h(v.time(j), v.y(j));
      const AssetVector vt = v.sigma(j).transpose() * th[j];
      const AssetVector a = vt + k * (pb.capital + g) - gkw.xi(v, j) - k * gkw.value(v, j);
      const AssetVector b = hj.transpose() * th[j] + k * gh;
      s += (z0 / z[j]) * (z0 / z[j]) * a.dot(b) * v.dt(j);
      g += th[j].dot(v.sigma(j) * v.dm0(j));
      gh += th[j].dot(hj * v.dm0(j));
    }
    per[p] = 2.0 / z0 * (z[v.steps()] * z[v.steps()] / z0) * s;
  });
  const MCEstimate m = mean_and_se(per);
  return {m.value, m.std_err, "bracket"};
}

/// Closed form when k = 0 and the representation integrand is known, the
/// bracket form when a fitted decomposition is given, the direct form otherwise.
inline GateauxEstimate gateaux_DJ(const HedgeProblem& pb, const MarketEnsemble& e, const StrategyRule& theta,
                                  const VolContamination& h, const PathNodeFn* phi, const GKWModel* gkw,
                                  unsigned threads = 1) {
  if (pb.market.k_is_zero() && phi) return gateaux_DJ_analytic(pb, e, theta, h, *phi, threads);
  if (gkw) return gateaux_DJ_bracket(pb, e, theta, h, *gkw, threads);
  return gateaux_DJ_direct(pb, e, theta, h, threads);
}

/// Positions theta = X dv/dx from a value surface (delta-only hedge).
template <class Surface>
StrategyRule surface_delta_strategy(const Surface& s) {
  return StrategyRule::feedback(
      [s](const MarketPathView& v, std::size_t j) {
        AssetVector th(1);
        const double x = v.x(j)(0);
        th(0) = x * s.dvdx_at(v.time(j), x, v.y(j));
        return th;
      },
      "surface delta");
}

/// Claim model read off a single-asset value surface under the
/// variance-optimal measure: V~ = v(t, X, Y) and xi~ = sigma0 X v_x.
template <class Surface>
struct SurfaceClaimModel {
  DensityModel density;
  Surface surface;

  double value(const MarketPathView& v, std::size_t j) const {
    return surface.value_at(v.time(j), v.x(j)(0), v.y(j));
  }
  AssetVector xi(const MarketPathView& v, std::size_t j) const {
    const double x = v.x(j)(0);
    return AssetVector::Constant(1, v.sigma(j)(0, 0) * x * surface.dvdx_at(v.time(j), x, v.y(j)));
  }
};

}  // namespace robhedge
