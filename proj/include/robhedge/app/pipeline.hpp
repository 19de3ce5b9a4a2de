#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "robhedge/app/artifacts.hpp"
#include "robhedge/app/config.hpp"
#include "robhedge/core/csv.hpp"
#include "robhedge/core/seed.hpp"
#include "robhedge/hedge/density.hpp"
#include "robhedge/hedge/gkw.hpp"
#include "robhedge/hedge/zero_drift.hpp"
#include "robhedge/robust/estimate.hpp"
#include "robhedge/robust/truncation.hpp"
#include "robhedge/vol/reconstruct.hpp"

namespace robhedge::app {

namespace detail {

/// Markov drift of the volatility factor in (t, y).
inline ScalarFieldFn factor_drift(const ParamDriftModel& model, const ParamVector& alpha, double eta = 0.0) {
  const double eps = model.epsilon;
  return [model, alpha, eta, eps](double t, double y) {
    return model.drift(PathPrefix({}, {}, t, y), alpha) + eps * eta;
  };
}

inline SVMarketSpec base_market(const PipelineConfig& cfg, const ParamDriftModel& model, const ParamVector& alpha,
                                double x0, double eta = 0.0) {
  SVMarketSpec m;
  m.f = vol_map_from_json(cfg.vol_map);
  m.vol_drift = factor_drift(model, alpha, eta);
  m.vol_noise = model.epsilon;
  m.y0 = 0.0;
  m.x0 = AssetVector::Constant(1, x0);
  if (cfg.hedge) apply_risk_premium(cfg.hedge->k, m);
  return m;
}

/// sigma0 on the hedge grid read off a path on the data grid.
inline AssetMatrixFn interpolated_vol(const TimeGrid& grid, const std::vector<double>& sigma) {
  const SamplePath p = SamplePath::scalar(grid, sigma);
  return [p](double t, double) { return AssetMatrix::Constant(1, 1, p.interpolate(t)); };
}

/// Center and the 2m ends of the principal axes of the region.
inline std::vector<ParamVector> region_probes(const ConfidenceRegion& cr) {
  std::vector<ParamVector> out{cr.center};
  const Eigen::Index m = cr.center.size();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es{Eigen::MatrixXd(cr.shape)};
  if (es.info() != Eigen::Success) throw NumericError("band: eigen-decomposition of the region failed");
  for (Eigen::Index i = 0; i < m; ++i) {
    const double len = cr.radius * std::sqrt(std::max(es.eigenvalues()(i), 0.0));
    const ParamVector axis = ParamVector(es.eigenvectors().col(i)) * len;
    out.push_back(cr.center + axis);
    out.push_back(cr.center - axis);
  }
  return out;
}

inline int exit_code_of(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return 3;
  return 2;
}

}  // namespace detail

/// Claim integrand under k = 0 and sigma0 = sigma0(t), when one is known.
inline std::optional<PathNodeFn> known_integrand(const json& payoff, const SVMarketSpec& m) {
  const auto type = payoff.at("type").get<std::string>();
  if (type == "asset") return integrands::terminal_asset();
  if (type == "call")
    return integrands::call(payoff.at("strike").get<double>(), [s0 = m.sigma0](double t) {
      const double s = s0(t, 0.0)(0, 0);
      return s * s;
    });
  return std::nullopt;
}

/// Fits, builds and evaluates the robust strategy for `pb` on fresh train and
/// test ensembles; `comparator`, when given, is fitted on its own market and
/// evaluated on the same test paths. pb.capital is ignored: hs.capital or the
/// fitted claim price is used.
inline HedgeStage evaluate_hedge(HedgeProblem pb, const HedgeProblem* comparator, const HedgeSpec& hs, double t_end,
                                 std::uint64_t seed, unsigned threads) {
  HedgeStage out;
  out.n_steps = hs.n_steps;
  out.train_paths = hs.train_paths;
  out.test_paths = hs.test_paths;
  const TimeGrid grid = make_grid(t_end, hs.n_steps);
  pb.capital = 0.0;
  pb.validate(t_end);
  for (double c : hs.perturbations)
    if (!(std::abs(c) <= pb.r)) throw ConfigError("hedge: perturbation " + std::to_string(c) + " exceeds r");

  const std::uint64_t train_seed = mix_seed(seed, 1, 0), test_seed = mix_seed(seed, 2, 0);
  GKWOptions gopt;
  gopt.x_knots = hs.x_knots;
  const MarketEnsemble train = simulate_ensemble(pb.market, grid, hs.train_paths, train_seed, threads);
  const DensityData dens = zeta_and_ztilde(pb, train, threads);
  const GKWData g = gkw_decompose(pb, train, dens, gopt, threads);
  out.warnings = g.warnings;
  out.density_method = dens.model.method;
  out.density_normalizer = dens.model.normalizer;
  out.terminal_mean = dens.terminal_mean;
  out.terminal_se = dens.terminal_se;
  pb.capital = hs.capital.value_or(g.mean_term);
  out.capital_source = hs.capital ? "config" : "fitted";
  out.capital = pb.capital;
  const GeneralStrategy robust = strategy_general(pb, g.model);

  std::optional<GeneralStrategy> cmp;
  if (comparator) {
    HedgeProblem pc = *comparator;
    pc.capital = pb.capital;
    const MarketEnsemble tc = simulate_ensemble(pc.market, grid, hs.train_paths, train_seed, threads);
    cmp = strategy_general(pc, gkw_decompose(pc, tc, zeta_and_ztilde(pc, tc, threads), gopt, threads).model);
  }

  const MarketEnsemble test = simulate_ensemble(pb.market, grid, hs.test_paths, test_seed, threads);
  out.J = risk_J(pb, test, reference_vol(), robust.rule, threads);
  if (cmp) out.J_comparator = risk_J(pb, test, reference_vol(), cmp->rule, threads);
  out.admissibility = admissibility(test, robust.rule, threads);

  std::optional<PathNodeFn> phi;
  if (pb.market.k_is_zero() && pb.market.assets == 1) phi = known_integrand(hs.payoff, pb.market);
  for (double c : hs.perturbations) {
    const VolContamination h{[c](double, double) { return AssetMatrix::Constant(1, 1, c); }, pb.r};
    out.gateaux.push_back({c, gateaux_DJ(pb, test, robust.rule, h, phi ? &*phi : nullptr, &g.model, threads)});
  }
  if (phi) out.worst_case_J = risk_J(pb, test, worst_case_sigma(pb, *phi), robust.rule, threads);

  // per-step statistics over the test paths, reduced in path order
  const std::size_t n = grid.steps(), np = test.size();
  std::vector<std::vector<AssetVector>> th(np), tc(np), tf(np);
  parallel_for(np, threads, [&](std::size_t p) {
    const MarketPathView v = test.view(p);
    th[p] = robust.rule.evaluate(v);
    tf[p] = robust.feedback.evaluate(v);
    if (cmp) tc[p] = cmp->rule.evaluate(v);
  });
  double gap2 = 0.0, ref2 = 0.0, corr = 0.0;
  const double inv = 1.0 / static_cast<double>(np);
  for (std::size_t j = 0; j < n; ++j) {
    StepStats s;
    s.t = grid[j];
    double m = 0.0, m2 = 0.0, mc = 0.0, d2 = 0.0;
    for (std::size_t p = 0; p < np; ++p) m += th[p][j](0);
    s.theta_mean = m * inv;
    for (std::size_t p = 0; p < np; ++p) {
      const double a = th[p][j](0);
      m2 += (a - s.theta_mean) * (a - s.theta_mean);
      gap2 += (a - tf[p][j](0)) * (a - tf[p][j](0)), ref2 += a * a;
      if (cmp) {
        const double b = tc[p][j](0);
        mc += b, d2 += (a - b) * (a - b);
      }
    }
    s.theta_sd = std::sqrt(m2 * inv);
    s.comparator_mean = mc * inv;
    s.correction_rms = std::sqrt(d2 * inv);
    corr += s.correction_rms;
    out.steps.push_back(s);
  }
  out.route_gap_rms = ref2 > 0.0 ? std::sqrt(gap2 / ref2) : 0.0;
  if (cmp) out.correction_rms_mean = corr / static_cast<double>(n);
  return out;
}

/// Steps: price path, reconstructed factor, robust estimate, confidence
/// region, volatility band, robust hedge. A failing stage is recorded in
/// `failure`; everything computed before it stays in the report.
inline PipelineReport run_pipeline(const PipelineConfig& cfg, const PipelineOptions& opt = {});

namespace detail {

struct PipelineState {
  ParamDriftModel model;
  TimeGrid grid;
  double x0 = 1.0;
};

inline void stage_input(const PipelineConfig& cfg, PipelineReport& rep, PipelineState& st, SamplePath& prices) {
  st.model = model_from_json(cfg.model, cfg.t_end);
  if (cfg.simulation) {
    rep.source = "simulation";
    rep.alpha_true = cfg.simulation->alpha;
    st.model.validate(cfg.simulation->alpha);
    st.grid = make_grid(cfg.t_end, cfg.grid_n);
    st.x0 = cfg.simulation->x0;
    const SVMarketSpec m = base_market(cfg, st.model, cfg.simulation->alpha, st.x0, cfg.simulation->contamination_eta);
    const SVMarketPaths paths = simulate_sv_market(m, st.grid, SeedSpec{cfg.seed, 0});
    prices = paths.X;
    rep.y_true = paths.Y;
  } else {
    rep.source = "data";
    prices = csv::read_path(cfg.data->prices_csv);
    if (prices.dim() != 1) throw ConfigError("input: one price column expected");
    st.grid = prices.grid();
    if (std::abs(st.grid.t_end() - cfg.t_end) > 1e-12 * cfg.t_end)
      throw ConfigError("input: price data end at t = " + std::to_string(st.grid.t_end()) + " but t_end is " +
                        std::to_string(cfg.t_end));
    st.x0 = prices(0);
  }
}

inline void stage_reconstruct(const PipelineConfig& cfg, PipelineReport& rep, const SamplePath& prices) {
  const VolMap f = vol_map_from_json(cfg.vol_map);
  if (f.name == "constant") throw ConfigError("reconstruct: a constant vol_map cannot be inverted");
  const QVEstimate q = realized_qv(yields_from_prices(prices), cfg.estimation.qv_window);
  rep.qv_window = q.window;
  rep.y_hat = vol_path_from_qv(q, f.f_inverse, cfg.estimation.vol_floor);
}

inline void stage_estimate(const PipelineConfig& cfg, PipelineReport& rep, const PipelineState& st) {
  const SamplePath& y = *rep.y_hat;
  const ParamDriftModel& model = st.model;
  const ParamVector init = cfg.estimation.alpha_init.value_or(ParamVector::Zero(static_cast<Eigen::Index>(model.dim)));
  const EstimateResult pilot = m_estimate(model, InfluenceSpec::score(model), y, init);
  EstimateStage es;
  es.pilot = pilot.alpha_hat;
  EstimateResult fin = pilot;
  if (const auto* s = std::get_if<std::string>(&cfg.estimation.truncation); s && *s == "score") {
    es.influence = "score";
    es.c_source = "none";
  } else {
    double c;
    if (s) {
      c = solve_c_star(model, pilot.alpha_hat(0), cfg.estimation.contamination_r, y.grid()).c_standardized;
      es.c_source = "auto";
    } else {
      c = std::get<double>(cfg.estimation.truncation);
      es.c_source = "config";
    }
    const InfluenceSpec psi = optimal_influence(model, pilot.alpha_hat, c, y.grid());
    fin = m_estimate(model, psi, y, pilot.alpha_hat);
    es.influence = "optimal";
    es.c = c;
  }
  es.alpha_star = fin.alpha_hat;
  es.V = fin.V;
  es.gamma_star = fin.gamma_star;
  es.iterations = fin.iterations;
  es.residual = fin.residual;
  rep.estimate = es;
}

inline void stage_region(const PipelineConfig& cfg, PipelineReport& rep, const PipelineState& st) {
  EstimateResult e;
  e.alpha_hat = rep.estimate->alpha_star;
  e.V = rep.estimate->V;
  rep.region = confidence_region(e, st.model.epsilon, cfg.estimation.region_level);
  if (rep.alpha_true) rep.region_contains_truth = rep.region->contains(*rep.alpha_true);
}

inline void stage_band(const PipelineConfig& cfg, PipelineReport& rep, const PipelineState& st) {
  const VolMap f = vol_map_from_json(cfg.vol_map);
  const TimeGrid& grid = rep.y_hat->grid();
  BandStage b;
  b.boundary = region_probes(*rep.region);
  const std::size_t n = grid.size();
  std::vector<double> lo(n, std::numeric_limits<double>::infinity()), hi(n, -std::numeric_limits<double>::infinity());
  for (const ParamVector& a : b.boundary) {
    const SamplePath y0 = solve_limit_ode(st.model, a, grid);
    for (std::size_t j = 0; j < n; ++j) {
      const double s = f.sigma(y0(j));
      if (!std::isfinite(s)) throw NumericError("band: volatility not finite on the limit path at node " + std::to_string(j));
      lo[j] = std::min(lo[j], s);
      hi[j] = std::max(hi[j], s);
    }
  }
  const SamplePath ystar = solve_limit_ode(st.model, rep.estimate->alpha_star, grid);
  b.sigma_center.resize(n);
  b.half_width.resize(n);
  b.sigma_star.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    b.sigma_center[j] = 0.5 * (lo[j] + hi[j]);
    b.half_width[j] = 0.5 * (hi[j] - lo[j]);
    b.sigma_star[j] = f.sigma(ystar(j));
    b.half_width_max = std::max(b.half_width_max, b.half_width[j]);
  }
  if (cfg.hedge && cfg.hedge->band_width) {
    b.width = *cfg.hedge->band_width;
    b.width_source = "config";
  } else {
    b.width = b.half_width_max;
    b.width_source = "region";
  }
  rep.band = b;
}

inline void stage_hedge(const PipelineConfig& cfg, PipelineReport& rep, const PipelineState& st,
                        const PipelineOptions& opt) {
  const TimeGrid& data_grid = rep.y_hat->grid();
  const BandStage& band = *rep.band;
  HedgeProblem pb;
  pb.market = base_market(cfg, st.model, rep.estimate->alpha_star, st.x0);
  pb.market.sigma0 = interpolated_vol(data_grid, band.sigma_center);
  pb.delta = band.width;
  pb.r = 1.0;
  pb.payoff = payoff_from_json(cfg.hedge->payoff);
  // non-robust comparator: same construction with sigma = sqrt(f(Y0(alpha*)))
  HedgeProblem pc = pb;
  pc.market.sigma0 = interpolated_vol(data_grid, band.sigma_star);
  pc.delta = 0.0;
  rep.hedge = evaluate_hedge(pb, &pc, *cfg.hedge, cfg.t_end, cfg.seed, opt.threads);
}

}  // namespace detail

inline PipelineReport run_pipeline(const PipelineConfig& cfg, const PipelineOptions& opt) {
  PipelineReport rep;
  rep.seed = cfg.seed;
  rep.warnings = cfg.warnings;
  detail::PipelineState st;
  std::string stage = "input";
  const std::string& from = opt.resume_from;
  if (!from.empty() && from != "estimate" && from != "hedge")
    throw ConfigError("pipeline: can resume from \"estimate\" or \"hedge\", not \"" + from + "\"");
  try {
    rep.inputs_hash = inputs_hash(cfg);
    SamplePath prices;
    if (from.empty()) {
      detail::stage_input(cfg, rep, st, prices);
      stage = "reconstruct";
      detail::stage_reconstruct(cfg, rep, prices);
    } else {
      // stored artifacts replace the upstream stages
      st.model = model_from_json(cfg.model, cfg.t_end);
      const std::filesystem::path dir(opt.artifacts_dir);
      const csv::Table t = csv::Table::read_file((dir / "vol_path.csv").string());
      auto column = [&](const std::string& name) {
        const auto it = std::find(t.header.begin(), t.header.end(), name);
        if (it == t.header.end()) throw ConfigError("resume: vol_path.csv has no column '" + name + "'");
        std::vector<double> v;
        for (const auto& r : t.rows) v.push_back(r[static_cast<std::size_t>(it - t.header.begin())]);
        return v;
      };
      const TimeGrid grid(column("s"));
      rep.y_hat = SamplePath::scalar(grid, column("y_hat"));
      const PipelineReport stored = report_from_json(json::parse(read_bytes((dir / "report.json").string())));
      rep.source = stored.source;
      rep.alpha_true = stored.alpha_true;
      rep.qv_window = stored.qv_window;
      st.x0 = cfg.simulation ? cfg.simulation->x0 : csv::read_path(cfg.data->prices_csv)(0);
      if (std::find(t.header.begin(), t.header.end(), "y_true") != t.header.end())
        rep.y_true = SamplePath::scalar(grid, column("y_true"));
      if (from == "hedge") {
        if (!stored.estimate || !stored.region || !stored.band)
          throw ConfigError("resume: report.json lacks the estimate, region or band stage");
        rep.estimate = stored.estimate;
        rep.region = stored.region;
        rep.region_contains_truth = stored.region_contains_truth;
        BandStage b = *stored.band;
        b.sigma_center = column("sigma0");
        b.half_width = column("half_width");
        b.sigma_star = column("sigma_star");
        rep.band = b;
      }
    }
    if (from != "hedge") {
      stage = "estimate";
      detail::stage_estimate(cfg, rep, st);
      stage = "region";
      detail::stage_region(cfg, rep, st);
      stage = "band";
      detail::stage_band(cfg, rep, st);
    }
    if (cfg.hedge) {
      stage = "hedge";
      detail::stage_hedge(cfg, rep, st, opt);
    }
  } catch (const std::exception& e) {
    rep.failure = StageFailure{stage, e.what(), detail::exit_code_of(e)};
  }
  return rep;
}

}  // namespace robhedge::app
