#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include "robhedge/app/pipeline.hpp"
#include "robhedge/app/report.hpp"
#include "robhedge/robust/mc_study.hpp"

namespace robhedge::app {

/// Flags shared by every subcommand; explicit flags override the config.
struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  std::optional<std::string> out;
  std::string config;
};

/// Exit code for an exception escaping a command: 2 for bad input, 3 for a
/// numerical failure.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return 3;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const std::invalid_argument*>(&e) ||
      dynamic_cast<const json::exception*>(&e))
    return 2;
  return 3;
}

/// Runs `body`, mapping exceptions to exit codes with one line on `err`.
inline int guarded(const std::string& command, const std::function<int()>& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const std::exception& e) {
    err << command << ": " << e.what() << "\n";
    return exit_code_for(e);
  }
}

namespace detail {

inline PipelineConfig load_for_command(const GlobalOptions& g) {
  if (g.config.empty()) throw ConfigError("--config is required");
  PipelineConfig cfg = load_config(g.config);
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.raw["seed"] = *g.seed;
  }
  return cfg;
}

inline std::filesystem::path output_dir(const GlobalOptions& g, const PipelineConfig& cfg) {
  if (g.out) return *g.out;
  const std::filesystem::path p(cfg.output_dir);
  return p.is_absolute() ? p : cfg.base_dir / p;
}

inline const ParamVector& require_alpha(const PipelineConfig& cfg) {
  if (cfg.simulation) return cfg.simulation->alpha;
  if (cfg.estimation.alpha_init) return *cfg.estimation.alpha_init;
  throw ConfigError("needs simulation.alpha or estimation.alpha_init");
}

inline void write_json(const std::filesystem::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

inline json grid_json(const TimeGrid& g) { return {{"t_end", g.t_end()}, {"n_steps", g.steps()}}; }

/// Standalone market for the hedge and pde commands: constant sigma0, factor
/// drift at the configured parameter.
inline HedgeProblem standalone_problem(const PipelineConfig& cfg) {
  if (!cfg.hedge) throw ConfigError("config has no 'hedge' section");
  const HedgeSpec& hs = *cfg.hedge;
  if (!hs.sigma0) throw ConfigError("hedge.sigma0 is required");
  const ParamDriftModel model = model_from_json(cfg.model, cfg.t_end);
  HedgeProblem pb;
  pb.market = base_market(cfg, model, require_alpha(cfg), cfg.simulation ? cfg.simulation->x0 : 1.0);
  pb.market.sigma0 = [s = *hs.sigma0](double, double) { return AssetMatrix::Constant(1, 1, s); };
  pb.delta = hs.band_width.value_or(0.0);
  pb.r = 1.0;
  pb.payoff = payoff_from_json(hs.payoff);
  return pb;
}

}  // namespace detail

/// Simulated market: prices.csv, yields.csv, vol_factor.csv and a manifest.
inline int cmd_simulate(const GlobalOptions& g) {
  const PipelineConfig cfg = detail::load_for_command(g);
  if (!cfg.simulation) throw ConfigError("config has no 'simulation' section");
  const ParamDriftModel model = model_from_json(cfg.model, cfg.t_end);
  model.validate(cfg.simulation->alpha);
  const TimeGrid grid = make_grid(cfg.t_end, cfg.grid_n);
  const SVMarketSpec m =
      detail::base_market(cfg, model, cfg.simulation->alpha, cfg.simulation->x0, cfg.simulation->contamination_eta);
  const SVMarketPaths paths = simulate_sv_market(m, grid, SeedSpec{cfg.seed, 0});
  const auto dir = detail::output_dir(g, cfg);
  std::filesystem::create_directories(dir);
  csv::write_path(paths.X, (dir / "prices.csv").string());
  csv::write_path(paths.R, (dir / "yields.csv").string());
  csv::write_path(paths.Y, (dir / "vol_factor.csv").string());
  detail::write_json(dir / "manifest.json", {{"seed", cfg.seed},
                                             {"grid", detail::grid_json(grid)},
                                             {"spec_hash", inputs_hash(cfg)},
                                             {"files", {"prices.csv", "yields.csv", "vol_factor.csv"}}});
  return 0;
}

/// Reconstructed volatility factor from the configured price source.
inline int cmd_reconstruct(const GlobalOptions& g) {
  const PipelineConfig cfg = detail::load_for_command(g);
  PipelineReport rep;
  detail::PipelineState st;
  SamplePath prices;
  detail::stage_input(cfg, rep, st, prices);
  detail::stage_reconstruct(cfg, rep, prices);
  const auto dir = detail::output_dir(g, cfg);
  std::filesystem::create_directories(dir);
  vol_path_table(rep, vol_map_from_json(cfg.vol_map)).write_file((dir / "vol_path.csv").string());
  detail::write_json(dir / "manifest.json", {{"seed", cfg.seed},
                                             {"grid", detail::grid_json(rep.y_hat->grid())},
                                             {"spec_hash", inputs_hash(cfg)},
                                             {"qv_window", rep.qv_window},
                                             {"files", {"vol_path.csv"}}});
  return 0;
}

/// Robust estimate on a factor path: `path_csv` (SamplePath format) when
/// given, the reconstructed path from the configured price source otherwise.
inline int cmd_estimate(const GlobalOptions& g, const std::optional<std::string>& path_csv) {
  const PipelineConfig cfg = detail::load_for_command(g);
  PipelineReport rep;
  detail::PipelineState st;
  st.model = model_from_json(cfg.model, cfg.t_end);
  if (path_csv) {
    rep.y_hat = csv::read_path(*path_csv);
  } else {
    SamplePath prices;
    detail::stage_input(cfg, rep, st, prices);
    detail::stage_reconstruct(cfg, rep, prices);
  }
  detail::stage_estimate(cfg, rep, st);
  detail::stage_region(cfg, rep, st);
  json j = report_to_json(rep);
  json out{{"estimate", j["estimate"]}, {"region", j["region"]}, {"epsilon", st.model.epsilon},
           {"warnings", cfg.warnings}};
  const auto dir = detail::output_dir(g, cfg);
  std::filesystem::create_directories(dir);
  detail::write_json(dir / "estimate.json", out);
  return 0;
}

/// Optimal truncation for a scalar parameter at the configured alpha.
inline int cmd_ctune(const GlobalOptions& g) {
  const PipelineConfig cfg = detail::load_for_command(g);
  const ParamDriftModel model = model_from_json(cfg.model, cfg.t_end);
  if (model.dim != 1) throw ConfigError("the closed-form truncation needs a scalar parameter");
  const ParamVector& alpha = detail::require_alpha(cfg);
  const TimeGrid grid = make_grid(cfg.t_end, cfg.grid_n);
  const double r = cfg.estimation.contamination_r;
  const CStarResult cs = solve_c_star(model, alpha(0), r, grid);
  const AStarResult as = solve_A_star(model, alpha, cs.c_standardized, grid);
  const InfluenceSpec psi = optimal_influence(model, alpha, cs.c_standardized, grid);
  const json out{{"r", r},
                 {"alpha", detail::vec_json(alpha)},
                 {"c_star", cs.c},
                 {"c_standardized", cs.c_standardized},
                 {"gamma0", cs.gamma0},
                 {"c_residual", cs.residual},
                 {"A", detail::mat_json(as.A)},
                 {"A_residual", as.residual},
                 {"feasibility_threshold", as.feasibility_threshold},
                 {"psi", {{"label", psi.label}, {"gamma_star", gross_error_sensitivity(model, psi, alpha, grid)}}}};
  const auto dir = detail::output_dir(g, cfg);
  std::filesystem::create_directories(dir);
  detail::write_json(dir / "ctune.json", out);
  return 0;
}

/// Monte-Carlo study of the estimator on directly simulated factor paths.
inline int cmd_mc(const GlobalOptions& g) {
  const PipelineConfig cfg = detail::load_for_command(g);
  if (!cfg.simulation) throw ConfigError("config has no 'simulation' section");
  MCStudyConfig mc;
  mc.model = model_from_json(cfg.model, cfg.t_end);
  mc.alpha = cfg.simulation->alpha;
  mc.grid = make_grid(cfg.t_end, cfg.grid_n);
  mc.replicates = cfg.replicates;
  mc.seed = cfg.seed;
  mc.threads = g.threads;
  mc.alpha_init = cfg.estimation.alpha_init;
  mc.region_level = cfg.estimation.region_level;
  if (cfg.simulation->contamination_eta != 0.0)
    mc.contamination = ContaminationSpec::constant(cfg.simulation->contamination_eta);
  std::optional<double> c;
  if (const auto* s = std::get_if<std::string>(&cfg.estimation.truncation); s && *s == "score") {
    mc.psi = InfluenceSpec::score(mc.model);
  } else {
    c = s ? solve_c_star(mc.model, mc.alpha(0), cfg.estimation.contamination_r, mc.grid).c_standardized
          : std::get<double>(cfg.estimation.truncation);
    mc.psi = optimal_influence(mc.model, mc.alpha, *c, mc.grid);
  }
  const MCStudyReport rep = mc_study(mc);
  const auto dir = detail::output_dir(g, cfg);
  std::filesystem::create_directories(dir);
  json failed = json::array();
  for (auto k : rep.failed) failed.push_back(k);
  detail::write_json(dir / "mc_report.json", {{"seed", cfg.seed},
                                              {"replicates", rep.replicates},
                                              {"failures", rep.failures},
                                              {"failed", failed},
                                              {"influence", mc.psi.label},
                                              {"c", c ? json(*c) : json(nullptr)},
                                              {"mean", detail::vec_json(rep.mean)},
                                              {"mean_se", detail::vec_json(rep.mean_se)},
                                              {"cov", detail::mat_json(rep.cov)},
                                              {"skewness", detail::vec_json(rep.skewness)},
                                              {"excess_kurtosis", detail::vec_json(rep.excess_kurtosis)},
                                              {"coverage", rep.coverage}});
  csv::Table t;
  for (Eigen::Index i = 0; i < mc.alpha.size(); ++i) t.header.push_back("z" + std::to_string(i + 1));
  for (const ParamVector& z : rep.standardized) t.rows.emplace_back(z.data(), z.data() + z.size());
  t.write_file((dir / "standardized.csv").string());
  return 0;
}

/// Robust strategy for a standalone problem with constant sigma0.
inline int cmd_hedge(const GlobalOptions& g) {
  const PipelineConfig cfg = detail::load_for_command(g);
  const HedgeProblem pb = detail::standalone_problem(cfg);
  PipelineReport rep;
  rep.hedge = evaluate_hedge(pb, nullptr, *cfg.hedge, cfg.t_end, cfg.seed, g.threads);
  const HedgeStage& h = *rep.hedge;
  json dj = json::array();
  for (const auto& r : h.gateaux) dj.push_back({{"c", r.c}, {"DJ", r.dj.value}, {"SE", r.dj.std_err}, {"form", r.dj.form}});
  const json full = report_to_json(rep)["hedge"];
  const json out{{"J", h.J.value},
                 {"SE", h.J.std_err},
                 {"DJ_grid", dj},
                 {"worst_case_J", h.worst_case_J ? json(h.worst_case_J->value) : json(nullptr)},
                 {"strategy_stats",
                  {{"capital", h.capital},
                   {"capital_source", h.capital_source},
                   {"admissibility", full["admissibility"]},
                   {"route_gap_rms", h.route_gap_rms},
                   {"density", full["density"]},
                   {"warnings", h.warnings}}}};
  const auto dir = detail::output_dir(g, cfg);
  std::filesystem::create_directories(dir);
  detail::write_json(dir / "hedge_report.json", out);
  strategy_table(rep).write_file((dir / "strategy.csv").string());
  return 0;
}

/// Value surface at t = 0 from the pricing PDE.
inline int cmd_pde(const GlobalOptions& g) {
  const PipelineConfig cfg = detail::load_for_command(g);
  const HedgeProblem pb = detail::standalone_problem(cfg);
  const PdeSurface s = sv_pde_price(pb.market, terminal_payoff_from_json(cfg.hedge->payoff), cfg.pde);
  csv::Table t;
  t.header = {"x", "y", "v", "dvdx", "dvdy"};
  for (std::size_t a = 0; a < s.x.size(); ++a)
    for (std::size_t b = 0; b < s.y.size(); ++b) {
      const std::size_t i = s.index(0, a, b);
      t.rows.push_back({s.x[a], s.y[b], s.v[i], s.dvdx[i], s.dvdy[i]});
    }
  const auto dir = detail::output_dir(g, cfg);
  std::filesystem::create_directories(dir);
  t.write_file((dir / "surface.csv").string());
  return 0;
}

/// Full pipeline; artifacts of a failed stage are still written. With
/// `resume_from`, stored artifacts in the output directory replace the
/// upstream stages.
inline int cmd_pipeline(const GlobalOptions& g, const std::string& resume_from = "", std::ostream& err = std::cerr) {
  const PipelineConfig cfg = detail::load_for_command(g);
  const auto dir = detail::output_dir(g, cfg);
  for (const auto& w : cfg.warnings) err << "warning: " << w << "\n";
  const PipelineReport rep = run_pipeline(cfg, {g.threads, resume_from, dir.string()});
  emit_report(rep, cfg, dir);
  if (rep.failure) {
    err << "pipeline: stage '" << rep.failure->stage << "' failed: " << rep.failure->message << "\n";
    return rep.failure->exit_code;
  }
  return 0;
}

}  // namespace robhedge::app
