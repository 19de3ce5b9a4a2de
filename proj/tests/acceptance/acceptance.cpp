// One PASS/FAIL line per acceptance criterion; exit status is the number of
// failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "robhedge/app/pipeline.hpp"
#include "robhedge/app/report.hpp"
#include "robhedge/hedge/density.hpp"
#include "robhedge/hedge/gkw.hpp"
#include "robhedge/hedge/pde.hpp"
#include "robhedge/hedge/zero_drift.hpp"
#include "robhedge/robust/estimate.hpp"
#include "robhedge/robust/mc_study.hpp"
#include "robhedge/robust/truncation.hpp"
#include "robhedge/sde/doleans.hpp"
#include "robhedge/sde/simulate.hpp"
#include "robhedge/vol/reconstruct.hpp"

using namespace robhedge;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a = 0, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

const ParamVector kOne = param_vector({1.0});

MCStudyConfig study(ParamDriftModel model, ParamVector alpha, InfluenceSpec psi, std::optional<ContaminationSpec> h,
                    TimeGrid grid, std::size_t replicates, std::uint64_t seed) {
  MCStudyConfig cfg;
  cfg.model = std::move(model);
  cfg.alpha = std::move(alpha);
  cfg.psi = std::move(psi);
  cfg.contamination = std::move(h);
  cfg.grid = std::move(grid);
  cfg.replicates = replicates;
  cfg.seed = seed;
  return cfg;
}

constexpr double kVol = 0.2, kStrike = 1.0;

HedgeProblem call_problem(double band) {
  HedgeProblem pb;
  pb.market.f = VolMap::constant(kVol * kVol);
  pb.delta = band;
  pb.r = 1.0;
  pb.payoff = payoffs::call(kStrike);
  pb.capital = lognormal_call(1.0, kStrike, kVol * kVol);
  return pb;
}

std::vector<double> cumsum0(const std::vector<double>& d) {
  std::vector<double> out(d.size() + 1, 0.0);
  for (std::size_t j = 0; j < d.size(); ++j) out[j + 1] = out[j] + d[j];
  return out;
}

PathNodeFn call_phi() { return integrands::call(kStrike, [](double) { return kVol * kVol; }); }

Outcome culan_limit_law() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto model = models::constant_drift(0.02, 1.0);
  const MCStudyReport r =
      mc_study(study(model, param_vector({0.5}), InfluenceSpec::score(model), std::nullopt, make_grid(1.0, 2000), 4000, 101));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = std::abs(r.mean(0)) <= 3.0 * r.mean_se(0) && std::abs(r.cov(0, 0) - 1.0) <= 0.05 && secs < 60.0;
  return {ok, fmt("mean %.4f (3 SE %.4f), variance %.4f vs 1, %.1f s", r.mean(0), 3.0 * r.mean_se(0), r.cov(0, 0), secs)};
}

Outcome contamination_shift() {
  const auto model = models::constant_drift(0.02, 1.0);
  const MCStudyReport r = mc_study(study(model, param_vector({0.5}), InfluenceSpec::constant(kOne),
                                         ContaminationSpec::constant(0.5), make_grid(1.0, 2000), 4000, 102));
  return {std::abs(r.mean(0) - 0.5) <= 3.0 * r.mean_se(0), fmt("mean %.4f vs 0.5 (3 SE %.4f)", r.mean(0), 3.0 * r.mean_se(0))};
}

Outcome c_star_closed_form() {
  const auto model = models::constant_drift(0.02, 1.0);
  double worst = 0.0;
  for (double r : {0.5, 1.0, 2.0})
    worst = std::max(worst, std::abs(solve_c_star(model, 1.0, r, make_grid(1.0, 200)).c - 1.0 / (1.0 + r * r)));
  return {worst < 1e-8, fmt("max |c* - 1/(1+r^2)| = %.2e", worst)};
}

Outcome a_star_solver() {
  double worst = 0.0;
  const auto konst = models::constant_drift(0.02, 1.0);
  for (double c : {1.0, 1.5, 4.0}) worst = std::max(worst, solve_A_star(konst, kOne, c, make_grid(1.0, 500)).residual);
  const auto ou = models::ou_drift(0.02, 1.0);
  const LimitPath lp = make_limit_path(ou, param_vector({1.0, 1.0}), make_grid(1.0, 500));
  const double thr = detail::feasibility_threshold(lp);
  for (double mult : {1.05, 1.5, 3.0}) worst = std::max(worst, solve_A_star(lp, mult * thr).residual);
  int refused = 0;
  for (double c : {0.3, 0.9, 0.999}) {
    try {
      solve_A_star(konst, kOne, c, make_grid(1.0, 500));
    } catch (const InfeasibleTruncation&) {
      ++refused;
    }
  }
  return {worst < 1e-10 && refused == 3, fmt("max residual %.2e; %.0f of 3 levels below 1 refused", worst, refused)};
}

// On the constant-drift model the standardizing equation needs c >= 1/t, so
// the levels are checked on a horizon where all of them are feasible.
Outcome sensitivity_bound() {
  const double t = 4.0;
  const auto model = models::constant_drift(0.02, t);
  const TimeGrid g = make_grid(t, 400);
  double worst_margin = 1e300;
  for (double c : {0.3, 0.5, 0.9}) {
    const InfluenceSpec psi = optimal_influence(model, kOne, c, g);
    worst_margin = std::min(worst_margin, c - gross_error_sensitivity(model, psi, kOne, g));
  }
  return {worst_margin >= 0.0, fmt("min (c - gamma*) = %.3g over c in {0.3, 0.5, 0.9}, horizon %.0f", worst_margin, t)};
}

Outcome minimax_dominance() {
  // ramp model a = alpha (1 + s): gradient varies, so the clip is active
  const auto model = models::linear_in_parameter({[](double s, double) { return 1.0 + s; }}, 0.05, 1.0);
  const TimeGrid g = make_grid(1.0, 1000);
  const LimitPath lp = make_limit_path(model, kOne, g);
  const CStarResult cs = solve_c_star(lp, 1.0);
  const InfluenceSpec robust = optimal_influence(model, kOne, cs.c_standardized, g);
  const InfluenceSpec mle = InfluenceSpec::score(model);
  double sup_r = 0.0, sup_m = 0.0;
  const double width = 1.0 / 50.0, amp = 1.0 / width;
  for (int i = 0; i < 10; ++i)
    for (double sign : {1.0, -1.0}) {
      const double lo = (1.0 - width) * i / 9.0;
      const ContaminationSpec h{[=](const PathPrefix& x, const ParamVector&) {
                                  return (x.time() >= lo && x.time() <= lo + width) ? sign * amp : 0.0;
                                },
                                amp};
      sup_r = std::max(sup_r, risk_functional(lp, robust, h, kOne));
      sup_m = std::max(sup_m, risk_functional(lp, mle, h, kOne));
    }
  return {sup_r <= sup_m + 1e-6, fmt("sup D robust %.5f, score %.5f", sup_r, sup_m)};
}

Outcome region_coverage() {
  const auto model = models::linear_in_parameter({[](double s, double) { return 1.0 + s; }}, 0.02, 1.0);
  const TimeGrid g = make_grid(1.0, 500);
  const double c = solve_c_star(model, 1.0, 1.0, g).c_standardized;
  MCStudyConfig cfg = study(model, kOne, optimal_influence(model, kOne, c, g), std::nullopt, g, 2000, 107);
  const MCStudyReport r = mc_study(cfg);
  return {r.coverage >= 0.93 && r.coverage <= 0.97, fmt("coverage %.4f over %.0f replicates", r.coverage, 2000)};
}

Outcome yor_identity() {
  const TimeGrid g = make_grid(1.0, 1000);
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 100; ++k) {
    const SeedSpec seed{108, k};
    const auto w1 = brownian_increments(g, seed, 0), w2 = brownian_increments(g, seed, 1);
    std::vector<double> dm(g.steps()), dn(g.steps());
    for (std::size_t j = 0; j < g.steps(); ++j) {
      dm[j] = 0.8 * w1[j];
      dn[j] = -0.5 * w1[j] + 1.3 * w2[j];
    }
    const SamplePath m = SamplePath::scalar(g, cumsum0(dm)), n = SamplePath::scalar(g, cumsum0(dn));
    const SamplePath qm = realized_bracket(m, m), qn = realized_bracket(n, n), qmn = realized_bracket(m, n);
    std::vector<double> sum(g.size()), qsum(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) {
      sum[j] = m(j) + n(j) + qmn(j);
      qsum[j] = qm(j) + qn(j) + 2.0 * qmn(j);
    }
    const SamplePath em = dolean_exp(m, qm), en = dolean_exp(n, qn);
    const SamplePath es = dolean_exp(SamplePath::scalar(g, sum), SamplePath::scalar(g, qsum));
    for (std::size_t j = 0; j < g.size(); ++j) worst = std::max(worst, std::abs(em(j) * en(j) - es(j)));
  }
  return {worst < 1e-10, fmt("max |E(M)E(N) - E(M+N+[M,N])| = %.2e", worst)};
}

Outcome realized_qv_check() {
  const TimeGrid g = make_grid(1.0, 10000);
  double total = 0.0;
  for (std::uint64_t k = 0; k < 100; ++k) {
    const auto dw = brownian_increments(g, SeedSpec{109, k});
    std::vector<double> r(g.size(), 0.0);
    for (std::size_t j = 0; j < g.steps(); ++j) r[j + 1] = r[j] + 0.3 * dw[j];
    const QVEstimate q = realized_qv(SamplePath::scalar(g, std::move(r)));
    total += std::abs(q.cumulative.back() - 0.09) / 0.09;
  }
  return {total / 100.0 < 0.05, fmt("mean relative error %.4f", total / 100.0)};
}

Outcome zero_drift_optimum() {
  const HedgeProblem pb = call_problem(0.05);
  const MarketEnsemble e = simulate_ensemble(pb.market, make_grid(1.0, 100), 4000, 110);
  const auto th = strategy_zero_drift(pb, call_phi()).rule;
  double worst_z = 0.0;
  for (int i = 0; i < 10; ++i) {
    const double c = -1.0 + 2.0 * i / 9.0;
    const VolContamination h{[c](double t, double) { return AssetMatrix::Constant(1, 1, c * std::cos(3.0 * t)); }, 1.0};
    const GateauxEstimate d = gateaux_DJ_direct(pb, e, th, h);
    worst_z = std::max(worst_z, std::abs(d.value) / d.std_err);
  }
  // finite-difference oracle at a non-optimal strategy
  const auto off = StrategyRule::feedback(
      [](const MarketPathView& v, std::size_t j) { return AssetVector::Constant(1, 0.3 * v.x(j)(0)); }, "0.3 X");
  const VolContamination h{[](double, double) { return AssetMatrix::Constant(1, 1, 0.8); }, 1.0};
  const GateauxEstimate dj = gateaux_DJ_analytic(pb, e, off, h, call_phi());
  const double step = 1e-3;
  const double fd = (risk_J(pb, e, perturbed_vol(h, step), off).value - risk_J(pb, e, reference_vol(), off).value) / step;
  const double gap = std::abs(fd - dj.value), allowed = 0.05 * std::abs(dj.value) + 3.0 * dj.std_err;
  return {worst_z <= 3.0 && gap <= allowed,
          fmt("max |DJ|/SE %.2f over 10 h; FD gap %.2e (allowed %.2e)", worst_z, gap, allowed)};
}

Outcome worst_case_check() {
  const HedgeProblem pb = call_problem(0.05);
  const MarketEnsemble e = simulate_ensemble(pb.market, make_grid(1.0, 50), 4000, 111);
  const std::vector<StrategyRule> rules{
      strategy_zero_drift(pb, call_phi()).rule,
      StrategyRule::feedback([](const MarketPathView& v, std::size_t) { return AssetVector::Constant(1, 0.6 * v.x(0)(0)); },
                             "0.6 X0")};
  double worst = -1e300;
  for (const auto& th : rules) {
    const double jw = risk_J(pb, e, worst_case_sigma(pb, call_phi()), th).value;
    for (int i = 0; i < 9; ++i) {
      const double u = -1.0 + 2.0 * i / 8.0;
      const VolContamination h{[u](double, double) { return AssetMatrix::Constant(1, 1, u); }, 1.0};
      const MCEstimate j = risk_J(pb, e, perturbed_vol(h, 0.05), th);
      worst = std::max(worst, j.value - 3.0 * j.std_err - jw);
    }
  }
  return {worst <= 0.0, fmt("max over grid of J - 3 SE - J(worst) = %.3e", worst)};
}

Outcome general_reduces_to_zero_drift() {
  const HedgeProblem pb = call_problem(0.05);
  const TimeGrid grid = make_grid(1.0, 50);
  const MarketEnsemble train = simulate_ensemble(pb.market, grid, 20000, 112);
  const GKWData g = gkw_decompose(pb, train, zeta_and_ztilde(pb, train), GKWOptions{});
  const GeneralStrategy s = strategy_general(pb, g.model);
  const auto oracle = strategy_zero_drift(pb, call_phi()).rule;
  const MarketEnsemble test = simulate_ensemble(pb.market, grid, 500, 113);
  double num = 0.0, den = 0.0;
  for (std::size_t p = 0; p < test.size(); ++p) {
    const auto a = s.rule.evaluate(test.view(p)), b = oracle.evaluate(test.view(p));
    for (std::size_t j = 0; j < grid.steps(); ++j) num += std::pow(a[j](0) - b[j](0), 2), den += b[j](0) * b[j](0);
  }
  const double rms = std::sqrt(num / den);
  return {rms < 0.10, fmt("RMS relative error %.4f", rms)};
}

// Interior: spot in [0.75, 1.5], factor nodes off the boundary, t <= 0.9 (the
// payoff kink is unresolved on the last steps). Relative error on the scale
// max(exact, 1e-3), since deep out-of-the-money prices underflow.
Outcome pde_oracle() {
  SVMarketSpec m;
  m.f = VolMap::exponential(0.04);
  PdeLattice lat;
  lat.t_steps = 200, lat.x_max = 4.0, lat.nx = 801, lat.y_min = -1.0, lat.y_max = 1.0, lat.ny = 9;
  const PdeSurface s = sv_pde_price(m, [](double x, double) { return std::max(x - kStrike, 0.0); }, lat);
  double worst = 0.0, worst_material = 0.0;
  for (std::size_t i = 0; i <= 180; ++i)
    for (std::size_t a = 0; a < lat.nx; ++a) {
      if (s.x[a] < 0.75 || s.x[a] > 1.5) continue;
      for (std::size_t b = 1; b + 1 < lat.ny; ++b) {
        const double exact = lognormal_call(s.x[a], kStrike, m.f.f(s.y[b]) * (1.0 - s.t[i]));
        const double err = std::abs(s.value(i, a, b) - exact);
        worst = std::max(worst, err / std::max(exact, 1e-3));
        if (exact >= 1e-3) worst_material = std::max(worst_material, err / exact);
      }
    }
  return {worst < 0.005, fmt("max scaled error %.5f (pure relative where price >= 1e-3: %.5f)", worst, worst_material)};
}

Outcome density_normalization() {
  SVMarketSpec konst;
  konst.f = VolMap::constant(kVol * kVol);
  konst.k = [](double, double) { return AssetVector::Constant(1, 0.5); };
  konst.k_deterministic = true;
  SVMarketSpec state;
  state.f = VolMap::exponential(0.04);
  state.vol_drift = [](double, double y) { return -y; };
  state.vol_noise = 0.3;
  state.k = [](double, double y) { return AssetVector::Constant(1, 0.3 * std::exp(0.5 * y)); };
  std::string d;
  bool ok = true;
  for (const SVMarketSpec& m : {konst, state}) {
    HedgeProblem pb;
    pb.market = m;
    pb.payoff = payoffs::asset();
    const DensityData z = zeta_and_ztilde(pb, simulate_ensemble(m, make_grid(1.0, 50), 10000, 114));
    ok = ok && std::abs(z.terminal_mean - 1.0) <= 3.0 * z.terminal_se;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s%s: mean %.4f (3 SE %.4f)", d.empty() ? "" : "; ", z.model.method.c_str(),
                  z.terminal_mean, 3.0 * z.terminal_se);
    d += buf;
  }
  return {ok, d};
}

Outcome pipeline_determinism() {
  using app::json;
  json cfg = json::parse(R"({"schema_version": 1, "seed": 115, "simulation": {"alpha": [0.5]},
      "model": {"type": "constant", "epsilon": 0.3}, "vol_map": {"type": "exp", "v0": 0.04}, "grid": {"n": 5000},
      "hedge": {"payoff": {"type": "call", "strike": 1.0}, "n_steps": 25, "train_paths": 2000, "test_paths": 1000}})");
  const app::PipelineConfig c = app::parse_config(cfg);
  const auto base = std::filesystem::temp_directory_path() / "robhedge_acceptance";
  std::filesystem::remove_all(base);
  app::emit_report(app::run_pipeline(c, {1, "", ""}), c, base / "t1");
  app::emit_report(app::run_pipeline(c, {8, "", ""}), c, base / "t8");
  const std::string one = app::read_bytes((base / "t1" / "report.json").string());
  const std::string eight = app::read_bytes((base / "t8" / "report.json").string());
  const bool same = one == eight;
  return {same && one.find("\"status\": \"ok\"") != std::string::npos,
          fmt("report.json %.0f bytes, ", static_cast<double>(one.size())) + (same ? "byte-identical" : "differs")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"limit law of the score estimate", culan_limit_law},
      {"contamination shift of a constant influence", contamination_shift},
      {"optimal truncation closed form", c_star_closed_form},
      {"standardizing matrix solver", a_star_solver},
      {"gross-error sensitivity bound", sensitivity_bound},
      {"minimax dominance of the optimal truncation", minimax_dominance},
      {"confidence region coverage", region_coverage},
      {"Yor identity", yor_identity},
      {"realized quadratic variation", realized_qv_check},
      {"zero-drift hedging optimum", zero_drift_optimum},
      {"worst-case volatility", worst_case_check},
      {"regression strategy reduces to the zero-drift formula", general_reduces_to_zero_drift},
      {"pricing PDE against frozen-volatility prices", pde_oracle},
      {"density normalization", density_normalization},
      {"pipeline determinism across thread counts", pipeline_determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures;
}
