#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "robhedge/app/commands.hpp"

namespace fs = std::filesystem;
using namespace robhedge;
using namespace robhedge::app;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("robhedge_test_app_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) { return read_bytes(p.string()); }

json minimal_sim() {
  return json::parse(R"({"schema_version": 1, "simulation": {"alpha": [0.5]},
                          "model": {"type": "constant", "epsilon": 0.3}})");
}

/// Small end-to-end problem: constant drift factor, call hedge on a coarse grid.
json small_pipeline() {
  json j = minimal_sim();
  j["seed"] = 11;
  j["grid"] = {{"n", 4000}};
  j["vol_map"] = {{"type", "exp"}, {"v0", 0.04}};
  j["hedge"] = json::parse(R"({"payoff": {"type": "call", "strike": 1.0}, "n_steps": 20,
                                "train_paths": 1500, "test_paths": 600, "perturbations": [-1, 1]})");
  return j;
}

std::string config_error(const json& doc, const fs::path& base = ".") {
  try {
    parse_config(doc, base);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, MinimalConfigFillsDefaults) {
  const PipelineConfig c = parse_config(minimal_sim());
  EXPECT_EQ(c.grid_n, 1000u);
  EXPECT_EQ(c.replicates, 2000u);
  EXPECT_DOUBLE_EQ(c.t_end, 1.0);
  EXPECT_EQ(std::get<std::string>(c.estimation.truncation), "auto");
  EXPECT_FALSE(c.hedge.has_value());
  EXPECT_TRUE(c.warnings.empty());
}

TEST(Config, BothSourcesIsAnError) {
  const fs::path dir = scratch("both");
  std::ofstream(dir / "p.csv") << "s,x1\n0,1\n1,1\n";
  json j = minimal_sim();
  j["data"] = {{"prices_csv", "p.csv"}};
  EXPECT_NE(config_error(j, dir).find("not both"), std::string::npos);
}

TEST(Config, UnknownFieldWarnsOnly) {
  json j = minimal_sim();
  j["future_option"] = 3;
  j["model"]["note"] = "x";
  const PipelineConfig c = parse_config(j);
  ASSERT_EQ(c.warnings.size(), 2u);
  EXPECT_NE(c.warnings[0].find("future_option"), std::string::npos);
  EXPECT_NE(c.warnings[1].find("model.note"), std::string::npos);
}

TEST(Config, MissingFieldsAreListedTogether) {
  const std::string msg = config_error(json::object({{"hedge", json::object()}}));
  for (const char* field : {"schema_version", "model", "data | simulation"})
    EXPECT_NE(msg.find(field), std::string::npos) << msg;
}

TEST(Config, SchemaVersionAndFilesAreChecked) {
  json j = minimal_sim();
  j["schema_version"] = 2;
  EXPECT_NE(config_error(j).find("schema_version"), std::string::npos);
  json d = minimal_sim();
  d.erase("simulation");
  d["data"] = {{"prices_csv", "does_not_exist.csv"}};
  EXPECT_NE(config_error(d, scratch("missing")).find("does not exist"), std::string::npos);
}

TEST(Config, AutoTruncationNeedsScalarParameter) {
  json j = minimal_sim();
  j["model"] = {{"type", "ou"}, {"epsilon", 0.1}};
  j["simulation"]["alpha"] = {1.0, 1.0};
  EXPECT_NE(config_error(j).find("scalar"), std::string::npos);
}

TEST(Report, EmptyStrategyWritesHeaderOnly) {
  const fs::path dir = scratch("empty");
  const PipelineConfig cfg = parse_config(minimal_sim());
  PipelineReport r;
  r.source = "simulation";
  emit_report(r, cfg, dir);
  EXPECT_EQ(slurp(dir / "strategy.csv"), "t,theta_mean,theta_sd,comparator_mean,correction_rms\n");
  for (const char* f : {"report.json", "vol_path.csv", "manifest.json"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
}

TEST(Report, RoundTripsThroughJson) {
  PipelineConfig cfg = parse_config(small_pipeline());
  const PipelineReport r = run_pipeline(cfg);
  ASSERT_TRUE(r.ok()) << r.failure->message;
  const json once = report_to_json(r);
  const json back = json::parse(once.dump(2));
  EXPECT_EQ(report_to_json(report_from_json(back)), once);
  // doubles survive the text form to the last bit
  const double j_value = back["hedge"]["J"]["value"].get<double>();
  EXPECT_EQ(j_value, r.hedge->J.value);
  EXPECT_EQ(back["estimate"]["alpha_star"][0].get<double>(), r.estimate->alpha_star(0));
}

TEST(Report, ManifestHashTracksInputs) {
  const fs::path dir = scratch("hash");
  const std::string csv = "s,x1\n0,1\n0.5,1.01\n1,0.99\n";
  std::ofstream(dir / "p.csv") << csv;
  json base = json::parse(R"({"schema_version": 1, "data": {"prices_csv": "p.csv"},
                               "model": {"type": "constant", "epsilon": 0.1}, "output_dir": "a"})");
  const std::string h0 = inputs_hash(parse_config(base, dir));

  json moved = base;
  moved["output_dir"] = "b";
  EXPECT_EQ(inputs_hash(parse_config(moved, dir)), h0) << "output placement is not an input";
  json reordered = json::parse(R"({"model": {"epsilon": 0.1, "type": "constant"}, "output_dir": "a",
                                    "data": {"prices_csv": "p.csv"}, "schema_version": 1})");
  EXPECT_EQ(inputs_hash(parse_config(reordered, dir)), h0);

  json seeded = base;
  seeded["seed"] = 5;
  EXPECT_NE(inputs_hash(parse_config(seeded, dir)), h0);
  json eps = base;
  eps["model"]["epsilon"] = 0.2;
  EXPECT_NE(inputs_hash(parse_config(eps, dir)), h0);
  std::ofstream(dir / "p.csv") << "s,x1\n0,1\n0.5,1.01\n1,0.98\n";
  EXPECT_NE(inputs_hash(parse_config(base, dir)), h0) << "data bytes are an input";
}

TEST(Pipeline, ByteIdenticalAcrossRunsAndThreadCounts) {
  const PipelineConfig cfg = parse_config(small_pipeline());
  const fs::path a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
  emit_report(run_pipeline(cfg, {1, "", ""}), cfg, a);
  emit_report(run_pipeline(cfg, {1, "", ""}), cfg, b);
  emit_report(run_pipeline(cfg, {8, "", ""}), cfg, c);
  for (const char* f : {"report.json", "strategy.csv", "vol_path.csv", "manifest.json"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(c / f)) << f;
  }
}

TEST(Pipeline, ResumingFromStoredArtifactsIsBitExact) {
  const PipelineConfig cfg = parse_config(small_pipeline());
  const fs::path full = scratch("resume_full");
  emit_report(run_pipeline(cfg), cfg, full);
  for (const std::string stage : {"estimate", "hedge"}) {
    const fs::path dir = scratch("resume_" + stage);
    for (const char* f : {"report.json", "vol_path.csv"}) fs::copy_file(full / f, dir / f);
    const PipelineReport r = run_pipeline(cfg, {1, stage, dir.string()});
    ASSERT_TRUE(r.ok()) << r.failure->message;
    emit_report(r, cfg, dir);
    for (const char* f : {"report.json", "strategy.csv", "vol_path.csv", "manifest.json"})
      EXPECT_EQ(slurp(full / f), slurp(dir / f)) << stage << ": " << f;
  }
}

TEST(Pipeline, FailureNamesStageAndKeepsEarlierArtifacts) {
  json j = small_pipeline();
  j["hedge"]["perturbations"] = {2.0};
  const PipelineConfig cfg = parse_config(j);
  const PipelineReport r = run_pipeline(cfg);
  ASSERT_TRUE(r.failure.has_value());
  EXPECT_EQ(r.failure->stage, "hedge");
  EXPECT_EQ(r.failure->exit_code, 2);
  EXPECT_TRUE(r.estimate && r.region && r.band);
  const fs::path dir = scratch("failure");
  emit_report(r, cfg, dir);
  const json back = json::parse(slurp(dir / "report.json"));
  EXPECT_EQ(back["status"], "failed");
  EXPECT_EQ(back["failure"]["stage"], "hedge");
  EXPECT_TRUE(back.contains("band"));

  json infeasible = minimal_sim();
  infeasible["estimation"] = {{"truncation", 0.5}};  // feasibility needs c >= 1 here
  const PipelineReport n = run_pipeline(parse_config(infeasible));
  ASSERT_TRUE(n.failure.has_value());
  EXPECT_EQ(n.failure->stage, "estimate");
  EXPECT_EQ(n.failure->exit_code, 3);
  EXPECT_TRUE(n.y_hat.has_value());
}

TEST(Pipeline, BandIsCenteredOnTheMappedRegion) {
  const PipelineReport r = run_pipeline(parse_config(small_pipeline()));
  ASSERT_TRUE(r.ok());
  const BandStage& b = *r.band;
  const VolMap f = VolMap::exponential(0.04);
  // constant drift: Y0(alpha)(t) = alpha t, sigma monotone in alpha
  const double lo = r.region->center(0) - r.region->half_width(0), hi = r.region->center(0) + r.region->half_width(0);
  const TimeGrid& g = r.y_hat->grid();
  for (std::size_t j = 0; j < g.size(); j += 400) {
    const double s_lo = f.sigma(lo * g[j]), s_hi = f.sigma(hi * g[j]);
    EXPECT_NEAR(b.sigma_center[j], 0.5 * (s_lo + s_hi), 1e-9);
    EXPECT_NEAR(b.half_width[j], 0.5 * (s_hi - s_lo), 1e-9);
  }
  EXPECT_DOUBLE_EQ(b.width, b.half_width.back());
}

TEST(Cli, ExitCodesFollowErrorKinds) {
  std::ostringstream err;
  EXPECT_EQ(guarded("x", [] { return 0; }, err), 0);
  EXPECT_EQ(guarded("x", []() -> int { throw ConfigError("bad"); }, err), 2);
  EXPECT_EQ(guarded("x", []() -> int { throw std::invalid_argument("bad"); }, err), 2);
  EXPECT_EQ(guarded("x", []() -> int { throw InfeasibleTruncation("c", 1.0); }, err), 3);
  EXPECT_EQ(guarded("x", []() -> int { throw DivergenceError("y", 0.5); }, err), 3);
  EXPECT_NE(err.str().find("x: bad"), std::string::npos);
  GlobalOptions g;
  EXPECT_EQ(guarded("pipeline", [&] { return cmd_pipeline(g, "", err); }, err), 2) << "no --config";
}

TEST(Cli, SimulateWritesComponentsAndManifest) {
  const fs::path dir = scratch("simulate"), cfgdir = scratch("simulate_cfg");
  std::ofstream(cfgdir / "c.json") << minimal_sim().dump();
  GlobalOptions g;
  g.config = (cfgdir / "c.json").string();
  g.out = dir.string();
  g.seed = 9;
  ASSERT_EQ(cmd_simulate(g), 0);
  const SamplePath x = csv::read_path((dir / "prices.csv").string());
  EXPECT_EQ(x.size(), 1001u);
  EXPECT_DOUBLE_EQ(x(0), 1.0);
  const json m = json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(m["seed"], 9);
  EXPECT_EQ(m["grid"]["n_steps"], 1000);
  // reconstruct from the written prices reproduces the in-process pipeline path
  json d = minimal_sim();
  d.erase("simulation");
  d["data"] = {{"prices_csv", (dir / "prices.csv").string()}};
  json s = minimal_sim();
  s["seed"] = 9;
  const PipelineReport from_file = run_pipeline(parse_config(d));
  const PipelineReport in_process = run_pipeline(parse_config(s));
  ASSERT_TRUE(from_file.ok() && in_process.ok());
  EXPECT_EQ(from_file.estimate->alpha_star(0), in_process.estimate->alpha_star(0));
}

// Coverage of the mapped region under the full reconstruct-then-estimate
// chain. The QV window must be wide relative to the factor noise for the
// reconstruction error to stay negligible, hence the fine price grid.
TEST(Pipeline, RegionCoversTruthAcrossReplays) {
  json j = minimal_sim();
  j["model"]["epsilon"] = 0.5;
  j["grid"] = {{"n", 160000}};
  j["vol_map"] = {{"type", "exp"}, {"v0", 0.04}};
  const int replays = 200;
  int covered = 0;
  for (int k = 0; k < replays; ++k) {
    j["seed"] = 1000 + k;
    const PipelineReport r = run_pipeline(parse_config(j));
    ASSERT_TRUE(r.ok()) << r.failure->message;
    covered += *r.region_contains_truth ? 1 : 0;
  }
  EXPECT_GE(covered, 186) << covered << " of " << replays;
}

// Constant drift contamination eta shifts the factor drift by eps * eta; the
// estimate on identical noise shifts by eps * eta, within the clip bound c r.
TEST(Pipeline, ContaminationShiftIsBiasBounded) {
  json j = minimal_sim();
  j["model"]["epsilon"] = 0.2;
  j["grid"] = {{"n", 40000}};
  const double eta = 0.5;
  double shift = 0.0;
  const int replays = 20;
  double c = 0.0;
  for (int k = 0; k < replays; ++k) {
    j["seed"] = 500 + k;
    j["simulation"]["contamination_eta"] = 0.0;
    const PipelineReport clean = run_pipeline(parse_config(j));
    j["simulation"]["contamination_eta"] = eta;
    const PipelineReport dirty = run_pipeline(parse_config(j));
    ASSERT_TRUE(clean.ok() && dirty.ok());
    shift += (dirty.estimate->alpha_star(0) - clean.estimate->alpha_star(0)) / 0.2;
    c = *dirty.estimate->c;
  }
  shift /= replays;
  EXPECT_NEAR(shift, eta, 0.05);
  EXPECT_LE(std::abs(shift), c * 1.0 + 0.05);
}
