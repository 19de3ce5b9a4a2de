#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "robhedge/app/config.hpp"
#include "robhedge/core/csv.hpp"
#include "robhedge/hedge/zero_drift.hpp"
#include "robhedge/robust/estimate.hpp"

namespace robhedge::app {

struct StageFailure {
  std::string stage;
  std::string message;
  int exit_code = 3;
};

struct EstimateStage {
  std::string influence;  ///< "score" or "optimal"
  std::optional<double> c;
  std::string c_source;   ///< "auto", "config" or "none"
  ParamVector pilot;      ///< score estimate used to freeze the standardization
  ParamVector alpha_star;
  ParamMatrix V;
  double gamma_star = 0.0;
  int iterations = 0;
  double residual = 0.0;
};

/// Volatility band on the data grid: center sigma0 and half-width of the
/// image of the confidence region under alpha -> sqrt(f(Y0(alpha))).
struct BandStage {
  std::vector<ParamVector> boundary;
  std::vector<double> sigma_center, half_width, sigma_star;
  double half_width_max = 0.0;
  double width = 0.0;  ///< delta * r used by the hedge
  std::string width_source;  ///< "region" or "config"
};

struct StepStats {
  double t = 0.0, theta_mean = 0.0, theta_sd = 0.0, comparator_mean = 0.0, correction_rms = 0.0;
};

struct GateauxRow {
  double c = 0.0;
  GateauxEstimate dj;
};

struct HedgeStage {
  std::size_t n_steps = 0, train_paths = 0, test_paths = 0;
  double capital = 0.0;
  std::string capital_source;  ///< "config" or "fitted"
  std::string density_method;
  double density_normalizer = 1.0, terminal_mean = 1.0, terminal_se = 0.0;
  MCEstimate J, admissibility;
  std::optional<MCEstimate> J_comparator;  ///< empty without a comparator
  std::optional<MCEstimate> worst_case_J;
  double route_gap_rms = 0.0;
  double correction_rms_mean = 0.0;
  std::vector<GateauxRow> gateaux;
  std::vector<StepStats> steps;
  std::vector<std::string> warnings;
};

struct PipelineReport {
  std::uint64_t seed = 0;
  std::string source;  ///< "simulation" or "data"
  std::optional<ParamVector> alpha_true;
  std::string inputs_hash;
  std::vector<std::string> warnings;
  // reconstruct
  std::optional<SamplePath> y_hat;
  std::optional<SamplePath> y_true;
  std::size_t qv_window = 0;
  std::size_t reconstruct_nodes = 0;  ///< size of y_hat; kept when the path itself is not
  // later stages
  std::optional<EstimateStage> estimate;
  std::optional<ConfidenceRegion> region;
  std::optional<bool> region_contains_truth;
  std::optional<BandStage> band;
  std::optional<HedgeStage> hedge;
  std::optional<StageFailure> failure;

  bool ok() const { return !failure; }
};

struct PipelineOptions {
  unsigned threads = 1;
  /// Empty: run everything. "estimate" reads vol_path.csv, "hedge" also
  /// reads report.json, both from `artifacts_dir`.
  std::string resume_from;
  std::string artifacts_dir;
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

inline std::string read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read '" + path + "'");
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

/// Hash over the canonical (key-sorted) config without output placement, plus
/// the bytes of the price file when one is referenced.
inline std::string inputs_hash(const PipelineConfig& cfg) {
  json canon = cfg.raw;
  canon.erase("output_dir");
  std::uint64_t h = fnv1a(canon.dump());
  if (cfg.data) h = fnv1a(read_bytes(cfg.data->prices_csv), h);
  return hex64(h);
}

inline constexpr const char* kVersion = "1.0.0";

namespace detail {

inline json vec_json(const ParamVector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}
inline ParamVector vec_from(const json& a) { return param_from_json(a, "report"); }

inline json mat_json(const ParamMatrix& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(row);
  }
  return a;
}
inline ParamMatrix mat_from(const json& a) {
  const auto n = static_cast<Eigen::Index>(a.size());
  ParamMatrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = a.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(j)).get<double>();
  return m;
}

inline json mc_json(const MCEstimate& e) { return {{"value", e.value}, {"std_err", e.std_err}}; }
inline MCEstimate mc_from(const json& j) { return {j.at("value").get<double>(), j.at("std_err").get<double>()}; }

}  // namespace detail

/// Scalar content of the report; per-node paths live in the CSV files.
inline json report_to_json(const PipelineReport& r) {
  using namespace detail;
  json j;
  j["version"] = kVersion;
  j["seed"] = r.seed;
  j["source"] = r.source;
  j["inputs_hash"] = r.inputs_hash;
  j["warnings"] = r.warnings;
  if (r.alpha_true) j["alpha_true"] = vec_json(*r.alpha_true);
  if (r.y_hat || r.reconstruct_nodes)
    j["reconstruct"] = {{"nodes", r.y_hat ? r.y_hat->size() : r.reconstruct_nodes}, {"qv_window", r.qv_window}};
  if (r.estimate) {
    const EstimateStage& e = *r.estimate;
    json je{{"influence", e.influence},       {"c_source", e.c_source},     {"pilot", vec_json(e.pilot)},
            {"alpha_star", vec_json(e.alpha_star)}, {"V", mat_json(e.V)},   {"gamma_star", e.gamma_star},
            {"iterations", e.iterations},     {"residual", e.residual}};
    je["c"] = e.c ? json(*e.c) : json(nullptr);
    j["estimate"] = je;
  }
  if (r.region) {
    json jr{{"center", vec_json(r.region->center)},
            {"shape", mat_json(r.region->shape)},
            {"radius", r.region->radius},
            {"level", r.region->level}};
    json hw = json::array();
    for (Eigen::Index i = 0; i < r.region->center.size(); ++i) hw.push_back(r.region->half_width(i));
    jr["half_widths"] = hw;
    if (r.region_contains_truth) jr["contains_truth"] = *r.region_contains_truth;
    j["region"] = jr;
  }
  if (r.band) {
    const BandStage& b = *r.band;
    json pts = json::array();
    for (const auto& p : b.boundary) pts.push_back(vec_json(p));
    j["band"] = {{"boundary", pts},
                 {"half_width_max", b.half_width_max},
                 {"width", b.width},
                 {"width_source", b.width_source}};
  }
  if (r.hedge) {
    const HedgeStage& h = *r.hedge;
    json dj = json::array();
    for (const auto& g : h.gateaux) dj.push_back({{"c", g.c}, {"value", g.dj.value}, {"std_err", g.dj.std_err}, {"form", g.dj.form}});
    json jh{{"n_steps", h.n_steps},
            {"train_paths", h.train_paths},
            {"test_paths", h.test_paths},
            {"capital", h.capital},
            {"capital_source", h.capital_source},
            {"density", {{"method", h.density_method}, {"normalizer", h.density_normalizer},
                         {"terminal_mean", h.terminal_mean}, {"terminal_se", h.terminal_se}}},
            {"J", mc_json(h.J)},
                        {"admissibility", mc_json(h.admissibility)},
            {"route_gap_rms", h.route_gap_rms},
            {"correction_rms_mean", h.correction_rms_mean},
            {"gateaux", dj},
            {"warnings", h.warnings}};
    jh["worst_case_J"] = h.worst_case_J ? mc_json(*h.worst_case_J) : json(nullptr);
    jh["J_comparator"] = h.J_comparator ? mc_json(*h.J_comparator) : json(nullptr);
    j["hedge"] = jh;
  }
  if (r.failure)
    j["failure"] = {{"stage", r.failure->stage}, {"message", r.failure->message},
                    {"kind", r.failure->exit_code == 2 ? "config" : "numeric"}};
  j["status"] = r.ok() ? "ok" : "failed";
  return j;
}

/// Inverse of report_to_json on the scalar content (paths are not restored).
inline PipelineReport report_from_json(const json& j) {
  using namespace detail;
  PipelineReport r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.source = j.at("source").get<std::string>();
  r.inputs_hash = j.at("inputs_hash").get<std::string>();
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  if (j.contains("alpha_true")) r.alpha_true = vec_from(j["alpha_true"]);
  if (j.contains("reconstruct")) {
    r.qv_window = j["reconstruct"].at("qv_window").get<std::size_t>();
    r.reconstruct_nodes = j["reconstruct"].at("nodes").get<std::size_t>();
  }
  if (j.contains("estimate")) {
    const json& je = j["estimate"];
    EstimateStage e;
    e.influence = je.at("influence").get<std::string>();
    e.c_source = je.at("c_source").get<std::string>();
    if (!je.at("c").is_null()) e.c = je["c"].get<double>();
    e.pilot = vec_from(je.at("pilot"));
    e.alpha_star = vec_from(je.at("alpha_star"));
    e.V = mat_from(je.at("V"));
    e.gamma_star = je.at("gamma_star").get<double>();
    e.iterations = je.at("iterations").get<int>();
    e.residual = je.at("residual").get<double>();
    r.estimate = e;
  }
  if (j.contains("region")) {
    const json& jr = j["region"];
    ConfidenceRegion c;
    c.center = vec_from(jr.at("center"));
    c.shape = mat_from(jr.at("shape"));
    c.radius = jr.at("radius").get<double>();
    c.level = jr.at("level").get<double>();
    r.region = c;
    if (jr.contains("contains_truth")) r.region_contains_truth = jr["contains_truth"].get<bool>();
  }
  if (j.contains("band")) {
    const json& jb = j["band"];
    BandStage b;
    for (const auto& p : jb.at("boundary")) b.boundary.push_back(vec_from(p));
    b.half_width_max = jb.at("half_width_max").get<double>();
    b.width = jb.at("width").get<double>();
    b.width_source = jb.at("width_source").get<std::string>();
    r.band = b;
  }
  if (j.contains("hedge")) {
    const json& jh = j["hedge"];
    HedgeStage h;
    h.n_steps = jh.at("n_steps").get<std::size_t>();
    h.train_paths = jh.at("train_paths").get<std::size_t>();
    h.test_paths = jh.at("test_paths").get<std::size_t>();
    h.capital = jh.at("capital").get<double>();
    h.capital_source = jh.at("capital_source").get<std::string>();
    const json& d = jh.at("density");
    h.density_method = d.at("method").get<std::string>();
    h.density_normalizer = d.at("normalizer").get<double>();
    h.terminal_mean = d.at("terminal_mean").get<double>();
    h.terminal_se = d.at("terminal_se").get<double>();
    h.J = mc_from(jh.at("J"));
    if (!jh.at("J_comparator").is_null()) h.J_comparator = mc_from(jh["J_comparator"]);
    h.admissibility = mc_from(jh.at("admissibility"));
    if (!jh.at("worst_case_J").is_null()) h.worst_case_J = mc_from(jh["worst_case_J"]);
    h.route_gap_rms = jh.at("route_gap_rms").get<double>();
    h.correction_rms_mean = jh.at("correction_rms_mean").get<double>();
    for (const auto& g : jh.at("gateaux"))
      h.gateaux.push_back({g.at("c").get<double>(),
                           GateauxEstimate{g.at("value").get<double>(), g.at("std_err").get<double>(),
                                           g.at("form").get<std::string>()}});
    h.warnings = jh.at("warnings").get<std::vector<std::string>>();
    r.hedge = h;
  }
  if (j.contains("failure")) {
    const json& f = j["failure"];
    r.failure = StageFailure{f.at("stage").get<std::string>(), f.at("message").get<std::string>(),
                             f.at("kind").get<std::string>() == "config" ? 2 : 3};
  }
  return r;
}

/// Per-node columns available in the report: s, y_hat, sigma_hat, then the
/// band columns and y_true when present.
inline csv::Table vol_path_table(const PipelineReport& r, const VolMap& f) {
  csv::Table t;
  if (!r.y_hat) {
    t.header = {"s", "y_hat", "sigma_hat"};
    return t;
  }
  t.header = {"s", "y_hat", "sigma_hat"};
  if (r.band) t.header.insert(t.header.end(), {"sigma0", "half_width", "sigma_star"});
  if (r.y_true) t.header.push_back("y_true");
  const TimeGrid& g = r.y_hat->grid();
  for (std::size_t j = 0; j < g.size(); ++j) {
    std::vector<double> row{g[j], (*r.y_hat)(j), f.sigma((*r.y_hat)(j))};
    if (r.band) row.insert(row.end(), {r.band->sigma_center[j], r.band->half_width[j], r.band->sigma_star[j]});
    if (r.y_true) row.push_back((*r.y_true)(j));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline csv::Table strategy_table(const PipelineReport& r) {
  csv::Table t;
  const bool cmp = !r.hedge || r.hedge->J_comparator;
  t.header = {"t", "theta_mean", "theta_sd"};
  if (cmp) t.header.insert(t.header.end(), {"comparator_mean", "correction_rms"});
  if (r.hedge)
    for (const StepStats& s : r.hedge->steps) {
      t.rows.push_back({s.t, s.theta_mean, s.theta_sd});
      if (cmp) t.rows.back().insert(t.rows.back().end(), {s.comparator_mean, s.correction_rms});
    }
  return t;
}

}  // namespace robhedge::app
