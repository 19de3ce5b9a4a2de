#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "robhedge/core/error.hpp"
#include "robhedge/core/linalg.hpp"
#include "robhedge/hedge/pde.hpp"
#include "robhedge/hedge/problem.hpp"
#include "robhedge/sde/model.hpp"
#include "robhedge/sde/sv_market.hpp"

namespace robhedge::app {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

struct DataSource {
  std::string prices_csv;  ///< resolved against the config directory
};

struct SimulationSpec {
  ParamVector alpha;             ///< true drift parameter of the volatility factor
  double x0 = 1.0;
  double contamination_eta = 0.0;  ///< factor drift a + eps * eta
};

struct EstimationSpec {
  double contamination_r = 1.0;
  /// "auto" solves for the minimax level (scalar parameter only), "score" is
  /// the unclipped likelihood score, a number is the standardized clip level.
  std::variant<std::string, double> truncation = std::string("auto");
  std::optional<ParamVector> alpha_init;
  std::size_t qv_window = 0;  ///< 0 = ceil(sqrt(n))
  std::optional<double> vol_floor;
  double region_level = 0.05;
};

struct HedgeSpec {
  json payoff = {{"type", "call"}, {"strike", 1.0}};
  json k = {{"type", "zero"}};
  std::optional<double> capital;  ///< empty: the fitted claim price
  std::optional<double> band_width;  ///< overrides the region-derived delta * r
  std::size_t n_steps = 50;
  std::size_t train_paths = 10000;
  std::size_t test_paths = 4000;
  std::vector<double> perturbations = {-1.0, -0.5, 0.5, 1.0};
  unsigned x_knots = 6;
  std::optional<double> sigma0;  ///< constant center volatility for the standalone hedge and pde commands
};

struct PipelineConfig {
  json raw;  ///< validated input document, defaults not merged
  std::filesystem::path base_dir;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  std::optional<DataSource> data;
  std::optional<SimulationSpec> simulation;
  json model;
  json vol_map = {{"type", "exp"}, {"v0", 1.0}};
  std::size_t grid_n = 1000;
  double t_end = 1.0;
  std::size_t replicates = 2000;
  EstimationSpec estimation;
  std::optional<HedgeSpec> hedge;
  PdeLattice pde;  ///< lattice of the pde command; t_end follows the top level
  std::vector<std::string> warnings;
};

namespace detail {

class FieldReader {
 public:
  FieldReader(std::vector<std::string>& missing, std::vector<std::string>& warnings)
      : missing_(missing), warnings_(warnings) {}

  /// Records keys of `obj` (at `path`) that are not in `known`.
  void unknown(const json& obj, const std::string& path, const std::set<std::string>& known) {
    if (!obj.is_object()) return;
    for (const auto& [key, _] : obj.items())
      if (!known.count(key)) warnings_.push_back("unknown field '" + join(path, key) + "' ignored");
  }
  bool require(const json& obj, const std::string& path, const std::string& key) {
    if (obj.is_object() && obj.contains(key)) return true;
    missing_.push_back(join(path, key));
    return false;
  }
  static std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

 private:
  std::vector<std::string>& missing_;
  std::vector<std::string>& warnings_;
};

template <class T>
T get_as(const json& obj, const std::string& path, const std::string& key) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: field '" + FieldReader::join(path, key) + "' has the wrong type");
  }
}

inline ParamVector param_from_json(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty() || v.size() > static_cast<std::size_t>(kMaxParams))
    throw ConfigError("config: '" + where + "' must be a non-empty array of at most " + std::to_string(kMaxParams) +
                      " numbers");
  ParamVector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw ConfigError("config: '" + where + "' must contain numbers");
    out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
  }
  return out;
}

inline std::size_t positive_count(const json& obj, const std::string& path, const std::string& key) {
  const auto v = get_as<long long>(obj, path, key);
  if (v < 1) throw ConfigError("config: '" + FieldReader::join(path, key) + "' must be >= 1");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

/// Model JSON: {"type": "constant" | "ou" | "linear", "epsilon": e, "basis": [...]}.
/// Linear bases are named terms of (t, y): "1", "t", "y", "y^2", "t*y".
inline ParamDriftModel model_from_json(const json& m, double t_end) {
  const auto type = detail::get_as<std::string>(m, "model", "type");
  const auto eps = detail::get_as<double>(m, "model", "epsilon");
  if (!(eps > 0.0)) throw ConfigError("config: model.epsilon must be positive");
  if (type == "constant") return models::constant_drift(eps, t_end);
  if (type == "ou") return models::ou_drift(eps, t_end);
  if (type == "linear") {
    if (!m.contains("basis") || !m["basis"].is_array() || m["basis"].empty())
      throw ConfigError("config: model.basis must list the terms of a linear model");
    std::vector<std::function<double(double, double)>> basis;
    for (const auto& b : m["basis"]) {
      const std::string name = b.is_string() ? b.get<std::string>() : "";
      if (name == "1") basis.emplace_back([](double, double) { return 1.0; });
      else if (name == "t") basis.emplace_back([](double t, double) { return t; });
      else if (name == "y") basis.emplace_back([](double, double y) { return y; });
      else if (name == "y^2") basis.emplace_back([](double, double y) { return y * y; });
      else if (name == "t*y") basis.emplace_back([](double t, double y) { return t * y; });
      else throw ConfigError("config: unknown basis term '" + b.dump() + "' (known: 1, t, y, y^2, t*y)");
    }
    if (basis.size() > static_cast<std::size_t>(kMaxParams))
      throw ConfigError("config: at most " + std::to_string(kMaxParams) + " basis terms");
    return models::linear_in_parameter(std::move(basis), eps, t_end);
  }
  throw ConfigError("config: unknown model.type '" + type + "' (known: constant, ou, linear)");
}

/// {"type": "exp", "v0": v} or {"type": "constant", "v0": v}.
inline VolMap vol_map_from_json(const json& v) {
  const auto type = detail::get_as<std::string>(v, "vol_map", "type");
  const double v0 = v.contains("v0") ? detail::get_as<double>(v, "vol_map", "v0") : 1.0;
  if (!(v0 > 0.0)) throw ConfigError("config: vol_map.v0 must be positive");
  if (type == "exp") return VolMap::exponential(v0);
  if (type == "constant") return VolMap::constant(v0);
  throw ConfigError("config: unknown vol_map.type '" + type + "' (known: exp, constant)");
}

/// {"type": "zero"}, {"type": "constant", "value": k} or
/// {"type": "exp_half", "scale": s} for k(y) = s exp(y / 2).
inline void apply_risk_premium(const json& k, SVMarketSpec& m) {
  const auto type = detail::get_as<std::string>(k, "hedge.k", "type");
  if (type == "zero") {
    m.k = nullptr;
    return;
  }
  if (type == "constant") {
    const double v = detail::get_as<double>(k, "hedge.k", "value");
    m.k = [v](double, double) { return AssetVector::Constant(1, v); };
    m.k_deterministic = true;
    return;
  }
  if (type == "exp_half") {
    const double s = detail::get_as<double>(k, "hedge.k", "scale");
    m.k = [s](double, double y) { return AssetVector::Constant(1, s * std::exp(0.5 * y)); };
    m.k_deterministic = false;
    return;
  }
  throw ConfigError("config: unknown hedge.k.type '" + type + "' (known: zero, constant, exp_half)");
}

/// {"type": "call" | "put", "strike": K}, {"type": "asset"} or {"type": "constant", "value": c}.
inline Payoff payoff_from_json(const json& p) {
  const auto type = detail::get_as<std::string>(p, "hedge.payoff", "type");
  if (type == "call") return payoffs::call(detail::get_as<double>(p, "hedge.payoff", "strike"));
  if (type == "put") return payoffs::put(detail::get_as<double>(p, "hedge.payoff", "strike"));
  if (type == "asset") return payoffs::asset();
  if (type == "constant") return payoffs::constant(detail::get_as<double>(p, "hedge.payoff", "value"));
  throw ConfigError("config: unknown hedge.payoff.type '" + type + "' (known: call, put, asset, constant)");
}

/// Terminal payoff as a function of (x, y) for the pricing equation.
inline std::function<double(double, double)> terminal_payoff_from_json(const json& p) {
  const auto type = detail::get_as<std::string>(p, "hedge.payoff", "type");
  if (type == "call") {
    const double k = detail::get_as<double>(p, "hedge.payoff", "strike");
    return [k](double x, double) { return std::max(x - k, 0.0); };
  }
  if (type == "put") {
    const double k = detail::get_as<double>(p, "hedge.payoff", "strike");
    return [k](double x, double) { return std::max(k - x, 0.0); };
  }
  if (type == "asset") return [](double x, double) { return x; };
  if (type == "constant") {
    const double c = detail::get_as<double>(p, "hedge.payoff", "value");
    return [c](double, double) { return c; };
  }
  throw ConfigError("config: unknown hedge.payoff.type '" + type + "'");
}

/// Validates a parsed document. Missing required fields are collected and
/// reported together; unknown fields become warnings.
inline PipelineConfig parse_config(const json& doc, const std::filesystem::path& base_dir = ".") {
  if (!doc.is_object()) throw ConfigError("config: top level must be a JSON object");
  PipelineConfig cfg;
  cfg.raw = doc;
  cfg.base_dir = base_dir;
  std::vector<std::string> missing;
  detail::FieldReader rd(missing, cfg.warnings);
  rd.unknown(doc, "", {"schema_version", "seed", "output_dir", "data", "simulation", "model", "vol_map", "grid",
                       "t_end", "replicates", "estimation", "hedge", "pde"});

  if (rd.require(doc, "", "schema_version")) {
    const auto v = detail::get_as<int>(doc, "", "schema_version");
    if (v != kSchemaVersion)
      throw ConfigError("config: schema_version " + std::to_string(v) + " is not supported (expected " +
                        std::to_string(kSchemaVersion) + ")");
  }
  if (rd.require(doc, "", "model")) {
    const json& m = doc["model"];
    rd.unknown(m, "model", {"type", "epsilon", "basis"});
    rd.require(m, "model", "type");
    rd.require(m, "model", "epsilon");
  }
  const bool has_data = doc.contains("data"), has_sim = doc.contains("simulation");
  if (has_data && has_sim) throw ConfigError("config: give either 'data' or 'simulation', not both");
  if (!has_data && !has_sim) missing.push_back("data | simulation");
  if (has_data) {
    rd.unknown(doc["data"], "data", {"prices_csv"});
    rd.require(doc["data"], "data", "prices_csv");
  }
  if (has_sim) {
    rd.unknown(doc["simulation"], "simulation", {"alpha", "x0", "contamination_eta"});
    rd.require(doc["simulation"], "simulation", "alpha");
  }
  if (doc.contains("hedge")) {
    const json& h = doc["hedge"];
    rd.unknown(h, "hedge", {"payoff", "k", "capital", "band_width", "n_steps", "train_paths", "test_paths",
                            "perturbations", "x_knots", "sigma0"});
    if (h.contains("payoff")) rd.require(h["payoff"], "hedge.payoff", "type");
    if (h.contains("k")) rd.require(h["k"], "hedge.k", "type");
  }
  if (doc.contains("estimation"))
    rd.unknown(doc["estimation"], "estimation",
               {"contamination_r", "truncation", "alpha_init", "qv_window", "vol_floor", "region_level"});
  if (doc.contains("grid")) rd.unknown(doc["grid"], "grid", {"n"});
  if (doc.contains("pde"))
    rd.unknown(doc["pde"], "pde", {"t_steps", "x_min", "x_max", "nx", "y_min", "y_max", "ny", "rannacher_steps", "upwind"});
  if (doc.contains("vol_map")) {
    rd.unknown(doc["vol_map"], "vol_map", {"type", "v0"});
    rd.require(doc["vol_map"], "vol_map", "type");
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ConfigError("config: missing required fields: " + list);
  }

  if (doc.contains("seed")) cfg.seed = detail::get_as<std::uint64_t>(doc, "", "seed");
  if (doc.contains("output_dir")) cfg.output_dir = detail::get_as<std::string>(doc, "", "output_dir");
  if (doc.contains("t_end")) {
    cfg.t_end = detail::get_as<double>(doc, "", "t_end");
    if (!(cfg.t_end > 0.0)) throw ConfigError("config: t_end must be positive");
  }
  if (doc.contains("grid") && doc["grid"].contains("n")) cfg.grid_n = detail::positive_count(doc["grid"], "grid", "n");
  if (doc.contains("replicates")) cfg.replicates = detail::positive_count(doc, "", "replicates");
  cfg.model = doc["model"];
  if (doc.contains("vol_map")) cfg.vol_map = doc["vol_map"];

  if (has_data) {
    const auto file = std::filesystem::path(detail::get_as<std::string>(doc["data"], "data", "prices_csv"));
    const auto resolved = file.is_absolute() ? file : base_dir / file;
    if (!std::filesystem::exists(resolved))
      throw ConfigError("config: data.prices_csv '" + resolved.string() + "' does not exist");
    cfg.data = DataSource{resolved.string()};
  }
  if (has_sim) {
    const json& s = doc["simulation"];
    SimulationSpec sim;
    sim.alpha = detail::param_from_json(s["alpha"], "simulation.alpha");
    if (s.contains("x0")) sim.x0 = detail::get_as<double>(s, "simulation", "x0");
    if (!(sim.x0 > 0.0)) throw ConfigError("config: simulation.x0 must be positive");
    if (s.contains("contamination_eta")) sim.contamination_eta = detail::get_as<double>(s, "simulation", "contamination_eta");
    cfg.simulation = sim;
  }

  if (doc.contains("estimation")) {
    const json& e = doc["estimation"];
    EstimationSpec& es = cfg.estimation;
    if (e.contains("contamination_r")) es.contamination_r = detail::get_as<double>(e, "estimation", "contamination_r");
    if (!(es.contamination_r > 0.0)) throw ConfigError("config: estimation.contamination_r must be positive");
    if (e.contains("truncation")) {
      const json& t = e["truncation"];
      if (t.is_string()) {
        const auto s = t.get<std::string>();
        if (s != "auto" && s != "score")
          throw ConfigError("config: estimation.truncation must be \"auto\", \"score\" or a positive number");
        es.truncation = s;
      } else if (t.is_number() && t.get<double>() > 0.0) {
        es.truncation = t.get<double>();
      } else {
        throw ConfigError("config: estimation.truncation must be \"auto\", \"score\" or a positive number");
      }
    }
    if (e.contains("alpha_init")) es.alpha_init = detail::param_from_json(e["alpha_init"], "estimation.alpha_init");
    if (e.contains("qv_window")) es.qv_window = detail::positive_count(e, "estimation", "qv_window");
    if (e.contains("vol_floor") && !e["vol_floor"].is_null()) es.vol_floor = detail::get_as<double>(e, "estimation", "vol_floor");
    if (e.contains("region_level")) es.region_level = detail::get_as<double>(e, "estimation", "region_level");
    if (!(es.region_level > 0.0 && es.region_level < 1.0))
      throw ConfigError("config: estimation.region_level must lie in (0, 1)");
  }

  if (doc.contains("hedge")) {
    const json& h = doc["hedge"];
    HedgeSpec hs;
    if (h.contains("payoff")) hs.payoff = h["payoff"];
    if (h.contains("k")) hs.k = h["k"];
    if (h.contains("capital") && !h["capital"].is_null()) hs.capital = detail::get_as<double>(h, "hedge", "capital");
    if (h.contains("band_width") && !h["band_width"].is_null()) {
      hs.band_width = detail::get_as<double>(h, "hedge", "band_width");
      if (!(*hs.band_width >= 0.0)) throw ConfigError("config: hedge.band_width must be >= 0");
    }
    if (h.contains("n_steps")) hs.n_steps = detail::positive_count(h, "hedge", "n_steps");
    if (h.contains("train_paths")) hs.train_paths = detail::positive_count(h, "hedge", "train_paths");
    if (h.contains("test_paths")) hs.test_paths = detail::positive_count(h, "hedge", "test_paths");
    if (h.contains("perturbations")) hs.perturbations = detail::get_as<std::vector<double>>(h, "hedge", "perturbations");
    if (h.contains("x_knots")) hs.x_knots = detail::get_as<unsigned>(h, "hedge", "x_knots");
    if (h.contains("sigma0") && !h["sigma0"].is_null()) {
      hs.sigma0 = detail::get_as<double>(h, "hedge", "sigma0");
      if (!(*hs.sigma0 > 0.0)) throw ConfigError("config: hedge.sigma0 must be positive");
    }
    if (hs.train_paths < 2) throw ConfigError("config: hedge.train_paths must be >= 2");
    cfg.hedge = hs;
  }

  if (doc.contains("pde")) {
    const json& l = doc["pde"];
    PdeLattice& lat = cfg.pde;
    if (l.contains("t_steps")) lat.t_steps = detail::positive_count(l, "pde", "t_steps");
    if (l.contains("nx")) lat.nx = detail::positive_count(l, "pde", "nx");
    if (l.contains("ny")) lat.ny = detail::positive_count(l, "pde", "ny");
    if (l.contains("x_min")) lat.x_min = detail::get_as<double>(l, "pde", "x_min");
    if (l.contains("x_max")) lat.x_max = detail::get_as<double>(l, "pde", "x_max");
    if (l.contains("y_min")) lat.y_min = detail::get_as<double>(l, "pde", "y_min");
    if (l.contains("y_max")) lat.y_max = detail::get_as<double>(l, "pde", "y_max");
    if (l.contains("rannacher_steps")) lat.rannacher_steps = detail::get_as<std::size_t>(l, "pde", "rannacher_steps");
    if (l.contains("upwind")) lat.upwind = detail::get_as<bool>(l, "pde", "upwind");
  }
  cfg.pde.t_end = cfg.t_end;

  // build once so that type errors surface at load time
  const ParamDriftModel model = model_from_json(cfg.model, cfg.t_end);
  vol_map_from_json(cfg.vol_map);
  if (cfg.simulation && static_cast<std::size_t>(cfg.simulation->alpha.size()) != model.dim)
    throw ConfigError("config: simulation.alpha has " + std::to_string(cfg.simulation->alpha.size()) +
                      " entries, the model has " + std::to_string(model.dim) + " parameters");
  if (cfg.estimation.alpha_init && static_cast<std::size_t>(cfg.estimation.alpha_init->size()) != model.dim)
    throw ConfigError("config: estimation.alpha_init has the wrong dimension");
  if (const auto* s = std::get_if<std::string>(&cfg.estimation.truncation); s && *s == "auto" && model.dim != 1)
    throw ConfigError("config: truncation \"auto\" needs a scalar parameter; give a number for multi-parameter models");
  if (cfg.hedge) {
    payoff_from_json(cfg.hedge->payoff);
    SVMarketSpec probe;
    apply_risk_premium(cfg.hedge->k, probe);
  }
  return cfg;
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open '" + path + "'");
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  return parse_config(doc, std::filesystem::path(path).parent_path());
}

}  // namespace robhedge::app
