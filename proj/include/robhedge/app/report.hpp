#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "robhedge/app/pipeline.hpp"

namespace robhedge::app {

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw ConfigError("cannot write '" + p.string() + "'");
  os << s;
}

/// Writes report.json, vol_path.csv, strategy.csv and manifest.json into dir.
inline void emit_report(const PipelineReport& r, const PipelineConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::string report = report_to_json(r).dump(2) + "\n";
  write_text(dir / "report.json", report);
  vol_path_table(r, vol_map_from_json(cfg.vol_map)).write_file((dir / "vol_path.csv").string());
  strategy_table(r).write_file((dir / "strategy.csv").string());
  json files;
  for (const char* name : {"report.json", "vol_path.csv", "strategy.csv"})
    files[name] = hex64(fnv1a(read_bytes((dir / name).string())));
  const json manifest{{"inputs_hash", r.inputs_hash},
                      {"seed", r.seed},
                      {"versions",
                       {{"robhedge", kVersion},
                        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                      std::to_string(EIGEN_MINOR_VERSION)},
                        {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                              std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                              std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                        {"schema", kSchemaVersion}}},
                      {"hash", "fnv1a-64"},
                      {"files", files}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace robhedge::app
