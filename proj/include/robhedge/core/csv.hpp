#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "robhedge/core/error.hpp"
#include "robhedge/core/grid.hpp"

namespace robhedge::csv {

/// Shortest-exact decimal form (max_digits10 = 17 significant digits) so that
/// values survive a write/read cycle bit-for-bit.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view field, std::size_t line_no) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\r' || field.back() == '\t'))
    field.remove_suffix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw ConfigError("csv: cannot parse number '" + std::string(field) + "' on line " +
                      std::to_string(line_no));
  return v;
}

/// Column-oriented table used for the plot-ready outputs.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  void write(std::ostream& os) const {
    for (std::size_t c = 0; c < header.size(); ++c) os << (c ? "," : "") << header[c];
    os << '\n';
    for (const auto& r : rows) {
      for (std::size_t c = 0; c < r.size(); ++c) os << (c ? "," : "") << format_double(r[c]);
      os << '\n';
    }
  }

  void write_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("csv: cannot open '" + path + "' for writing");
    write(os);
    if (!os) throw std::runtime_error("csv: write failed for '" + path + "'");
  }

  static Table read(std::istream& is) {
    Table t;
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(is, line)) throw ConfigError("csv: empty input");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    for (auto f : split(line)) t.header.emplace_back(f);
    while (std::getline(is, line)) {
      ++line_no;
      if (line.empty() || line == "\r") continue;
      const auto fields = split(line);
      if (fields.size() != t.header.size())
        throw ConfigError("csv: line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                          " fields, expected " + std::to_string(t.header.size()));
      std::vector<double> row;
      row.reserve(fields.size());
      for (auto f : fields) row.push_back(parse_double(f, line_no));
      t.rows.push_back(std::move(row));
    }
    return t;
  }

  static Table read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("csv: cannot open '" + path + "'");
    return read(is);
  }
};

/// SamplePath CSV: header `s,x1,...,xd`, one row per node.
inline Table to_table(const SamplePath& path) {
  Table t;
  t.header.push_back("s");
  for (std::size_t c = 0; c < path.dim(); ++c) t.header.push_back("x" + std::to_string(c + 1));
  t.rows.reserve(path.size());
  for (std::size_t j = 0; j < path.size(); ++j) {
    std::vector<double> r{path.time(j)};
    for (std::size_t c = 0; c < path.dim(); ++c) r.push_back(path(j, c));
    t.rows.push_back(std::move(r));
  }
  return t;
}

inline SamplePath from_table(const Table& t) {
  if (t.header.size() < 2 || t.header[0] != "s")
    throw ConfigError("csv: sample path header must start with 's' followed by value columns");
  for (std::size_t c = 1; c < t.header.size(); ++c)
    if (t.header[c] != "x" + std::to_string(c))
      throw ConfigError("csv: expected column 'x" + std::to_string(c) + "', found '" + t.header[c] + "'");
  const std::size_t d = t.header.size() - 1;
  std::vector<double> nodes, values;
  nodes.reserve(t.rows.size());
  values.reserve(t.rows.size() * d);
  for (const auto& r : t.rows) {
    nodes.push_back(r[0]);
    values.insert(values.end(), r.begin() + 1, r.end());
  }
  TimeGrid grid = [&] {
    try {
      return TimeGrid(std::move(nodes));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("csv: ") + e.what());
    }
  }();
  SamplePath p(std::move(grid), d, std::move(values));
  if (!p.finite()) throw ConfigError("csv: sample path contains non-finite values");
  return p;
}

inline void write_path(const SamplePath& path, const std::string& file) { to_table(path).write_file(file); }
inline SamplePath read_path(const std::string& file) { return from_table(Table::read_file(file)); }

}  // namespace robhedge::csv
