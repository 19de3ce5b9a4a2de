#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace robhedge {

/// Strictly increasing time nodes 0 = s_0 < ... < s_n = t_end.
///
/// Node storage is shared between copies, so grids can be passed around by
/// value; they are immutable after construction.
class TimeGrid {
 public:
  TimeGrid() = default;

  explicit TimeGrid(std::vector<double> nodes)
      : nodes_(std::make_shared<const std::vector<double>>(std::move(nodes))) {
    const auto& s = *nodes_;
    if (s.size() < 2) throw std::invalid_argument("TimeGrid: need at least two nodes");
    if (s.front() != 0.0) throw std::invalid_argument("TimeGrid: first node must be 0");
    for (std::size_t j = 1; j < s.size(); ++j) {
      if (!(s[j] > s[j - 1]) || !std::isfinite(s[j]))
        throw std::invalid_argument("TimeGrid: nodes must be finite and strictly increasing (node " +
                                    std::to_string(j) + ")");
    }
  }

  std::size_t steps() const noexcept { return nodes_ ? nodes_->size() - 1 : 0; }
  std::size_t size() const noexcept { return nodes_ ? nodes_->size() : 0; }
  double t_end() const { return nodes_->back(); }
  double operator[](std::size_t j) const { return (*nodes_)[j]; }
  /// Width of step j, i.e. s_{j+1} - s_j.
  double dt(std::size_t j) const { return (*nodes_)[j + 1] - (*nodes_)[j]; }
  std::span<const double> nodes() const { return *nodes_; }

  bool is_uniform(double rel_tol = 1e-12) const {
    const double h = t_end() / static_cast<double>(steps());
    for (std::size_t j = 0; j < steps(); ++j)
      if (std::abs(dt(j) - h) > rel_tol * h) return false;
    return true;
  }

  /// Index of the last node s_j <= s (clamped to [0, n-1]).
  std::size_t locate(double s) const {
    const auto& v = *nodes_;
    if (s <= v.front()) return 0;
    if (s >= v.back()) return steps() - 1;
    std::size_t lo = 0, hi = steps();
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      (v[mid] <= s ? lo : hi) = mid;
    }
    return lo;
  }

  friend bool operator==(const TimeGrid& a, const TimeGrid& b) {
    if (a.nodes_ == b.nodes_) return true;
    if (!a.nodes_ || !b.nodes_) return false;
    return *a.nodes_ == *b.nodes_;
  }

 private:
  std::shared_ptr<const std::vector<double>> nodes_;
};

/// Uniform grid with spacing t_end / n_steps. The last node is exactly t_end.
inline TimeGrid make_grid(double t_end, std::size_t n_steps) {
  if (!(t_end > 0.0) || !std::isfinite(t_end))
    throw std::invalid_argument("make_grid: t_end must be positive and finite");
  if (n_steps < 1) throw std::invalid_argument("make_grid: n_steps must be >= 1");
  std::vector<double> nodes(n_steps + 1);
  const double n = static_cast<double>(n_steps);
  for (std::size_t j = 0; j <= n_steps; ++j) nodes[j] = t_end * (static_cast<double>(j) / n);
  nodes.back() = t_end;
  return TimeGrid(std::move(nodes));
}

/// A d-dimensional trajectory stored at grid nodes (node-major layout).
class SamplePath {
 public:
  SamplePath() = default;

  SamplePath(TimeGrid grid, std::size_t dim)
      : grid_(std::move(grid)), dim_(dim), values_(grid_.size() * dim, 0.0) {
    if (dim == 0) throw std::invalid_argument("SamplePath: dimension must be positive");
  }

  SamplePath(TimeGrid grid, std::size_t dim, std::vector<double> values)
      : grid_(std::move(grid)), dim_(dim), values_(std::move(values)) {
    if (dim == 0) throw std::invalid_argument("SamplePath: dimension must be positive");
    if (values_.size() != grid_.size() * dim_)
      throw std::invalid_argument("SamplePath: value count does not match node count");
  }

  /// Scalar path from one value per node.
  static SamplePath scalar(TimeGrid grid, std::vector<double> values) {
    return SamplePath(std::move(grid), 1, std::move(values));
  }

  const TimeGrid& grid() const noexcept { return grid_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return grid_.size(); }
  double time(std::size_t j) const { return grid_[j]; }

  double operator()(std::size_t j, std::size_t c = 0) const { return values_[j * dim_ + c]; }
  double& operator()(std::size_t j, std::size_t c = 0) { return values_[j * dim_ + c]; }

  std::span<const double> row(std::size_t j) const { return {values_.data() + j * dim_, dim_}; }
  std::span<double> row(std::size_t j) { return {values_.data() + j * dim_, dim_}; }

  std::vector<double> component(std::size_t c) const {
    std::vector<double> out(size());
    for (std::size_t j = 0; j < size(); ++j) out[j] = (*this)(j, c);
    return out;
  }

  const std::vector<double>& raw() const noexcept { return values_; }

  bool finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  /// Piecewise-linear interpolation of component c at time s (clamped).
  double interpolate(double s, std::size_t c = 0) const {
    if (s <= grid_[0]) return (*this)(0, c);
    if (s >= grid_.t_end()) return (*this)(size() - 1, c);
    const std::size_t j = grid_.locate(s);
    const double w = (s - grid_[j]) / grid_.dt(j);
    return (1.0 - w) * (*this)(j, c) + w * (*this)(j + 1, c);
  }

 private:
  TimeGrid grid_;
  std::size_t dim_ = 1;
  std::vector<double> values_;
};

/// Nonanticipative view of a scalar trajectory: the completed history strictly
/// before the current time plus the current state (s, x_s).
///
/// Drift and influence functionals receive this view; Markov functionals only
/// read `time()` and `value()`.
class PathPrefix {
 public:
  PathPrefix(std::span<const double> history_times, std::span<const double> history_values,
             double time, double value)
      : times_(history_times), values_(history_values), time_(time), value_(value) {}

  /// Prefix ending at node j of `path` (component 0).
  static PathPrefix at_node(std::span<const double> times, std::span<const double> values,
                            std::size_t j) {
    return PathPrefix(times.first(j), values.first(j), times[j], values[j]);
  }

  /// Prefix ending at node j of a scalar sample path.
  static PathPrefix at_node(const SamplePath& path, std::size_t j) {
    return at_node(path.grid().nodes(), path.raw(), j);
  }

  double time() const noexcept { return time_; }
  double value() const noexcept { return value_; }
  std::size_t history_size() const noexcept { return values_.size(); }
  double history_time(std::size_t i) const { return times_[i]; }
  double history_value(std::size_t i) const { return values_[i]; }

 private:
  std::span<const double> times_;
  std::span<const double> values_;
  double time_;
  double value_;
};

}  // namespace robhedge
