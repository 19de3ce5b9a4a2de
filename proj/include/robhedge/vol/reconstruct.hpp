#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "robhedge/core/error.hpp"
#include "robhedge/core/grid.hpp"

namespace robhedge {

/// Cumulative realized quadratic variation S(s_j) = sum_{i<j} |dR_i|^2.
struct QVEstimate {
  TimeGrid grid;
  std::vector<double> cumulative;  ///< nondecreasing, cumulative[0] = 0
  std::size_t window = 1;          ///< difference-quotient width in grid steps
};

/// Default difference-quotient window ceil(sqrt(n)).
inline std::size_t default_qv_window(std::size_t n_steps) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n_steps)))));
}

/// `window` = 0 selects default_qv_window.
inline QVEstimate realized_qv(const SamplePath& r, std::size_t window = 0) {
  if (r.dim() != 1) throw std::invalid_argument("realized_qv: yield path must be one-dimensional, got d = " +
                                                std::to_string(r.dim()));
  QVEstimate q;
  q.grid = r.grid();
  q.window = window == 0 ? default_qv_window(r.grid().steps()) : window;
  q.cumulative.assign(r.size(), 0.0);
  for (std::size_t j = 1; j < r.size(); ++j) {
    const double d = r(j) - r(j - 1);
    q.cumulative[j] = q.cumulative[j - 1] + d * d;
  }
  return q;
}

/// Windowed slope of the cumulative variation at node j: a window of
/// `w` steps centered on j, shifted inward (one-sided) near the endpoints.
inline double qv_slope(const QVEstimate& q, std::size_t j) {
  const std::size_t n = q.grid.steps();
  const std::size_t w = std::min(q.window, n);
  std::size_t lo = j >= w / 2 ? j - w / 2 : 0;
  if (lo + w > n) lo = n - w;
  const std::size_t hi = lo + w;
  return (q.cumulative[hi] - q.cumulative[lo]) / (q.grid[hi] - q.grid[lo]);
}

/// y_j = f^{-1}(local variance at s_j). Without a floor, a nonpositive slope is
/// an error; with a floor, slopes below it are clamped to it first.
inline SamplePath vol_path_from_qv(const QVEstimate& q, const std::function<double(double)>& f_inverse,
                                   std::optional<double> floor = std::nullopt) {
  if (q.window < 1) throw std::invalid_argument("vol_path_from_qv: window must be >= 1");
  if (q.cumulative.size() != q.grid.size()) throw std::invalid_argument("vol_path_from_qv: size mismatch");
  if (floor && !(*floor > 0.0)) throw std::invalid_argument("vol_path_from_qv: floor must be positive");
  std::vector<double> y(q.grid.size());
  for (std::size_t j = 0; j < y.size(); ++j) {
    double v = qv_slope(q, j);
    if (floor) v = std::max(v, *floor);
    if (!(v > 0.0))
      throw NumericError("vol_path_from_qv: nonpositive local variance " + std::to_string(v) + " at node " +
                         std::to_string(j) + " (s = " + std::to_string(q.grid[j]) + ")");
    y[j] = f_inverse(v);
    if (!std::isfinite(y[j]))
      throw NumericError("vol_path_from_qv: f inverse not finite at node " + std::to_string(j));
  }
  return SamplePath::scalar(q.grid, std::move(y));
}

/// Yields R_j = sum log(X_{i+1}/X_i) from a positive price path; exact for
/// the log-Euler price scheme up to the -sigma^2 dt / 2 drift, which does not
/// affect the realized variation beyond O(dt).
inline SamplePath yields_from_prices(const SamplePath& x) {
  if (x.dim() != 1) throw std::invalid_argument("yields_from_prices: one price column expected");
  std::vector<double> r(x.size(), 0.0);
  for (std::size_t j = 0; j < x.size(); ++j)
    if (!(x(j) > 0.0))
      throw ConfigError("yields_from_prices: nonpositive price at node " + std::to_string(j));
  for (std::size_t j = 1; j < x.size(); ++j) r[j] = r[j - 1] + std::log(x(j) / x(j - 1));
  return SamplePath::scalar(x.grid(), std::move(r));
}

}  // namespace robhedge
