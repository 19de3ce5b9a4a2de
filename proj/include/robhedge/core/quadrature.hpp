#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>

#include "robhedge/core/error.hpp"
#include "robhedge/core/grid.hpp"

namespace robhedge {

/// Trapezoidal rule for samples `f` at nodes `s`; exact for affine integrands.
inline double trapezoid(std::span<const double> s, std::span<const double> f) {
  if (s.size() != f.size()) throw std::invalid_argument("trapezoid: size mismatch");
  double acc = 0.0;
  for (std::size_t j = 0; j + 1 < s.size(); ++j) {
    if (!std::isfinite(f[j]) || !std::isfinite(f[j + 1]))
      throw NumericError("trapezoid: non-finite integrand at node " +
                         std::to_string(std::isfinite(f[j]) ? j + 1 : j));
    acc += 0.5 * (s[j + 1] - s[j]) * (f[j] + f[j + 1]);
  }
  if (s.size() == 1 && !std::isfinite(f[0])) throw NumericError("trapezoid: non-finite integrand at node 0");
  return acc;
}

using PathFunctional = std::function<double(const PathPrefix&)>;

/// Trapezoidal approximation of the time integral of f(s, x_{<=s}) along a
/// scalar sample path.
inline double quad_along_path(const PathFunctional& f, const SamplePath& path) {
  const auto s = path.grid().nodes();
  double acc = 0.0;
  double prev = 0.0;
  for (std::size_t j = 0; j < path.size(); ++j) {
    const double v = f(PathPrefix::at_node(path, j));
    if (!std::isfinite(v))
      throw NumericError("quad_along_path: non-finite integrand at node " + std::to_string(j) +
                         " (s = " + std::to_string(s[j]) + ")");
    if (j > 0) acc += 0.5 * (s[j] - s[j - 1]) * (prev + v);
    prev = v;
  }
  return acc;
}

}  // namespace robhedge
