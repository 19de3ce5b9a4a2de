#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "robhedge/core/error.hpp"
#include "robhedge/core/grid.hpp"
#include "robhedge/core/seed.hpp"
#include "robhedge/sde/model.hpp"

namespace robhedge {

namespace detail {
inline constexpr double kOverflow = 1e150;

inline void check_state(double y, double s) {
  if (!std::isfinite(y) || std::abs(y) > kOverflow)
    throw DivergenceError("state overflow at s = " + std::to_string(s), s);
}
}  // namespace detail

/// Classical RK4 solution of dY = a(s, Y; alpha) ds, Y_0 = 0 on `grid`.
/// Intermediate stages see the completed node history plus the stage state.
inline SamplePath solve_limit_ode(const ParamDriftModel& model, const ParamVector& alpha,
                                  const TimeGrid& grid) {
  const auto s = grid.nodes();
  std::vector<double> y(grid.size(), 0.0);
  for (std::size_t j = 0; j < grid.steps(); ++j) {
    const double h = grid.dt(j);
    const std::span<const double> hist_t = s.first(j + 1), hist_y{y.data(), j + 1};
    const double k1 = model.drift(PathPrefix(s.first(j), {y.data(), j}, s[j], y[j]), alpha);
    const double k2 = model.drift(PathPrefix(hist_t, hist_y, s[j] + 0.5 * h, y[j] + 0.5 * h * k1), alpha);
    const double k3 = model.drift(PathPrefix(hist_t, hist_y, s[j] + 0.5 * h, y[j] + 0.5 * h * k2), alpha);
    const double k4 = model.drift(PathPrefix(hist_t, hist_y, s[j + 1], y[j] + h * k3), alpha);
    y[j + 1] = y[j] + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    detail::check_state(y[j + 1], s[j + 1]);
  }
  return SamplePath::scalar(grid, std::move(y));
}

/// Euler scheme for the scaled observation SDE driven by the given Brownian
/// increments: Y_{j+1} = Y_j + (a + eps*h) ds_j + eps dw_j. A null contamination
/// pointer means the nominal model.
inline SamplePath euler_path(const ParamDriftModel& model, const ParamVector& alpha, const TimeGrid& grid,
                             std::span<const double> dw, const ContaminationSpec* contamination = nullptr) {
  if (!(model.epsilon >= 0.0)) throw std::invalid_argument("euler_path: epsilon must be >= 0");
  if (dw.size() != grid.steps()) throw std::invalid_argument("euler_path: increment count != step count");
  const auto s = grid.nodes();
  const double eps = model.epsilon;
  std::vector<double> y(grid.size(), 0.0);
  for (std::size_t j = 0; j < grid.steps(); ++j) {
    const PathPrefix x(s.first(j), {y.data(), j}, s[j], y[j]);
    double a = model.drift(x, alpha);
    if (contamination) {
      const double hv = (*contamination)(x, alpha);
      if (hv != 0.0) a += eps * hv;
    }
    y[j + 1] = y[j] + a * grid.dt(j) + eps * dw[j];
    detail::check_state(y[j + 1], s[j + 1]);
  }
  return SamplePath::scalar(grid, std::move(y));
}

inline std::vector<double> brownian_increments(const TimeGrid& grid, const SeedSpec& seed,
                                               std::uint64_t component = 0) {
  std::vector<double> dw(grid.steps());
  fill_brownian_increments(seed, component, [&](std::size_t j) { return grid.dt(j); }, dw);
  return dw;
}

/// Euler-Maruyama path of the nominal model; noise from component 0 of `seed`.
inline SamplePath simulate_small_noise(const ParamDriftModel& model, const ParamVector& alpha,
                                       const TimeGrid& grid, const SeedSpec& seed) {
  return euler_path(model, alpha, grid, brownian_increments(grid, seed));
}

/// Path under the alternative law: drift a + eps*h in the Y = eps X
/// coordinates. Shares the noise stream with simulate_small_noise, so h = 0
/// reproduces the nominal path bit-for-bit.
inline SamplePath simulate_contaminated(const ParamDriftModel& model, const ParamVector& alpha,
                                        const ContaminationSpec& h, const TimeGrid& grid, const SeedSpec& seed) {
  if (!(h.bound >= 0.0) || !std::isfinite(h.bound))
    throw std::invalid_argument("simulate_contaminated: contamination bound must be finite");
  return euler_path(model, alpha, grid, brownian_increments(grid, seed), &h);
}

/// Discretized log-density of the alternative with respect to the nominal law
/// along `path`, i.e. log of E_t(eps N) with
/// eps N_t = sum h_j (dY_j - a_j ds_j) / eps and <eps N>_t = sum h_j^2 ds_j.
inline double contamination_log_density(const ParamDriftModel& model, const ParamVector& alpha,
                                        const ContaminationSpec& h, const SamplePath& path) {
  const auto s = path.grid().nodes();
  const auto& y = path.raw();
  double acc = 0.0;
  for (std::size_t j = 0; j + 1 < path.size(); ++j) {
    const PathPrefix x = PathPrefix::at_node(path, j);
    const double ds = s[j + 1] - s[j];
    const double hv = h(x, alpha);
    acc += hv * (y[j + 1] - y[j] - model.drift(x, alpha) * ds) / model.epsilon - 0.5 * hv * hv * ds;
  }
  return acc;
}

}  // namespace robhedge
