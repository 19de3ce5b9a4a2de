#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "robhedge/core/error.hpp"
#include "robhedge/sde/sv_market.hpp"

namespace robhedge {

/// Uniform (t, x, y) lattice for the pricing equation.
struct PdeLattice {
  double t_end = 1.0;
  std::size_t t_steps = 100;
  double x_min = 0.0, x_max = 4.0;
  std::size_t nx = 201;
  double y_min = -1.0, y_max = 1.0;
  std::size_t ny = 41;
  std::size_t rannacher_steps = 2;  ///< leading steps taken as two implicit half steps
  bool upwind = true;               ///< first-order upwinding of the factor drift; central otherwise
};

/// Value surface v(t_i, x, y) with x and y derivatives on every time level.
struct PdeSurface {
  PdeLattice lattice;
  std::vector<double> t, x, y;
  std::vector<double> v, dvdx, dvdy;  ///< index (i * nx + a) * ny + b

  std::size_t index(std::size_t i, std::size_t a, std::size_t b) const {
    return (i * lattice.nx + a) * lattice.ny + b;
  }
  double value(std::size_t i, std::size_t a, std::size_t b) const { return v[index(i, a, b)]; }

  double value_at(double s, double xq, double yq) const { return interp(v, s, xq, yq); }
  double dvdx_at(double s, double xq, double yq) const { return interp(dvdx, s, xq, yq); }
  double dvdy_at(double s, double xq, double yq) const { return interp(dvdy, s, xq, yq); }

 private:
  static std::pair<std::size_t, double> cell(const std::vector<double>& g, double q) {
    if (q <= g.front()) return {0, 0.0};
    if (q >= g.back()) return {g.size() - 2, 1.0};
    const auto it = std::upper_bound(g.begin(), g.end(), q);
    const auto i = static_cast<std::size_t>(it - g.begin()) - 1;
    return {i, (q - g[i]) / (g[i + 1] - g[i])};
  }
  double interp(const std::vector<double>& f, double s, double xq, double yq) const {
    // nearest earlier time level (positions are predictable), bilinear in (x, y)
    const std::size_t i = std::min<std::size_t>(
        lattice.t_steps, static_cast<std::size_t>(std::floor(s / lattice.t_end * lattice.t_steps + 1e-9)));
    const auto [a, wa] = cell(x, xq);
    const auto [b, wb] = lattice.ny > 1 ? cell(y, yq) : std::pair<std::size_t, double>{0, 0.0};
    const std::size_t b1 = lattice.ny > 1 ? b + 1 : b;
    return (1 - wa) * ((1 - wb) * f[index(i, a, b)] + wb * f[index(i, a, b1)]) +
           wa * ((1 - wb) * f[index(i, a + 1, b)] + wb * f[index(i, a + 1, b1)]);
  }
};

namespace detail {

/// Thomas algorithm; sub/diag/sup of equal length, sub[0] and sup[n-1] unused.
inline void solve_tridiagonal(std::vector<double> sub, std::vector<double> diag, std::vector<double> sup,
                              std::vector<double>& rhs) {
  const std::size_t n = diag.size();
  for (std::size_t i = 1; i < n; ++i) {
    const double m = sub[i] / diag[i - 1];
    diag[i] -= m * sup[i - 1];
    rhs[i] -= m * rhs[i - 1];
  }
  rhs[n - 1] /= diag[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - sup[i] * rhs[i + 1]) / diag[i];
}

}  // namespace detail

/// Backward solution of
///   v_t + a*(t, y) v_y + (eps^2 v_yy + x^2 f(y) v_xx) / 2 = 0,  v(T) = h,
/// by Douglas ADI with weight 1/2 and Rannacher start-up. Boundary nodes
/// carry no second derivative (linear extrapolation). Derivatives are
/// central differences, one-sided on the boundary.
inline PdeSurface sv_pde_price(const SVMarketSpec& spec, const std::function<double(double, double)>& payoff,
                               const PdeLattice& lat) {
  spec.validate();
  if (spec.assets != 1) throw ConfigError("sv_pde_price: single-asset market only");
  if (spec.rho != 0.0) throw ConfigError("sv_pde_price: correlated factor noise needs a mixed-derivative term; set rho = 0");
  if (lat.nx < 3 || lat.ny < 1 || lat.t_steps < 1 || !(lat.x_max > lat.x_min) || lat.x_min < 0.0 || !(lat.t_end > 0.0))
    throw ConfigError("sv_pde_price: lattice needs nx >= 3, ny >= 1, t_steps >= 1, 0 <= x_min < x_max, t_end > 0");
  const bool has_y = spec.vol_noise > 0.0 || static_cast<bool>(spec.vol_drift);
  if (has_y && (lat.ny < 3 || !(lat.y_max > lat.y_min)))
    throw ConfigError("sv_pde_price: a moving volatility factor needs ny >= 3 and y_min < y_max");
  const double x0 = spec.x0(0);
  if (x0 < lat.x_min || x0 > lat.x_max || (lat.ny > 1 && (spec.y0 < lat.y_min || spec.y0 > lat.y_max)))
    throw ConfigError("sv_pde_price: lattice does not cover the initial state");

  PdeSurface s;
  s.lattice = lat;
  const std::size_t nx = lat.nx, ny = lat.ny, nt = lat.t_steps;
  const double dx = (lat.x_max - lat.x_min) / static_cast<double>(nx - 1);
  const double dy = ny > 1 ? (lat.y_max - lat.y_min) / static_cast<double>(ny - 1) : 1.0;
  const double dt = lat.t_end / static_cast<double>(nt);
  for (std::size_t i = 0; i <= nt; ++i) s.t.push_back(lat.t_end * static_cast<double>(i) / static_cast<double>(nt));
  for (std::size_t a = 0; a < nx; ++a) s.x.push_back(lat.x_min + dx * static_cast<double>(a));
  for (std::size_t b = 0; b < ny; ++b) s.y.push_back(ny > 1 ? lat.y_min + dy * static_cast<double>(b) : spec.y0);
  const double eps2 = spec.vol_noise * spec.vol_noise;

  if (!lat.upwind && has_y) {
    // central convection keeps the implicit factor step an M-matrix only if |a*| dy <= eps^2
    double amax = 0.0;
    for (std::size_t i = 0; i <= nt; ++i)
      for (double yb : s.y) amax = std::max(amax, std::abs(spec.drift_at(s.t[i], yb)));
    if (amax * dy > eps2) {
      const double need = eps2 > 0.0 ? (lat.y_max - lat.y_min) * amax / eps2 + 1.0 : 0.0;
      throw ConfigError("sv_pde_price: central convection violates diagonal dominance (|a*| dy = " +
                        std::to_string(amax * dy) + " > eps^2 = " + std::to_string(eps2) + "); " +
                        (eps2 > 0.0 ? "use ny >= " + std::to_string(static_cast<std::size_t>(std::ceil(need))) + " or "
                                    : std::string()) +
                        "enable upwinding");
    }
  }

  const std::size_t level = nx * ny;
  s.v.assign((nt + 1) * level, 0.0);
  for (std::size_t a = 0; a < nx; ++a)
    for (std::size_t b = 0; b < ny; ++b) {
      const double h = payoff(s.x[a], s.y[b]);
      if (!std::isfinite(h)) throw ConfigError("sv_pde_price: payoff not finite on the lattice");
      s.v[s.index(nt, a, b)] = h;
    }

  std::vector<double> fy(ny);
  for (std::size_t b = 0; b < ny; ++b) fy[b] = spec.f.f(s.y[b]);

  // A_x u at (a, b): x^2 f(y) u_xx / 2 on interior x nodes
  auto apply_x = [&](const std::vector<double>& u, std::vector<double>& out) {
    for (std::size_t b = 0; b < ny; ++b)
      for (std::size_t a = 0; a < nx; ++a) {
        double r = 0.0;
        if (a > 0 && a + 1 < nx) {
          const double c = 0.5 * s.x[a] * s.x[a] * fy[b] / (dx * dx);
          r = c * (u[(a + 1) * ny + b] - 2.0 * u[a * ny + b] + u[(a - 1) * ny + b]);
        }
        out[a * ny + b] = r;
      }
  };
  // factor operator coefficients on row b: lower, centre, upper
  auto y_coeffs = [&](double tm, std::size_t b, double& lo, double& ce, double& up) {
    lo = ce = up = 0.0;
    if (ny == 1) return;
    const double adr = spec.drift_at(tm, s.y[b]);
    if (b > 0 && b + 1 < ny) {
      const double dif = 0.5 * eps2 / (dy * dy);
      lo += dif, ce -= 2.0 * dif, up += dif;
      if (!lat.upwind) {
        lo -= adr / (2.0 * dy), up += adr / (2.0 * dy);
        return;
      }
    }
    // upwind direction of the backward equation follows the sign of a*; on the
    // boundary the only available one-sided difference is used
    const bool forward = (adr >= 0.0 && b + 1 < ny) || b == 0;
    if (forward) ce -= adr / dy, up += adr / dy;
    else lo -= adr / dy, ce += adr / dy;
  };
  auto apply_y = [&](double tm, const std::vector<double>& u, std::vector<double>& out) {
    for (std::size_t a = 0; a < nx; ++a)
      for (std::size_t b = 0; b < ny; ++b) {
        double lo, ce, up;
        y_coeffs(tm, b, lo, ce, up);
        double r = ce * u[a * ny + b];
        if (b > 0) r += lo * u[a * ny + b - 1];
        if (b + 1 < ny) r += up * u[a * ny + b + 1];
        out[a * ny + b] = r;
      }
  };

  std::vector<double> u(level), ax(level), ay(level), y0(level);
  auto douglas_step = [&](double t_new, double tau, double theta) {
    const double tm = t_new + 0.5 * tau;
    apply_x(u, ax);
    apply_y(tm, u, ay);
    for (std::size_t q = 0; q < level; ++q) y0[q] = u[q] + tau * (ax[q] + ay[q]) - theta * tau * ax[q];
    // implicit x sweep per y row
    std::vector<double> sub(nx), dia(nx), sup(nx), rhs(nx);
    for (std::size_t b = 0; b < ny; ++b) {
      for (std::size_t a = 0; a < nx; ++a) {
        const double c = (a > 0 && a + 1 < nx) ? 0.5 * s.x[a] * s.x[a] * fy[b] / (dx * dx) : 0.0;
        sub[a] = -theta * tau * c;
        sup[a] = -theta * tau * c;
        dia[a] = 1.0 + 2.0 * theta * tau * c;
        rhs[a] = y0[a * ny + b];
      }
      detail::solve_tridiagonal(sub, dia, sup, rhs);
      for (std::size_t a = 0; a < nx; ++a) y0[a * ny + b] = rhs[a] - theta * tau * ay[a * ny + b];
    }
    // implicit y sweep per x column
    if (ny == 1) {
      for (std::size_t q = 0; q < level; ++q) u[q] = y0[q] + theta * tau * ay[q];
      return;
    }
    std::vector<double> suby(ny), diay(ny), supy(ny), rhsy(ny);
    for (std::size_t a = 0; a < nx; ++a) {
      for (std::size_t b = 0; b < ny; ++b) {
        double lo, ce, up;
        y_coeffs(tm, b, lo, ce, up);
        suby[b] = -theta * tau * lo;
        diay[b] = 1.0 - theta * tau * ce;
        supy[b] = -theta * tau * up;
        rhsy[b] = y0[a * ny + b];
      }
      detail::solve_tridiagonal(suby, diay, supy, rhsy);
      for (std::size_t b = 0; b < ny; ++b) u[a * ny + b] = rhsy[b];
    }
  };

  std::copy(s.v.begin() + static_cast<std::ptrdiff_t>(nt * level), s.v.end(), u.begin());
  for (std::size_t i = nt; i-- > 0;) {
    const double t_new = s.t[i];
    if (nt - i <= lat.rannacher_steps) {
      douglas_step(t_new + 0.5 * dt, 0.5 * dt, 1.0);
      douglas_step(t_new, 0.5 * dt, 1.0);
    } else {
      douglas_step(t_new, dt, 0.5);
    }
    for (double q : u)
      if (!std::isfinite(q)) throw NumericError("sv_pde_price: solution not finite at t = " + std::to_string(t_new));
    std::copy(u.begin(), u.end(), s.v.begin() + static_cast<std::ptrdiff_t>(i * level));
  }

  s.dvdx.assign(s.v.size(), 0.0);
  s.dvdy.assign(s.v.size(), 0.0);
  for (std::size_t i = 0; i <= nt; ++i)
    for (std::size_t a = 0; a < nx; ++a)
      for (std::size_t b = 0; b < ny; ++b) {
        const std::size_t al = a == 0 ? 0 : a - 1, ar = a + 1 == nx ? a : a + 1;
        s.dvdx[s.index(i, a, b)] = (s.v[s.index(i, ar, b)] - s.v[s.index(i, al, b)]) / (s.x[ar] - s.x[al]);
        if (ny > 1) {
          const std::size_t bl = b == 0 ? 0 : b - 1, br = b + 1 == ny ? b : b + 1;
          s.dvdy[s.index(i, a, b)] = (s.v[s.index(i, a, br)] - s.v[s.index(i, a, bl)]) / (s.y[br] - s.y[bl]);
        }
      }
  return s;
}

}  // namespace robhedge
