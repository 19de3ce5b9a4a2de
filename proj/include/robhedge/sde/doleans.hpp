#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "robhedge/core/grid.hpp"

namespace robhedge {

/// Continuous-case stochastic exponential E_t(M) = exp(M_t - <M>_t / 2),
/// evaluated node by node. `qv` is the bracket <M> on the same grid.
inline SamplePath dolean_exp(const SamplePath& m, const SamplePath& qv) {
  if (m.dim() != 1 || qv.dim() != 1) throw std::invalid_argument("dolean_exp: scalar paths required");
  if (!(m.grid() == qv.grid())) throw std::invalid_argument("dolean_exp: grids differ");
  if (m(0) != 0.0) throw std::invalid_argument("dolean_exp: martingale must start at 0");
  if (qv(0) != 0.0) throw std::invalid_argument("dolean_exp: bracket must start at 0");
  std::vector<double> out(m.size());
  for (std::size_t j = 0; j < m.size(); ++j) {
    if (j > 0 && qv(j) < qv(j - 1))
      throw std::invalid_argument("dolean_exp: bracket decreases at node " + std::to_string(j));
    out[j] = std::exp(m(j) - 0.5 * qv(j));
  }
  return SamplePath::scalar(m.grid(), std::move(out));
}

/// Realized covariation [M, N]_j = sum_{i<j} dM_i dN_i on the common grid.
inline SamplePath realized_bracket(const SamplePath& m, const SamplePath& n) {
  if (!(m.grid() == n.grid())) throw std::invalid_argument("realized_bracket: grids differ");
  std::vector<double> out(m.size(), 0.0);
  for (std::size_t j = 1; j < m.size(); ++j)
    out[j] = out[j - 1] + (m(j) - m(j - 1)) * (n(j) - n(j - 1));
  return SamplePath::scalar(m.grid(), std::move(out));
}

/// Running stochastic integral sum_{i<j} f_i dX_i with left-point integrand.
inline SamplePath ito_integral(const std::vector<double>& integrand, const SamplePath& x) {
  if (integrand.size() + 1 < x.size()) throw std::invalid_argument("ito_integral: integrand too short");
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t j = 1; j < x.size(); ++j) out[j] = out[j - 1] + integrand[j - 1] * (x(j) - x(j - 1));
  return SamplePath::scalar(x.grid(), std::move(out));
}

}  // namespace robhedge
