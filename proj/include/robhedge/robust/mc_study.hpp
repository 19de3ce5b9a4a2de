#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "robhedge/core/error.hpp"
#include "robhedge/core/parallel.hpp"
#include "robhedge/core/seed.hpp"
#include "robhedge/robust/estimate.hpp"
#include "robhedge/sde/simulate.hpp"

namespace robhedge {

struct MCStudyConfig {
  ParamDriftModel model;
  ParamVector alpha;                              ///< true parameter
  InfluenceSpec psi;
  std::optional<ContaminationSpec> contamination; ///< alternative law; nominal when empty
  TimeGrid grid;
  std::size_t replicates = 2000;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::optional<ParamVector> alpha_init;          ///< Newton start; the true alpha when empty
  double max_failure_fraction = 0.05;
  double region_level = 0.05;                     ///< significance of the coverage check
};

struct MCStudyReport {
  std::size_t replicates = 0;
  std::size_t failures = 0;
  ParamVector mean;      ///< mean of (alpha_hat - alpha) / eps
  ParamVector mean_se;   ///< standard error of each mean component
  ParamMatrix cov;       ///< sample covariance (n - 1 denominator)
  ParamVector skewness;
  ParamVector excess_kurtosis;
  double coverage = 0.0; ///< fraction of regions containing alpha
  std::vector<ParamVector> standardized;  ///< successful replicates in index order
  std::vector<std::size_t> failed;        ///< failed replicate indices
};

/// Replicate k simulates on seed (cfg.seed, k), estimates, and standardizes.
/// Results are reduced in replicate order, so output is independent of the
/// thread count.
inline MCStudyReport mc_study(const MCStudyConfig& cfg) {
  if (cfg.replicates < 1) throw std::invalid_argument("mc_study: need at least one replicate");
  cfg.model.validate(cfg.alpha);
  const Eigen::Index m = cfg.alpha.size();
  const double eps = cfg.model.epsilon;
  const ParamVector start = cfg.alpha_init.value_or(cfg.alpha);

  std::vector<std::optional<ParamVector>> z(cfg.replicates);
  std::vector<char> covered(cfg.replicates, 0);
  const SeedSpec base{cfg.seed, 0};
  parallel_for(cfg.replicates, cfg.threads, [&](std::size_t k) {
    const SeedSpec seed = base.with_replicate(k);
    try {
      const SamplePath data = cfg.contamination
                                  ? simulate_contaminated(cfg.model, cfg.alpha, *cfg.contamination, cfg.grid, seed)
                                  : simulate_small_noise(cfg.model, cfg.alpha, cfg.grid, seed);
      const EstimateResult est = m_estimate(cfg.model, cfg.psi, data, start);
      z[k] = ParamVector((est.alpha_hat - cfg.alpha) / eps);
      covered[k] = confidence_region(est, eps, cfg.region_level).contains(cfg.alpha) ? 1 : 0;
    } catch (const NumericError&) {
      z[k].reset();
    }
  });

  MCStudyReport rep;
  rep.replicates = cfg.replicates;
  for (std::size_t k = 0; k < cfg.replicates; ++k) {
    if (z[k]) rep.standardized.push_back(*z[k]);
    else rep.failed.push_back(k);
  }
  rep.failures = rep.failed.size();
  if (static_cast<double>(rep.failures) > cfg.max_failure_fraction * static_cast<double>(cfg.replicates) &&
      rep.failures > 0)
    throw NumericError("mc_study: " + std::to_string(rep.failures) + " of " + std::to_string(cfg.replicates) +
                       " replicates failed");

  const std::size_t n = rep.standardized.size();
  rep.mean = ParamVector::Zero(m);
  rep.cov = ParamMatrix::Zero(m, m);
  rep.mean_se = ParamVector::Zero(m);
  rep.skewness = ParamVector::Zero(m);
  rep.excess_kurtosis = ParamVector::Zero(m);
  if (n == 0) return rep;
  for (const auto& v : rep.standardized) rep.mean += v;
  rep.mean /= static_cast<double>(n);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < cfg.replicates; ++k) hits += z[k] && covered[k];
  rep.coverage = static_cast<double>(hits) / static_cast<double>(n);
  if (n < 2) return rep;
  ParamVector m3 = ParamVector::Zero(m), m4 = ParamVector::Zero(m);
  for (const auto& v : rep.standardized) {
    const ParamVector d = v - rep.mean;
    rep.cov += d * d.transpose();
    m3 += d.array().cube().matrix();
    m4 += d.array().square().square().matrix();
  }
  rep.cov /= static_cast<double>(n - 1);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double var = rep.cov(i, i);
    rep.mean_se(i) = std::sqrt(var / static_cast<double>(n));
    const double pop_var = var * static_cast<double>(n - 1) / static_cast<double>(n);
    if (pop_var > 0.0) {
      rep.skewness(i) = m3(i) / static_cast<double>(n) / std::pow(pop_var, 1.5);
      rep.excess_kurtosis(i) = m4(i) / static_cast<double>(n) / (pop_var * pop_var) - 3.0;
    }
  }
  return rep;
}

}  // namespace robhedge
