#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace robhedge {

/// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of the noise stream for (master, replicate, component). Each argument
/// passes through its own SplitMix64 round, so neighbouring replicates and
/// components get unrelated seeds and the mapping does not depend on the order
/// in which replicates are executed.
constexpr std::uint64_t mix_seed(std::uint64_t master, std::uint64_t replicate,
                                 std::uint64_t component) noexcept {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ splitmix64(replicate + 0x632BE59BD9B4E019ULL));
  h = splitmix64(h ^ splitmix64(component + 0x85157AF5ULL));
  return h;
}

/// Deterministic seeding contract: replicate k, component j draws from a
/// mt19937_64 seeded with mix_seed(master_seed, k, j).
struct SeedSpec {
  std::uint64_t master_seed = 0;
  std::uint64_t replicate = 0;

  SeedSpec with_replicate(std::uint64_t k) const { return {master_seed, k}; }

  std::mt19937_64 engine(std::uint64_t component) const {
    return std::mt19937_64(mix_seed(master_seed, replicate, component));
  }
};

/// Fills `out` with Brownian increments sqrt(dt_j) * Z_j drawn from one stream.
template <class DtFn>
void fill_brownian_increments(const SeedSpec& seed, std::uint64_t component, DtFn&& dt,
                              std::span<double> out) {
  auto eng = seed.engine(component);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = std::sqrt(dt(j)) * normal(eng);
}

}  // namespace robhedge
