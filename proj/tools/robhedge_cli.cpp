#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "robhedge/app/commands.hpp"

int main(int argc, char** argv) {
  using namespace robhedge::app;
  CLI::App app{"Robust drift estimation and volatility-robust hedging"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  std::uint64_t seed = 0;
  std::string out;
  auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides the config)");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
  auto* out_opt = app.add_option("--out", out, "output directory (overrides the config)");
  app.add_option("--config", g.config, "config JSON");

  std::string path_csv, resume;
  auto* simulate = app.add_subcommand("simulate", "simulate a market: prices, yields, volatility factor");
  auto* reconstruct = app.add_subcommand("reconstruct", "volatility factor from prices");
  auto* estimate = app.add_subcommand("estimate", "robust drift estimate and confidence region");
  auto* path_opt = estimate->add_option("--path", path_csv, "factor path CSV used instead of reconstruction");
  auto* ctune = app.add_subcommand("ctune", "optimal truncation level for a scalar parameter");
  auto* hedge = app.add_subcommand("hedge", "robust hedge for a constant-center volatility band");
  auto* pde = app.add_subcommand("pde", "value surface from the pricing PDE");
  auto* mc = app.add_subcommand("mc", "Monte-Carlo study of the estimator");
  auto* pipeline = app.add_subcommand("pipeline", "prices to robust hedge, all stages");
  pipeline->add_option("--resume-from", resume, "reuse stored artifacts up to this stage")
      ->check(CLI::IsMember({"estimate", "hedge"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (*seed_opt) g.seed = seed;
  if (*out_opt) g.out = out;

  const std::string name = app.get_subcommands().front()->get_name();
  return guarded(name, [&]() -> int {
    if (*simulate) return cmd_simulate(g);
    if (*reconstruct) return cmd_reconstruct(g);
    if (*estimate) return cmd_estimate(g, *path_opt ? std::optional<std::string>(path_csv) : std::nullopt);
    if (*ctune) return cmd_ctune(g);
    if (*hedge) return cmd_hedge(g);
    if (*pde) return cmd_pde(g);
    if (*mc) return cmd_mc(g);
    return cmd_pipeline(g, resume);
  });
}
