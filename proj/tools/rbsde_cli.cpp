// rbsde: solve, oracle, price and verify from a JSON run configuration.

#include <iostream>

#include "CLI11.hpp"
#include "rbsde/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Reflected BSDEs on a Brownian-Poisson lattice"};
  app.require_subcommand(1);
  app.fallthrough();

  rbsde::CommandOptions opt;
  std::string parallel = "on";
  std::string config;
  std::uint64_t seed = 0;
  std::string out, format;
  int refine = 0;

  app.add_option("--config", config, "Run configuration (JSON)");
  app.add_option("--seed", seed, "Seed for generators and randomized suites");
  app.add_option("--out", out, "Output directory");
  app.add_option("--format", format, "Output formats")->check(CLI::IsMember({"csv", "json", "both"}));
  app.add_option("--parallel", parallel, "Worker threads on or off")->check(CLI::IsMember({"on", "off"}));

  app.add_subcommand("solve", "Solve the reflected BSDE and export the solution");
  app.add_subcommand("oracle", "Compare the solver with brute-force optimal stopping");
  auto* price = app.add_subcommand("price", "Price an American option and check the superhedge");
  price->add_option("--refine", refine, "Number of step doublings for the shortfall sweep");
  auto* verify = app.add_subcommand("verify", "Run randomized property suites");
  verify->add_option("--check", opt.checks, "Suite to run (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (app.count("--config")) opt.config_path = config;
  if (app.count("--seed")) opt.seed = seed;
  if (app.count("--out")) opt.out_dir = out;
  if (app.count("--format")) opt.format = format;
  if (price->count("--refine")) opt.refine = refine;
  rbsde::set_parallel(parallel == "on");

  const std::string command = app.get_subcommands().front()->get_name();
  return rbsde::run_command(command, opt, std::cout, std::cerr);
}
