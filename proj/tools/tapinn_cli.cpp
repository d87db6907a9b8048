// SPDX-License-Identifier: Apache-2.0
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tapinn/commands.hpp"

namespace {

std::vector<tapinn::Method> parse_methods(const std::string& arg) {
  if (arg == "all") return tapinn::all_methods();
  std::vector<tapinn::Method> out;
  for (const auto& m : tapinn::detail::split_list(arg)) out.push_back(tapinn::method_from_string(m));
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& arg) {
  std::vector<std::uint64_t> out;
  for (const auto& s : tapinn::detail::split_list(arg)) out.push_back(tapinn::detail::to_u64("--seeds", s));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TAPINN benchmark on the forced Duffing oscillator"};
  app.require_subcommand(0, 1);
  bool dump_flag = false;
  app.add_flag("--dump-defaults", dump_flag, "Print every config key with its default and exit");

  std::string config, out, data, runs_dir, run_dir, method, seeds;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  auto* gen = app.add_subcommand("generate", "Simulate the dataset and write CSVs plus manifest");
  gen->add_option("--config", config, "Config file")->required();
  gen->add_option("--seed", seed, "Dataset seed")->required();
  gen->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train one or more (method, seed) runs");
  train->add_option("--config", config, "Config file")->required();
  train->add_option("--method", method, "Method, comma list, or 'all'")->required();
  auto* seed_opt = train->add_option("--seed", seed, "Training seed");
  auto* seeds_opt = train->add_option("--seeds", seeds, "Comma-separated training seeds");
  seed_opt->excludes(seeds_opt);
  train->add_option("--out", out, "Run directory (or root of method/seedK subdirectories)")->required();
  train->add_option("--data", data, "Dataset directory, overrides dataset.path");
  train->add_option("--jobs", jobs, "Parallel runs")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("evaluate", "Evaluate a finished run into eval.json");
  eval->add_option("--run-dir", run_dir, "Run directory")->required();

  auto* cmp = app.add_subcommand("compare", "Aggregate evaluated runs into a comparison table");
  cmp->add_option("--runs-dir", runs_dir, "Directory searched for runs")->required();
  cmp->add_option("--out", out, "Where to write aggregate.csv, table.txt, compare.json (default: runs dir)");

  auto* dump = app.add_subcommand("dump-defaults", "Print every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return tapinn::kExitUsage;
  }

  tapinn::Console io;
  if (dump_flag || dump->parsed()) return tapinn::cmd_dump_defaults(io);
  if (gen->parsed()) return tapinn::cmd_generate(config, seed, out, io);
  if (train->parsed()) {
    tapinn::TrainRequest req;
    req.config = config;
    req.out = out;
    req.data = data;
    req.jobs = jobs;
    try {
      req.methods = parse_methods(method);
      req.seeds = seeds_opt->count() ? parse_seeds(seeds) : std::vector<std::uint64_t>{seed};
    } catch (const tapinn::ConfigError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return tapinn::kExitUsage;
    }
    return tapinn::cmd_train(req, io);
  }
  if (eval->parsed()) return tapinn::cmd_evaluate(run_dir, io);
  if (cmp->parsed()) return tapinn::cmd_compare(runs_dir, out, io);
  std::cerr << app.help();
  return tapinn::kExitUsage;
}
