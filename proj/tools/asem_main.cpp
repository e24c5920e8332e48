// Command-line front end: argument parsing only, all work happens in the
// command layer.  See README for the config schema.

#include <cstdint>
#include <string>

#include <CLI11.hpp>

#include "asem/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Adversarial training, oracles and experiment sweeps for "
               "structural equation estimation"};
  app.require_subcommand(1);

  asem::CliOptions opt;
  std::uint64_t seed_value = 0;
  app.add_option("--config", opt.config_path, "Path to the JSON run config")
      ->type_name("PATH");
  CLI::Option* seed_opt =
      app.add_option("--seed", seed_value,
                     "Override the config seed (sweeps collapse to this one seed)");
  app.add_option("--out", opt.out_dir, "Output directory (created if missing)")
      ->type_name("DIR");
  app.add_option("--workers", opt.workers, "Parallel sweep cells, 0 = all cores");
  app.add_flag("--json", opt.json, "Also write experiment rows as JSON");

  app.add_subcommand("simulate", "Generate sample batches from a design")->fallthrough();
  app.add_subcommand("train", "Run the minimax training loop and summarize")
      ->fallthrough();
  app.add_subcommand("oracle", "Solve or decompose a discrete instance exactly")
      ->fallthrough();
  app.add_subcommand("experiment", "Run an experiment sweep")->fallthrough();
  app.add_subcommand("audit", "Check analytic gradients against finite differences")
      ->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (seed_opt->count() > 0) opt.seed = seed_value;
  return asem::run_cli(app.get_subcommands().front()->get_name(), opt);
}
