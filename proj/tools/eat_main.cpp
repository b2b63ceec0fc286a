// eat: train small networks with an activation-sparsity penalty and measure
// what a zero-skipping accelerator would save.
//
// Exit codes: 0 success, 1 config error, 2 runtime/divergence, 3 I/O error.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "eat/experiment.hpp"

#include "CLI11.hpp"

namespace {

eat::ExperimentSpec load_spec(const std::string& path,
                              const std::optional<uint64_t>& seed_override) {
  eat::ExperimentSpec spec = eat::ExperimentSpec::from_file(path);
  if (seed_override) {
    // Overrides the experiment seed (init + training + default dataset seed);
    // an explicit dataset.seed in the spec is kept.
    spec.seed = *seed_override;
    spec.train.seed = *seed_override;
  }
  return spec;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "energy-aware training and zero-skipping energy simulation for small "
      "neural networks"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, checkpoint;
  std::optional<uint64_t> seed_override;
  std::vector<std::string> run_dirs;

  CLI::App* cmd_train =
      app.add_subcommand("train", "train a model from a spec file");
  cmd_train->add_option("--spec", spec_path, "experiment spec (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd_train->add_option("--out", out_dir, "output directory");
  cmd_train->add_option("--seed", seed_override, "override the spec seed");

  CLI::App* cmd_energy = app.add_subcommand(
      "energy", "simulate zero-skipping energy for a checkpoint");
  cmd_energy->add_option("--spec", spec_path, "experiment spec (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd_energy->add_option("--checkpoint", checkpoint, "model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  cmd_energy->add_option("--out", out_dir, "output directory");
  cmd_energy->add_option("--seed", seed_override, "override the spec seed");

  CLI::App* cmd_ablate = app.add_subcommand(
      "ablate", "train one model per (sigma, lambda) grid cell");
  cmd_ablate->add_option("--spec", spec_path, "experiment spec (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd_ablate->add_option("--out", out_dir, "output directory");
  cmd_ablate->add_option("--seed", seed_override, "override the spec seed");

  CLI::App* cmd_report = app.add_subcommand(
      "report", "compare trained runs against their ST baselines");
  cmd_report->add_option("dirs", run_dirs, "run directories with summary.json")
      ->expected(-2);
  cmd_report->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (cmd_train->parsed()) {
      eat::run_train(load_spec(spec_path, seed_override), out_dir);
    } else if (cmd_energy->parsed()) {
      eat::run_energy(load_spec(spec_path, seed_override), checkpoint, out_dir);
    } else if (cmd_ablate->parsed()) {
      eat::run_ablate(load_spec(spec_path, seed_override), out_dir);
    } else if (cmd_report->parsed()) {
      eat::run_report(run_dirs, out_dir);
    }
  } catch (const eat::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const eat::ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const eat::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const eat::DivergenceError& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
