#include "osds/cli/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"osds: step-conditioned diffusion sampler with deterministic-flow evidence estimates"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out;
  auto* train = app.add_subcommand("train", "train a sampler from a config file");
  train->add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "output directory (relative paths use OSDS_OUTPUT_ROOT)");

  std::string checkpoint;
  int nfe = 1;
  long samples = 2000;
  std::uint64_t seed = 0;
  auto* sample = app.add_subcommand("sample", "draw samples and DF weights from a checkpoint");
  sample->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  sample->add_option("--nfe", nfe, "flow steps per sample")->check(CLI::PositiveNumber);
  sample->add_option("--samples", samples, "number of samples")->check(CLI::PositiveNumber);
  sample->add_option("--seed", seed, "random seed");
  sample->add_option("--out", out, "output directory");

  osds::cli::EvalOverrides overrides;
  auto* eval = app.add_subcommand("eval", "run the evaluation protocol on a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", out, "output directory");
  eval->add_option("--runs", overrides.runs, "override the number of runs");
  eval->add_option("--samples", overrides.samples, "override samples per run");
  eval->add_option("--seed", overrides.seed, "override the base seed");

  std::string kind;
  osds::cli::DiagnoseParams dp;
  auto* diagnose = app.add_subcommand("diagnose", "closed-form diagnostics");
  diagnose->add_option("kind", kind, "kernel-gap or nfe-cost")
      ->required()
      ->check(CLI::IsMember({"kernel-gap", "nfe-cost"}));
  diagnose->add_option("--beta", dp.beta, "beta for kernel-gap");
  diagnose->add_option("--sigma0-sq", dp.sigma0_sq, "prior variance for kernel-gap");
  diagnose->add_option("--N", dp.n, "base steps for nfe-cost");
  diagnose->add_option("--B", dp.batch, "batch size for nfe-cost");
  diagnose->add_option("--I", dp.iterations, "iterations for nfe-cost");
  diagnose->add_option("--out", out, "directory for the JSON report");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return osds::cli::cmd_train(config_path, out, std::cout);
    if (*sample) return osds::cli::cmd_sample(checkpoint, nfe, samples, seed, out, std::cout);
    if (*eval) return osds::cli::cmd_eval(checkpoint, out, std::cout, overrides);
    if (*diagnose) return osds::cli::cmd_diagnose(kind, dp, out, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
