#pragma once

#include "osds/cli/checkpoint.hpp"
#include "osds/cli/config.hpp"
#include "osds/controlnet/controlnet.hpp"
#include "osds/estimators/weights.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>

namespace osds::cli {

/// Resolves `dir` against the OSDS_OUTPUT_ROOT environment variable when it is
/// relative and the variable is set.
std::string output_path(const std::string& dir);

/// Everything needed to sample from a stored run.
struct LoadedRun {
  Config config;
  targets::TargetPtr target;
  targets::GaussianPrior prior = targets::GaussianPrior::standard(1);
  dynamics::NoiseSchedule schedule;
  controlnet::ControlNet net;
  trainer::TrainState state;

  /// PF sampler over the EMA (or raw) parameters.
  estimators::FlowSampler sampler(bool use_ema, const dynamics::PfOptions& pf, int substeps) const;
  dynamics::ControlFn control(bool use_ema) const;
};

LoadedRun load_run(const std::string& checkpoint_path);

int cmd_train(const std::string& config_path, const std::string& out, std::ostream& log);

int cmd_sample(const std::string& checkpoint_path, int nfe, Eigen::Index samples,
               std::uint64_t seed, const std::string& out, std::ostream& log);

struct EvalOverrides {
  std::optional<int> runs;
  std::optional<Eigen::Index> samples;
  std::optional<std::uint64_t> seed;
};

int cmd_eval(const std::string& checkpoint_path, const std::string& out, std::ostream& log,
             const EvalOverrides& overrides = {});

struct DiagnoseParams {
  double beta = 10.0;
  double sigma0_sq = 1.0;
  std::optional<std::int64_t> n;
  std::optional<std::int64_t> batch;
  std::optional<std::int64_t> iterations;
};

/// kind is "kernel-gap" or "nfe-cost"; anything else is a usage error.
int cmd_diagnose(const std::string& kind, const DiagnoseParams& params, const std::string& out,
                 std::ostream& log);

}  // namespace osds::cli
