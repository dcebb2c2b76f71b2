#pragma once

#include "osds/controlnet/controlnet.hpp"
#include "osds/dynamics/pf.hpp"
#include "osds/dynamics/schedule.hpp"
#include "osds/targets/targets.hpp"
#include "osds/trainer/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace osds::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TargetSpec {
  std::string kind;  // gmm | funnel | manywell | logistic
  int dim = 2;
  // gmm: explicit modes, or n_modes random means in [box_lo, box_hi]^dim
  std::vector<targets::MixtureMode> modes;
  int n_modes = 40;
  double box_lo = -40.0;
  double box_hi = 40.0;
  double mode_scale = 1.0;
  std::uint64_t seed = 0;
  // manywell
  int wells = 5;
  double delta = 4.0;
  // logistic
  std::string csv;
  bool standardize = true;
  double prior_scale = 1.0;
  bool intercept = true;
};

struct EvalProtocol {
  int runs = 20;
  Eigen::Index samples = 2000;
  std::vector<int> nfe_list{1, 2, 4, 8, 16, 32, 64, 128};
  int substeps = 1;
  dynamics::PfOptions pf;
  bool eubo = true;
  bool sinkhorn = true;
  Eigen::Index sinkhorn_samples = 500;
  bool use_ema = true;
  std::uint64_t seed = 0;
  /// Step the stochastic sampler's control is conditioned on; zero means the
  /// training base step.
  double fb_condition_step = 0.0;
};

struct Config {
  TargetSpec target;
  double prior_scale = 1.0;
  dynamics::ScheduleConfig schedule;
  controlnet::NetworkConfig network;
  trainer::TrainConfig train;
  EvalProtocol eval;
  std::string output_dir = "osds_run";

  /// Parses and validates; unknown keys and a missing target.kind are errors.
  static Config from_json(const nlohmann::json& j);
  static Config from_string(const std::string& text);
  static Config load(const std::string& path);
  /// Fully resolved configuration, every key present.
  nlohmann::ordered_json to_json() const;
};

targets::TargetPtr make_target(const TargetSpec& spec);

std::string to_string(dynamics::SolverKind k);
std::string to_string(dynamics::DivergenceMode m);
std::string to_string(ProbeKind p);

}  // namespace osds::cli
