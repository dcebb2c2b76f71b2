#pragma once

#include "osds/controlnet/controlnet.hpp"
#include "osds/diffcore/rng.hpp"
#include "osds/dynamics/pf.hpp"
#include "osds/dynamics/schedule.hpp"
#include "osds/losses/losses.hpp"
#include "osds/targets/targets.hpp"
#include "osds/trainer/optim.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace osds::trainer {

struct TrainConfig {
  int iterations = 1000;
  Eigen::Index batch = 256;
  int base_steps = 32;
  /// Distillation anchors per iteration; zero means `batch`.
  Eigen::Index anchors = 0;
  AdamConfig adam;
  double clip = 1.0;
  double ema_decay = 0.999;
  losses::LossWeights weights;
  int checkpoint_every = 0;
  int ma_window = 10;
  std::uint64_t seed = 0;
  int distill_substeps = 1;
  dynamics::PfOptions pf;

  void validate() const;
};

struct IterationLog {
  int iteration = 0;
  double loss = 0.0;
  double rnd = 0.0;
  double state = 0.0;
  double vol = 0.0;
  double jac = 0.0;
  double elbo = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  int dropped = 0;

  nlohmann::ordered_json to_json() const;
};

struct TrainState {
  ParameterVector theta;
  ParameterVector ema;
  AdamState adam;
  int iteration = 0;
  double lr = 0.0;
  RngState rng;
};

struct TrainResult {
  TrainState final_state;
  TrainState best_state;
  double best_ma_elbo = 0.0;
  bool has_best = false;
  std::vector<IterationLog> log;
  long nfe_simulation = 0;
  long nfe_distillation = 0;
  int nan_restarts = 0;
};

struct TrainHooks {
  std::function<void(const IterationLog&)> on_iteration;
  std::function<void(const TrainState&, const std::string& tag)> on_checkpoint;
};

/// Network evaluations per sample added by one distillation pair: two teacher
/// half-steps and one student step.
constexpr int kDistillNfePerAnchor = 3;

/// Runs OSDS training from `net`'s parameters (or from `resume`).
TrainResult train(const TrainConfig& config, const controlnet::ControlNet& net,
                  targets::TargetPtr target, const targets::GaussianPrior& prior,
                  const dynamics::NoiseSchedule& schedule, const TrainHooks& hooks = {},
                  const TrainState* resume = nullptr);

}  // namespace osds::trainer
