#pragma once

#include "osds/diffcore/autodiff.hpp"
#include "osds/diffcore/rng.hpp"
#include "osds/dynamics/kernels.hpp"
#include "osds/dynamics/schedule.hpp"
#include "osds/targets/targets.hpp"

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace osds::dynamics {

/// Control u(x, t, d) as a graph function. `t` and `d` hold one value per row.
using ControlFn = std::function<ad::Dual(const ad::Dual& x, const Eigen::VectorXd& t,
                                         const Eigen::VectorXd& d)>;

ControlFn zero_control();

class SimulationError : public std::runtime_error {
 public:
  SimulationError(const std::string& what, int step) : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

/// Differentiable forward path: states and summed forward / surrogate-backward
/// log-kernels, each B x 1.
struct PathGraph {
  std::vector<ad::Var> states;
  ad::Var log_forward;
  ad::Var log_backward;
  Eigen::MatrixXd forward_steps;   // B x N
  Eigen::MatrixXd backward_steps;  // B x N
};

/// Runs the EM chain from x0 with pre-drawn standard normal increments.
/// The control is conditioned on `condition_step`.
PathGraph simulate_path(const ControlFn& u, const NoiseSchedule& schedule,
                        const Discretization& disc, const ad::Var& x0,
                        const std::vector<Eigen::MatrixXd>& noise, double condition_step);

struct Trajectory {
  std::vector<Eigen::MatrixXd> states;  // N + 1 entries, each B x D
  std::vector<double> times;
  Eigen::MatrixXd forward_logp;   // B x N
  Eigen::MatrixXd backward_logp;  // B x N
  std::vector<Eigen::MatrixXd> noise;
  Eigen::VectorXd prior_logp;

  Eigen::Index batch() const { return states.front().rows(); }
  int n_steps() const { return static_cast<int>(states.size()) - 1; }
};

struct SimulateOptions {
  /// Step size fed to the control; zero means the mesh step.
  double condition_step = 0.0;
  bool abort_on_nonfinite = true;
};

/// x0 ~ prior, then N EM steps. Draw order: x0, then one increment per step.
Trajectory simulate_forward(const ControlFn& u, const NoiseSchedule& schedule,
                            const targets::GaussianPrior& prior, const Discretization& disc,
                            Rng& rng, Eigen::Index batch, const SimulateOptions& options = {});

/// Re-runs a chain from given x0 and increments.
Trajectory replay(const ControlFn& u, const NoiseSchedule& schedule,
                  const targets::GaussianPrior& prior, const Discretization& disc,
                  const Eigen::MatrixXd& x0, const std::vector<Eigen::MatrixXd>& noise,
                  const SimulateOptions& options = {});

}  // namespace osds::dynamics
