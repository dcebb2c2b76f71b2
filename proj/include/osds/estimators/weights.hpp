#pragma once

#include "osds/diffcore/rng.hpp"
#include "osds/dynamics/kernels.hpp"
#include "osds/dynamics/pf.hpp"
#include "osds/dynamics/schedule.hpp"
#include "osds/dynamics/simulate.hpp"
#include "osds/targets/targets.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>

namespace osds::estimators {

enum class WeightKind { DF, FB };
std::string to_string(WeightKind kind);

/// Finite log importance weights with their provenance.
struct WeightSet {
  Eigen::VectorXd log_weights;
  WeightKind kind = WeightKind::DF;
  int n_dropped = 0;
  std::string run_id;
  int nfe = 0;
  std::uint64_t seed = 0;

  /// Keeps the finite entries of `raw` and counts the rest. Throws when none is finite.
  static WeightSet from_raw(const Eigen::VectorXd& raw, WeightKind kind, int nfe = 0,
                            std::uint64_t seed = 0, std::string run_id = {});
  Eigen::Index size() const { return log_weights.size(); }
};

/// The deterministic-flow sampler: PF transport of the prior toward the target.
struct FlowSampler {
  dynamics::ControlFn control;
  dynamics::NoiseSchedule schedule;
  targets::GaussianPrior prior = targets::GaussianPrior::standard(1);
  targets::TargetPtr target;
  dynamics::PfOptions pf;
  int substeps = 1;
};

struct DfResult {
  Eigen::VectorXd log_weights;  // raw, may hold non-finite entries
  Eigen::MatrixXd samples;      // transported points
  Eigen::VectorXd ell;          // accumulated log-volume
};

/// log w = log rho(phi(x0)) + ell - log p_prior(x0) over `n_steps` segments of
/// size T / n_steps, each conditioned on its own size.
DfResult df_log_weights(const FlowSampler& sampler, const Eigen::MatrixXd& x0, int n_steps,
                        Rng& rng);

/// Forward weights log rho(y) - log q(y) for target samples y, by integrating
/// the flow backward in time and negating the accumulated volume.
Eigen::VectorXd df_forward_log_weights(const FlowSampler& sampler, const Eigen::MatrixXd& y,
                                       int n_steps, Rng& rng);

/// log rho(x_N) - log p_prior(x_0) + sum_n [log p~(x_n | x_{n+1}) - log p(x_{n+1} | x_n)].
Eigen::VectorXd fb_log_weights(const dynamics::Trajectory& trajectory,
                               const targets::TargetDensity& target);

/// Same with a caller-supplied backward log-kernel for step n.
using BackwardLogDensity = std::function<Eigen::VectorXd(
    const Eigen::MatrixXd& x, const Eigen::MatrixXd& x_next, int n)>;
Eigen::VectorXd fb_log_weights(const dynamics::Trajectory& trajectory,
                               const targets::TargetDensity& target,
                               const BackwardLogDensity& backward);

/// Forward FB weights: x_N ~ target, surrogate backward chain to x_0, then
/// log rho(x_N) + sum log p~ - log p_prior(x_0) - sum log p.
Eigen::VectorXd fb_forward_log_weights(const dynamics::ControlFn& control,
                                       const dynamics::NoiseSchedule& schedule,
                                       const targets::GaussianPrior& prior,
                                       const targets::TargetDensity& target,
                                       const dynamics::Discretization& disc,
                                       const Eigen::MatrixXd& y, double condition_step, Rng& rng);

/// -E_{x1 ~ N(0, marginal_var)} KL(p_true(.|x1) || p_surrogate(.|x1)) in closed form.
double gaussian_entropy_gap(const dynamics::GaussianKernel& p_true,
                            const dynamics::GaussianKernel& p_surrogate, double marginal_var);

}  // namespace osds::estimators
