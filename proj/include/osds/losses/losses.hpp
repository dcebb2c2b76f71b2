#pragma once

#include "osds/controlnet/controlnet.hpp"
#include "osds/diffcore/autodiff.hpp"
#include "osds/diffcore/params.hpp"
#include "osds/diffcore/rng.hpp"
#include "osds/dynamics/pf.hpp"
#include "osds/dynamics/schedule.hpp"
#include "osds/dynamics/simulate.hpp"
#include "osds/targets/targets.hpp"

#include <Eigen/Dense>

#include <vector>

namespace osds::losses {

struct LossWeights {
  double state = 1.0;
  double vol = 0.25;
  double jac = 0.0;

  void validate() const;
};

struct RndResult {
  ad::Var loss;                          // 1 x 1
  Eigen::VectorXd log_weights;           // FB log-weights of the kept paths
  std::vector<Eigen::MatrixXd> states;   // kept paths, N + 1 entries of B' x D
  int dropped = 0;
};

/// Mean over the batch of
///   sum_n [log p(x_{n+1} | x_n) - log p~(x_n | x_{n+1})] + log p_prior(x_0) - log rho(x_N)
/// with the surrogate EM backward kernel. Differentiable through the states.
/// Paths with a non-finite value are dropped and the rest replayed.
RndResult rnd_loss(const dynamics::ControlFn& u, const dynamics::NoiseSchedule& schedule,
                   const targets::GaussianPrior& prior, const targets::TargetDensity& target,
                   const dynamics::Discretization& disc, Rng& rng, Eigen::Index batch);

/// Anchors for self-distillation. Each anchor jumps by d = 2^k d0 from t with t + d <= T.
struct DistillBatch {
  Eigen::MatrixXd x;
  Eigen::VectorXd t;
  Eigen::VectorXd d;
  Eigen::MatrixXd probe;  // one shared Hutchinson probe per anchor

  Eigen::Index size() const { return x.rows(); }
};

/// Draws anchors uniformly over path states and admissible powers of two.
DistillBatch sample_anchors(const std::vector<Eigen::MatrixXd>& states,
                            const dynamics::Discretization& disc, Rng& rng, Eigen::Index count,
                            ProbeKind probe_kind);

struct DistillResult {
  ad::Var state;  // 1 x 1
  ad::Var vol;    // 1 x 1, undefined when volumes are off
};

/// One student step of size d against two frozen teacher half-steps.
DistillResult distill_losses(const dynamics::ControlFn& student,
                             const dynamics::ControlFn& teacher,
                             const dynamics::NoiseSchedule& schedule, const DistillBatch& batch,
                             const dynamics::PfOptions& options, int substeps, bool with_volume);

ad::Var state_loss(const dynamics::ControlFn& student, const dynamics::ControlFn& teacher,
                   const dynamics::NoiseSchedule& schedule, const DistillBatch& batch,
                   const dynamics::PfOptions& options, int substeps = 1);

ad::Var vol_loss(const dynamics::ControlFn& student, const dynamics::ControlFn& teacher,
                 const dynamics::NoiseSchedule& schedule, const DistillBatch& batch,
                 const dynamics::PfOptions& options, int substeps = 1);

/// Mean over anchors of (1/d) ||J_u v||^2 with one Rademacher v per anchor.
ad::Var jac_loss(const dynamics::ControlFn& u, const DistillBatch& batch, Rng& rng);

struct LossContext {
  const controlnet::ControlNet* net = nullptr;
  targets::TargetPtr target;
  targets::GaussianPrior prior = targets::GaussianPrior::standard(1);
  dynamics::NoiseSchedule schedule;
  dynamics::Discretization disc = dynamics::Discretization::uniform(2);
  dynamics::PfOptions pf;
  int distill_substeps = 1;
  Eigen::Index batch = 1;
  Eigen::Index anchors = 1;
  LossWeights weights;
};

struct CompositeResult {
  ad::Var total;
  double rnd = 0.0;
  double state = 0.0;
  double vol = 0.0;
  double jac = 0.0;
  double elbo = 0.0;  // mean FB log-weight of the kept paths
  int dropped = 0;
};

/// L_RND + w.state L_state + w.vol L_vol + w.jac L_jac. The teacher uses a
/// constant copy of `teacher_values`.
CompositeResult composite_loss(const LossContext& ctx, const ParamBinding& theta,
                               const ParameterVector& teacher_values, Rng& rng);

}  // namespace osds::losses
