#pragma once

#include "osds/diffcore/autodiff.hpp"
#include "osds/diffcore/rng.hpp"
#include "osds/dynamics/schedule.hpp"
#include "osds/dynamics/simulate.hpp"

#include <Eigen/Dense>

#include <functional>

namespace osds::dynamics {

/// State together with the accumulated log-volume (both B-row graph values).
struct AugmentedState {
  ad::Var x;
  ad::Var ell;  // B x 1

  static AugmentedState start(const ad::Var& x);
  static AugmentedState start(const Eigen::MatrixXd& x) { return start(ad::constant(x)); }
};

/// Time-dependent field b(x, t) with one time per row.
using TimeField = std::function<ad::Dual(const ad::Dual& x, const Eigen::VectorXd& t)>;

enum class SolverKind { RK4, Euler, Custom };
enum class DivergenceMode { None, Hutchinson, Exact };

struct StepResult {
  ad::Var x;
  ad::Var dell;  // B x 1
};
/// One solver step of size h from time t (per row).
using CustomStep = std::function<StepResult(const ad::Var& x, const Eigen::VectorXd& t,
                                            const Eigen::VectorXd& h)>;

struct PfOptions {
  SolverKind solver = SolverKind::RK4;
  DivergenceMode divergence = DivergenceMode::Hutchinson;
  ProbeKind probe = ProbeKind::Rademacher;
  int probes = 1;
  bool allow_nonfinite = false;
  CustomStep custom;
};

/// b = 1/2 sigma(t) u(x, t, d) - f(t) x.
ad::Dual pf_drift(const ControlFn& u, const NoiseSchedule& schedule, const ad::Dual& x,
                  const Eigen::VectorXd& t, const Eigen::VectorXd& d);

/// The drift as a TimeField with the step conditioning fixed.
TimeField pf_field(ControlFn u, const NoiseSchedule& schedule, Eigen::VectorXd d);

/// Integrates (x, ell) over [t_start, t_start + span] in `substeps` equal steps.
/// A negative span integrates backward in time. With Hutchinson divergence one
/// probe set is drawn from `rng` per substep, unless `shared_probe` is given, in
/// which case it is used at every substep.
AugmentedState integrate_pf(const TimeField& b, const AugmentedState& start,
                            const Eigen::VectorXd& t_start, const Eigen::VectorXd& span,
                            int substeps, const PfOptions& options, Rng* rng = nullptr,
                            const Eigen::MatrixXd* shared_probe = nullptr);

}  // namespace osds::dynamics
