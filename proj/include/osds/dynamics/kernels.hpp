#pragma once

#include "osds/diffcore/autodiff.hpp"
#include "osds/dynamics/schedule.hpp"

#include <Eigen/Dense>

namespace osds::dynamics {

/// Linear-Gaussian transition x | given ~ N(coef * given, var * I).
struct GaussianKernel {
  double coef = 1.0;
  double var = 1.0;

  /// One value per row.
  Eigen::VectorXd log_density(const Eigen::MatrixXd& x, const Eigen::MatrixXd& given) const;
};

/// log N(diff; 0, var_i I) per row i.
Eigen::VectorXd isotropic_log_pdf(const Eigen::MatrixXd& diff, const Eigen::VectorXd& var);
ad::Var isotropic_log_pdf(const ad::Var& diff, double var);

struct EmForward {
  Eigen::MatrixXd next;
  Eigen::MatrixXd mean;
  double var = 0.0;
  Eigen::VectorXd log_density;
};

/// Generative Euler-Maruyama step x' = x + (-f(t) x + sigma(t) u) dt + sigma(t) sqrt(dt) xi,
/// with the Gaussian log-kernel evaluated at x'.
EmForward em_forward_step(const Eigen::MatrixXd& x, double t, double dt,
                          const Eigen::MatrixXd& control, const NoiseSchedule& schedule,
                          const Eigen::MatrixXd& xi);

/// Surrogate backward kernel: log N(x; x' + f(t') x' dt, sigma(t')^2 dt I), t' the
/// right endpoint of the step.
Eigen::VectorXd em_backward_logdensity(const Eigen::MatrixXd& x, const Eigen::MatrixXd& x_next,
                                       double t_next, double dt, const NoiseSchedule& schedule);
ad::Var em_backward_logdensity(const ad::Var& x, const ad::Var& x_next, double t_next, double dt,
                               const NoiseSchedule& schedule);

/// Uncontrolled forward EM kernel of one step starting at t.
GaussianKernel em_forward_kernel(double t, double dt, const NoiseSchedule& schedule);
/// Surrogate backward EM kernel for the step ending at t_next.
GaussianKernel em_backward_kernel(double t_next, double dt, const NoiseSchedule& schedule);

/// Exact Bayes reversal of x1 = A x0 + N(0, Q) under x0 ~ N(0, prior_var).
GaussianKernel kalman_time_adjoint(double prior_var, double a, double q);

/// KL(N(m1, v1) || N(m2, v2)) for scalars.
double gaussian_kl(double m1, double v1, double m2, double v2);

}  // namespace osds::dynamics
