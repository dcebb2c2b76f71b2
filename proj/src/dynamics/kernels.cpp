#include "osds/dynamics/kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace osds::dynamics {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

Eigen::VectorXd isotropic_log_pdf(const Eigen::MatrixXd& diff, const Eigen::VectorXd& var) {
  const double d = static_cast<double>(diff.cols());
  Eigen::VectorXd out(diff.rows());
  for (Eigen::Index i = 0; i < diff.rows(); ++i) {
    out(i) = -0.5 * d * (kLog2Pi + std::log(var(i))) - 0.5 * diff.row(i).squaredNorm() / var(i);
  }
  return out;
}

ad::Var isotropic_log_pdf(const ad::Var& diff, double var) {
  const double d = static_cast<double>(diff.cols());
  return ad::add_scalar(ad::scale(ad::sum_cols(ad::square(diff)), -0.5 / var),
                        -0.5 * d * (kLog2Pi + std::log(var)));
}

Eigen::VectorXd GaussianKernel::log_density(const Eigen::MatrixXd& x,
                                            const Eigen::MatrixXd& given) const {
  return isotropic_log_pdf(x - coef * given, Eigen::VectorXd::Constant(x.rows(), var));
}

EmForward em_forward_step(const Eigen::MatrixXd& x, double t, double dt,
                          const Eigen::MatrixXd& control, const NoiseSchedule& schedule,
                          const Eigen::MatrixXd& xi) {
  if (!(dt > 0.0)) throw std::invalid_argument("em_forward_step: dt must be positive");
  const double sig = schedule.sigma(t);
  EmForward out;
  out.mean = x + (-schedule.f(t) * x + sig * control) * dt;
  out.var = sig * sig * dt;
  out.next = out.mean + sig * std::sqrt(dt) * xi;
  out.log_density =
      isotropic_log_pdf(out.next - out.mean, Eigen::VectorXd::Constant(x.rows(), out.var));
  return out;
}

Eigen::VectorXd em_backward_logdensity(const Eigen::MatrixXd& x, const Eigen::MatrixXd& x_next,
                                       double t_next, double dt, const NoiseSchedule& schedule) {
  const GaussianKernel k = em_backward_kernel(t_next, dt, schedule);
  return k.log_density(x, x_next);
}

ad::Var em_backward_logdensity(const ad::Var& x, const ad::Var& x_next, double t_next, double dt,
                               const NoiseSchedule& schedule) {
  const GaussianKernel k = em_backward_kernel(t_next, dt, schedule);
  return isotropic_log_pdf(ad::sub(x, ad::scale(x_next, k.coef)), k.var);
}

GaussianKernel em_forward_kernel(double t, double dt, const NoiseSchedule& schedule) {
  const double sig = schedule.sigma(t);
  return {1.0 - schedule.f(t) * dt, sig * sig * dt};
}

GaussianKernel em_backward_kernel(double t_next, double dt, const NoiseSchedule& schedule) {
  const double sig = schedule.sigma(t_next);
  return {1.0 + schedule.f(t_next) * dt, sig * sig * dt};
}

GaussianKernel kalman_time_adjoint(double prior_var, double a, double q) {
  if (!(prior_var > 0.0) || !(q >= 0.0)) {
    throw std::invalid_argument("kalman_time_adjoint: need prior_var > 0 and Q >= 0");
  }
  const double s = a * a * prior_var + q;
  return {prior_var * a / s, prior_var - prior_var * prior_var * a * a / s};
}

double gaussian_kl(double m1, double v1, double m2, double v2) {
  return 0.5 * (std::log(v2 / v1) + (v1 + (m1 - m2) * (m1 - m2)) / v2 - 1.0);
}

}  // namespace osds::dynamics
