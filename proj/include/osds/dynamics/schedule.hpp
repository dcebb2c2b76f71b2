#pragma once

#include <Eigen/Dense>

#include <vector>

namespace osds::dynamics {

enum class ScheduleKind { Linear, Cosine };

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::Linear;
  double beta_min = 0.01;
  double beta_max = 10.0;
  double sigma0 = 1.0;
  double horizon = 1.0;
  // Cosine noise-scale schedule.
  double sigma_min = 0.1;
  double sigma_max = 6.4;
  double shift = 0.008;
  double exponent = 1.0;

  void validate() const;
};

/// Noise schedule of the generative process, indexed by generative time t.
///
/// The noising SDE dx = -1/2 beta(s) x ds + sqrt(beta(s)) sigma0 dw runs in
/// s = T - t. In generative time the diffusion coefficient is
/// sigma(t) = sigma0 sqrt(beta(T - t)) and f(t) = -1/2 beta(T - t).
class NoiseSchedule {
 public:
  explicit NoiseSchedule(ScheduleConfig config = {});

  static NoiseSchedule vp(double beta_min = 0.01, double beta_max = 10.0, double sigma0 = 1.0);
  /// beta held at a constant value.
  static NoiseSchedule constant(double beta, double sigma0 = 1.0);

  const ScheduleConfig& config() const { return config_; }
  double horizon() const { return config_.horizon; }
  double sigma0() const { return config_.sigma0; }

  /// Noising-time beta, s in [0, T].
  double noising_beta(double s) const;

  double beta(double t) const;
  double sigma(double t) const;
  double f(double t) const;

  Eigen::VectorXd sigma(const Eigen::VectorXd& t) const;
  Eigen::VectorXd f(const Eigen::VectorXd& t) const;

 private:
  double cosine_sigma(double s) const;

  ScheduleConfig config_;
};

/// Uniform mesh 0 = t_0 < ... < t_N = T.
struct Discretization {
  int n_steps = 1;
  double horizon = 1.0;
  std::vector<double> times;

  static Discretization uniform(int n_steps, double horizon = 1.0);
  double dt(int n) const { return times[static_cast<std::size_t>(n) + 1] - times[static_cast<std::size_t>(n)]; }
  double base_step() const { return horizon / n_steps; }
};

}  // namespace osds::dynamics
