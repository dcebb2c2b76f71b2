#include "osds/dynamics/schedule.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace osds::dynamics {

void ScheduleConfig::validate() const {
  if (!(sigma0 > 0.0)) throw std::invalid_argument("schedule: sigma0 must be positive");
  if (!(horizon > 0.0)) throw std::invalid_argument("schedule: horizon must be positive");
  if (kind == ScheduleKind::Linear) {
    if (!(beta_min > 0.0) || !(beta_max > 0.0)) {
      throw std::invalid_argument("schedule: beta_min and beta_max must be positive");
    }
  } else {
    if (!(sigma_max > sigma_min) || !(sigma_min > 0.0)) {
      throw std::invalid_argument("schedule: need sigma_max > sigma_min > 0");
    }
    if (shift < 0.0) throw std::invalid_argument("schedule: shift must be >= 0");
    if (exponent < 1.0) throw std::invalid_argument("schedule: exponent must be >= 1");
  }
}

NoiseSchedule::NoiseSchedule(ScheduleConfig config) : config_(config) { config_.validate(); }

NoiseSchedule NoiseSchedule::vp(double beta_min, double beta_max, double sigma0) {
  ScheduleConfig c;
  c.beta_min = beta_min;
  c.beta_max = beta_max;
  c.sigma0 = sigma0;
  return NoiseSchedule(c);
}

NoiseSchedule NoiseSchedule::constant(double beta, double sigma0) { return vp(beta, beta, sigma0); }

double NoiseSchedule::cosine_sigma(double s) const {
  const auto& c = config_;
  const double u = s / c.horizon;
  const double phase = 0.5 * std::numbers::pi * (1.0 + c.shift - u) / (1.0 + c.shift);
  return 0.5 * (c.sigma_max - c.sigma_min) * std::pow(std::cos(phase), c.exponent) +
         0.5 * c.sigma_min;
}

double NoiseSchedule::noising_beta(double s) const {
  const auto& c = config_;
  if (c.kind == ScheduleKind::Linear) {
    return c.beta_min + (s / c.horizon) * (c.beta_max - c.beta_min);
  }
  const double sig = cosine_sigma(s);
  return sig * sig / (c.sigma0 * c.sigma0);
}

double NoiseSchedule::beta(double t) const { return noising_beta(config_.horizon - t); }

double NoiseSchedule::sigma(double t) const {
  if (config_.kind == ScheduleKind::Cosine) return cosine_sigma(config_.horizon - t);
  return config_.sigma0 * std::sqrt(beta(t));
}

double NoiseSchedule::f(double t) const { return -0.5 * beta(t); }

Eigen::VectorXd NoiseSchedule::sigma(const Eigen::VectorXd& t) const {
  return t.unaryExpr([this](double v) { return sigma(v); });
}

Eigen::VectorXd NoiseSchedule::f(const Eigen::VectorXd& t) const {
  return t.unaryExpr([this](double v) { return f(v); });
}

Discretization Discretization::uniform(int n_steps, double horizon) {
  if (n_steps < 1) throw std::invalid_argument("discretization needs at least one step");
  Discretization d;
  d.n_steps = n_steps;
  d.horizon = horizon;
  d.times.resize(static_cast<std::size_t>(n_steps) + 1);
  for (int n = 0; n <= n_steps; ++n) {
    d.times[static_cast<std::size_t>(n)] = horizon * static_cast<double>(n) / n_steps;
  }
  return d;
}

}  // namespace osds::dynamics
