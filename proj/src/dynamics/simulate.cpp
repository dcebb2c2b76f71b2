#include "osds/dynamics/simulate.hpp"

#include <cmath>
#include <string>

namespace osds::dynamics {

ControlFn zero_control() {
  return [](const ad::Dual& x, const Eigen::VectorXd&, const Eigen::VectorXd&) {
    return ad::Dual(ad::constant(Eigen::MatrixXd::Zero(x.rows(), x.cols())));
  };
}

PathGraph simulate_path(const ControlFn& u, const NoiseSchedule& schedule,
                        const Discretization& disc, const ad::Var& x0,
                        const std::vector<Eigen::MatrixXd>& noise, double condition_step) {
  if (static_cast<int>(noise.size()) != disc.n_steps) {
    throw std::invalid_argument("simulate_path: need one increment per step");
  }
  const Eigen::Index b = x0.rows();
  const Eigen::VectorXd d = Eigen::VectorXd::Constant(b, condition_step);
  PathGraph path;
  path.states.reserve(static_cast<std::size_t>(disc.n_steps) + 1);
  path.states.push_back(x0);
  path.forward_steps.resize(b, disc.n_steps);
  path.backward_steps.resize(b, disc.n_steps);

  ad::Var x = x0;
  for (int n = 0; n < disc.n_steps; ++n) {
    const double t = disc.times[static_cast<std::size_t>(n)];
    const double t_next = disc.times[static_cast<std::size_t>(n) + 1];
    const double dt = disc.dt(n);
    const double sig = schedule.sigma(t);
    ad::Var ctrl = u(ad::Dual(x), Eigen::VectorXd::Constant(b, t), d).val;
    ad::Var mean = ad::add(x, ad::scale(ad::add(ad::scale(x, -schedule.f(t)), ad::scale(ctrl, sig)), dt));
    ad::Var next = ad::add(mean, ad::constant(sig * std::sqrt(dt) * noise[static_cast<std::size_t>(n)]));
    ad::Var lf = isotropic_log_pdf(ad::sub(next, mean), sig * sig * dt);
    ad::Var lb = em_backward_logdensity(x, next, t_next, dt, schedule);
    path.forward_steps.col(n) = lf.value().col(0);
    path.backward_steps.col(n) = lb.value().col(0);
    path.log_forward = path.log_forward.defined() ? ad::add(path.log_forward, lf) : lf;
    path.log_backward = path.log_backward.defined() ? ad::add(path.log_backward, lb) : lb;
    x = next;
    path.states.push_back(x);
  }
  return path;
}

namespace {

Trajectory build(const ControlFn& u, const NoiseSchedule& schedule,
                 const targets::GaussianPrior& prior, const Discretization& disc,
                 const Eigen::MatrixXd& x0, std::vector<Eigen::MatrixXd> noise,
                 const SimulateOptions& options) {
  const double cond = options.condition_step > 0.0 ? options.condition_step : disc.base_step();
  PathGraph path = simulate_path(u, schedule, disc, ad::constant(x0), noise, cond);
  Trajectory tr;
  tr.times = disc.times;
  tr.states.reserve(path.states.size());
  for (std::size_t n = 0; n < path.states.size(); ++n) {
    const auto& s = path.states[n].value();
    if (options.abort_on_nonfinite && !s.allFinite()) {
      const int step = n == 0 ? 0 : static_cast<int>(n) - 1;
      throw SimulationError("simulate_forward: non-finite state after step " + std::to_string(step),
                            step);
    }
    tr.states.push_back(s);
  }
  tr.forward_logp = std::move(path.forward_steps);
  tr.backward_logp = std::move(path.backward_steps);
  tr.noise = std::move(noise);
  tr.prior_logp = prior.evaluate_log_density(x0);
  return tr;
}

}  // namespace

Trajectory simulate_forward(const ControlFn& u, const NoiseSchedule& schedule,
                            const targets::GaussianPrior& prior, const Discretization& disc,
                            Rng& rng, Eigen::Index batch, const SimulateOptions& options) {
  Eigen::MatrixXd x0 = prior.sample(rng, batch);
  std::vector<Eigen::MatrixXd> noise;
  noise.reserve(static_cast<std::size_t>(disc.n_steps));
  for (int n = 0; n < disc.n_steps; ++n) noise.push_back(rng.gaussian(batch, prior.dim()));
  return build(u, schedule, prior, disc, x0, std::move(noise), options);
}

Trajectory replay(const ControlFn& u, const NoiseSchedule& schedule,
                  const targets::GaussianPrior& prior, const Discretization& disc,
                  const Eigen::MatrixXd& x0, const std::vector<Eigen::MatrixXd>& noise,
                  const SimulateOptions& options) {
  return build(u, schedule, prior, disc, x0, noise, options);
}

}  // namespace osds::dynamics
