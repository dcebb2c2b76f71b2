#include "osds/estimators/weights.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace osds::estimators {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string to_string(WeightKind kind) { return kind == WeightKind::DF ? "DF" : "FB-RND"; }

WeightSet WeightSet::from_raw(const VectorXd& raw, WeightKind kind, int nfe, std::uint64_t seed,
                              std::string run_id) {
  WeightSet ws;
  ws.kind = kind;
  ws.nfe = nfe;
  ws.seed = seed;
  ws.run_id = std::move(run_id);
  ws.log_weights.resize(raw.size());
  Index m = 0;
  for (Index i = 0; i < raw.size(); ++i) {
    if (std::isfinite(raw(i))) ws.log_weights(m++) = raw(i);
  }
  ws.n_dropped = static_cast<int>(raw.size() - m);
  ws.log_weights.conservativeResize(m);
  if (m == 0) throw std::runtime_error("weight set: every log-weight is non-finite");
  return ws;
}

namespace {

dynamics::AugmentedState transport(const FlowSampler& s, const MatrixXd& x0, int n_steps,
                                   double direction, Rng& rng) {
  if (n_steps < 1) throw std::invalid_argument("transport needs n_steps >= 1");
  const Index rows = x0.rows();
  const double seg = s.schedule.horizon() / n_steps;
  const VectorXd d = VectorXd::Constant(rows, seg);
  dynamics::PfOptions opts = s.pf;
  opts.allow_nonfinite = true;
  auto field = dynamics::pf_field(s.control, s.schedule, d);
  auto state = dynamics::AugmentedState::start(x0);
  for (int k = 0; k < n_steps; ++k) {
    const double t0 = direction > 0 ? k * seg : s.schedule.horizon() - k * seg;
    state = dynamics::integrate_pf(field, state, VectorXd::Constant(rows, t0), direction * d,
                                   s.substeps, opts, &rng);
  }
  return state;
}

}  // namespace

DfResult df_log_weights(const FlowSampler& sampler, const MatrixXd& x0, int n_steps, Rng& rng) {
  if (!x0.allFinite()) throw std::invalid_argument("df_log_weights: x0 must be finite");
  auto state = transport(sampler, x0, n_steps, 1.0, rng);
  DfResult r;
  r.samples = state.x.value();
  r.ell = state.ell.value().col(0);
  VectorXd log_rho = VectorXd::Constant(x0.rows(), -std::numeric_limits<double>::infinity());
  if (r.samples.allFinite()) {
    log_rho = sampler.target->evaluate_log_rho(r.samples);
  } else {
    for (Index i = 0; i < x0.rows(); ++i) {
      if (r.samples.row(i).allFinite()) {
        log_rho(i) = sampler.target->evaluate_log_rho(r.samples.row(i))(0);
      }
    }
  }
  r.log_weights = log_rho + r.ell - sampler.prior.evaluate_log_density(x0);
  for (Index i = 0; i < r.log_weights.size(); ++i) {
    if (!std::isfinite(r.log_weights(i))) r.log_weights(i) = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

VectorXd df_forward_log_weights(const FlowSampler& sampler, const MatrixXd& y, int n_steps,
                                Rng& rng) {
  auto state = transport(sampler, y, n_steps, -1.0, rng);
  const MatrixXd& x0 = state.x.value();
  VectorXd out = VectorXd::Constant(y.rows(), std::numeric_limits<double>::quiet_NaN());
  const VectorXd log_rho = sampler.target->evaluate_log_rho(y);
  for (Index i = 0; i < y.rows(); ++i) {
    if (!x0.row(i).allFinite()) continue;
    const double lp = sampler.prior.evaluate_log_density(x0.row(i))(0);
    // The reverse pass accumulates minus the forward log-volume.
    out(i) = log_rho(i) - lp - state.ell.value()(i, 0);
  }
  return out;
}

VectorXd fb_log_weights(const dynamics::Trajectory& tr, const targets::TargetDensity& target) {
  VectorXd out = target.evaluate_log_rho(tr.states.back()) - tr.prior_logp;
  out += (tr.backward_logp - tr.forward_logp).rowwise().sum();
  return out;
}

VectorXd fb_log_weights(const dynamics::Trajectory& tr, const targets::TargetDensity& target,
                        const BackwardLogDensity& backward) {
  VectorXd out = target.evaluate_log_rho(tr.states.back()) - tr.prior_logp;
  for (int n = 0; n < tr.n_steps(); ++n) {
    out += backward(tr.states[static_cast<std::size_t>(n)],
                    tr.states[static_cast<std::size_t>(n) + 1], n) -
           tr.forward_logp.col(n);
  }
  return out;
}

VectorXd fb_forward_log_weights(const dynamics::ControlFn& control,
                                const dynamics::NoiseSchedule& schedule,
                                const targets::GaussianPrior& prior,
                                const targets::TargetDensity& target,
                                const dynamics::Discretization& disc, const MatrixXd& y,
                                double condition_step, Rng& rng) {
  const Index rows = y.rows();
  const VectorXd d = VectorXd::Constant(rows, condition_step);
  VectorXd out = target.evaluate_log_rho(y);
  MatrixXd x_next = y;
  for (int n = disc.n_steps - 1; n >= 0; --n) {
    const double t = disc.times[static_cast<std::size_t>(n)];
    const double t_next = disc.times[static_cast<std::size_t>(n) + 1];
    const double dt = disc.dt(n);
    const auto bk = dynamics::em_backward_kernel(t_next, dt, schedule);
    MatrixXd x = bk.coef * x_next + std::sqrt(bk.var) * rng.gaussian(rows, y.cols());
    out += bk.log_density(x, x_next);
    MatrixXd u = control(ad::Dual(ad::constant(x)), VectorXd::Constant(rows, t), d).value();
    const double sig = schedule.sigma(t);
    MatrixXd mean = x + (-schedule.f(t) * x + sig * u) * dt;
    out -= dynamics::isotropic_log_pdf(x_next - mean, VectorXd::Constant(rows, sig * sig * dt));
    x_next = std::move(x);
  }
  out -= prior.evaluate_log_density(x_next);
  return out;
}

double gaussian_entropy_gap(const dynamics::GaussianKernel& p_true,
                            const dynamics::GaussianKernel& p_surrogate, double marginal_var) {
  const double v1 = p_true.var;
  const double v2 = p_surrogate.var;
  const double dk = p_true.coef - p_surrogate.coef;
  return -0.5 * (std::log(v2 / v1) + (v1 + dk * dk * marginal_var) / v2 - 1.0);
}

}  // namespace osds::estimators
