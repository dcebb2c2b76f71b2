#include "osds/losses/losses.hpp"

#include "osds/diffcore/derivatives.hpp"

#include <cmath>
#include <stdexcept>

namespace osds::losses {

using ad::Dual;
using ad::Var;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

void LossWeights::validate() const {
  for (double w : {state, vol, jac}) {
    if (!std::isfinite(w) || w < 0.0) {
      throw std::invalid_argument("loss weights must be finite and non-negative");
    }
  }
}

namespace {

struct RndGraph {
  Var per_path;  // B x 1
  dynamics::PathGraph path;
};

RndGraph rnd_graph(const dynamics::ControlFn& u, const dynamics::NoiseSchedule& schedule,
                   const targets::GaussianPrior& prior, const targets::TargetDensity& target,
                   const dynamics::Discretization& disc, const MatrixXd& x0,
                   const std::vector<MatrixXd>& noise) {
  RndGraph g;
  g.path = dynamics::simulate_path(u, schedule, disc, ad::constant(x0), noise, disc.base_step());
  Var log_prior = ad::constant(prior.evaluate_log_density(x0));
  Var log_rho = target.log_rho(Dual(g.path.states.back())).val;
  g.per_path = ad::sub(ad::add(ad::sub(g.path.log_forward, g.path.log_backward), log_prior),
                       log_rho);
  return g;
}

}  // namespace

RndResult rnd_loss(const dynamics::ControlFn& u, const dynamics::NoiseSchedule& schedule,
                   const targets::GaussianPrior& prior, const targets::TargetDensity& target,
                   const dynamics::Discretization& disc, Rng& rng, Index batch) {
  if (disc.n_steps < 2) throw std::invalid_argument("rnd_loss needs at least two base steps");
  MatrixXd x0 = prior.sample(rng, batch);
  std::vector<MatrixXd> noise;
  for (int n = 0; n < disc.n_steps; ++n) noise.push_back(rng.gaussian(batch, prior.dim()));

  RndGraph g = rnd_graph(u, schedule, prior, target, disc, x0, noise);
  std::vector<Index> keep;
  for (Index i = 0; i < batch; ++i) {
    if (std::isfinite(g.per_path.value()(i, 0))) keep.push_back(i);
  }
  RndResult out;
  out.dropped = static_cast<int>(batch - static_cast<Index>(keep.size()));
  if (keep.empty()) throw NonFiniteError("rnd_loss: every path is non-finite", "");
  if (out.dropped > 0) {
    MatrixXd x0k(static_cast<Index>(keep.size()), x0.cols());
    for (std::size_t r = 0; r < keep.size(); ++r) x0k.row(static_cast<Index>(r)) = x0.row(keep[r]);
    for (auto& z : noise) {
      MatrixXd zk(x0k.rows(), z.cols());
      for (std::size_t r = 0; r < keep.size(); ++r) zk.row(static_cast<Index>(r)) = z.row(keep[r]);
      z = std::move(zk);
    }
    g = rnd_graph(u, schedule, prior, target, disc, x0k, noise);
  }
  out.loss = ad::mean(g.per_path);
  out.log_weights = -g.per_path.value().col(0);
  out.states.reserve(g.path.states.size());
  for (const auto& s : g.path.states) out.states.push_back(s.value());
  return out;
}

DistillBatch sample_anchors(const std::vector<MatrixXd>& states,
                            const dynamics::Discretization& disc, Rng& rng, Index count,
                            ProbeKind probe_kind) {
  const int n0 = disc.n_steps;
  if (n0 < 2) throw std::invalid_argument("sample_anchors needs at least two base steps");
  if (static_cast<int>(states.size()) != n0 + 1) {
    throw std::invalid_argument("sample_anchors: states do not match the discretization");
  }
  int k_max = 0;
  while ((2 << k_max) <= n0) ++k_max;
  const Index rows = states.front().rows();
  const Index dim = states.front().cols();
  DistillBatch b;
  b.x.resize(count, dim);
  b.t.resize(count);
  b.d.resize(count);
  for (Index a = 0; a < count; ++a) {
    const int k = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(k_max)));
    const int jump = 1 << k;
    const int n = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n0 - jump + 1)));
    const Index row = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(rows)));
    b.x.row(a) = states[static_cast<std::size_t>(n)].row(row);
    b.t(a) = disc.times[static_cast<std::size_t>(n)];
    b.d(a) = jump * disc.base_step();
  }
  b.probe = rng.probe(count, dim, probe_kind);
  return b;
}

DistillResult distill_losses(const dynamics::ControlFn& student,
                             const dynamics::ControlFn& teacher,
                             const dynamics::NoiseSchedule& schedule, const DistillBatch& batch,
                             const dynamics::PfOptions& options, int substeps, bool with_volume) {
  dynamics::PfOptions opts = options;
  if (!with_volume) opts.divergence = dynamics::DivergenceMode::None;
  const VectorXd half = 0.5 * batch.d;
  const Var x = ad::constant(batch.x);

  auto teacher_field = dynamics::pf_field(teacher, schedule, half);
  auto s1 = dynamics::integrate_pf(teacher_field, dynamics::AugmentedState::start(x), batch.t,
                                   half, substeps, opts, nullptr, &batch.probe);
  auto s2 = dynamics::integrate_pf(teacher_field,
                                   dynamics::AugmentedState::start(ad::detach(s1.x)),
                                   batch.t + half, half, substeps, opts, nullptr, &batch.probe);
  const Var x_teach = ad::detach(s2.x);

  auto student_field = dynamics::pf_field(student, schedule, batch.d);
  auto st = dynamics::integrate_pf(student_field, dynamics::AugmentedState::start(x), batch.t,
                                   batch.d, substeps, opts, nullptr, &batch.probe);

  DistillResult r;
  r.state = ad::mean(ad::sum_cols(ad::square(ad::sub(st.x, x_teach))));
  if (with_volume) {
    const Var v_teach = ad::detach(ad::add(s1.ell, s2.ell));
    r.vol = ad::mean(ad::square(ad::sub(st.ell, v_teach)));
  }
  return r;
}

Var state_loss(const dynamics::ControlFn& student, const dynamics::ControlFn& teacher,
               const dynamics::NoiseSchedule& schedule, const DistillBatch& batch,
               const dynamics::PfOptions& options, int substeps) {
  return distill_losses(student, teacher, schedule, batch, options, substeps, false).state;
}

Var vol_loss(const dynamics::ControlFn& student, const dynamics::ControlFn& teacher,
             const dynamics::NoiseSchedule& schedule, const DistillBatch& batch,
             const dynamics::PfOptions& options, int substeps) {
  return distill_losses(student, teacher, schedule, batch, options, substeps, true).vol;
}

Var jac_loss(const dynamics::ControlFn& u, const DistillBatch& batch, Rng& rng) {
  const MatrixXd v = rng.rademacher(batch.size(), batch.x.cols());
  Dual out = u(Dual(ad::constant(batch.x), ad::constant(v)), batch.t, batch.d);
  if (!out.has_tangent()) return ad::constant_scalar(0.0);
  const Var inv_d = ad::constant(batch.d.cwiseInverse());
  return ad::mean(ad::mul(ad::sum_cols(ad::square(out.tan)), inv_d));
}

CompositeResult composite_loss(const LossContext& ctx, const ParamBinding& theta,
                               const ParameterVector& teacher_values, Rng& rng) {
  ctx.weights.validate();
  const auto student = ctx.net->bind(theta, ctx.target);
  RndResult rnd = rnd_loss(student, ctx.schedule, ctx.prior, *ctx.target, ctx.disc, rng, ctx.batch);
  CompositeResult out;
  out.total = rnd.loss;
  out.rnd = rnd.loss.item();
  out.elbo = rnd.log_weights.mean();
  out.dropped = rnd.dropped;

  const auto& w = ctx.weights;
  const bool distill = w.state > 0.0 || w.vol > 0.0;
  if (!distill && w.jac == 0.0) return out;

  DistillBatch anchors = sample_anchors(rnd.states, ctx.disc, rng, ctx.anchors, ctx.pf.probe);
  if (distill) {
    const auto teacher = ctx.net->frozen(teacher_values, ctx.target);
    DistillResult d = distill_losses(student, teacher, ctx.schedule, anchors, ctx.pf,
                                     ctx.distill_substeps, w.vol > 0.0);
    out.state = d.state.item();
    if (w.state > 0.0) out.total = ad::add(out.total, ad::scale(d.state, w.state));
    if (d.vol.defined()) {
      out.vol = d.vol.item();
      out.total = ad::add(out.total, ad::scale(d.vol, w.vol));
    }
  }
  if (w.jac > 0.0) {
    Var j = jac_loss(student, anchors, rng);
    out.jac = j.item();
    out.total = ad::add(out.total, ad::scale(j, w.jac));
  }
  return out;
}

}  // namespace osds::losses
