#include "osds/trainer/trainer.hpp"

#include "osds/diffcore/derivatives.hpp"

#include <cmath>
#include <deque>
#include <numeric>
#include <stdexcept>

namespace osds::trainer {

void TrainConfig::validate() const {
  if (iterations < 1 || batch < 1 || base_steps < 2) {
    throw std::invalid_argument("train: need iterations >= 1, batch >= 1 and base_steps >= 2");
  }
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) {
    throw std::invalid_argument("train: ema_decay must lie in [0, 1)");
  }
  if (!(adam.lr > 0.0) || adam.weight_decay < 0.0 || !(clip > 0.0)) {
    throw std::invalid_argument("train: need lr > 0, weight_decay >= 0, clip > 0");
  }
  if (ma_window < 1 || distill_substeps < 1 || anchors < 0 || checkpoint_every < 0) {
    throw std::invalid_argument("train: invalid window, substeps, anchors or cadence");
  }
  weights.validate();
}

nlohmann::ordered_json IterationLog::to_json() const {
  nlohmann::ordered_json j;
  j["iteration"] = iteration;
  j["loss"] = loss;
  j["rnd"] = rnd;
  j["state"] = state;
  j["vol"] = vol;
  j["jac"] = jac;
  j["elbo"] = elbo;
  j["grad_norm"] = grad_norm;
  j["lr"] = lr;
  j["dropped"] = dropped;
  return j;
}

TrainResult train(const TrainConfig& config, const controlnet::ControlNet& net,
                  targets::TargetPtr target, const targets::GaussianPrior& prior,
                  const dynamics::NoiseSchedule& schedule, const TrainHooks& hooks,
                  const TrainState* resume) {
  config.validate();
  if (target->dim() != net.dim() || prior.dim() != net.dim()) {
    throw std::invalid_argument("train: target, prior and network dimensions differ");
  }

  losses::LossContext ctx;
  ctx.net = &net;
  ctx.target = target;
  ctx.prior = prior;
  ctx.schedule = schedule;
  ctx.disc = dynamics::Discretization::uniform(config.base_steps, schedule.horizon());
  ctx.pf = config.pf;
  ctx.distill_substeps = config.distill_substeps;
  ctx.batch = config.batch;
  ctx.anchors = config.anchors > 0 ? config.anchors : config.batch;
  ctx.weights = config.weights;

  TrainState st;
  if (resume) {
    st = *resume;
  } else {
    st.theta = net.params();
    st.ema = net.params();
    st.adam = AdamState::zeros_like(st.theta);
    st.lr = config.adam.lr;
    st.rng = Rng(config.seed, 1).state();
  }
  Rng rng = Rng::from_state(st.rng);

  TrainResult result;
  TrainState snapshot = st;
  snapshot.rng = rng.state();
  bool halved = false;
  std::deque<double> window;
  const bool distill = config.weights.state > 0.0 || config.weights.vol > 0.0;

  while (st.iteration < config.iterations) {
    losses::CompositeResult terms;
    ValueAndGrad vg;
    bool finite = true;
    try {
      vg = value_and_grad(
          [&](const ParamBinding& p) {
            terms = losses::composite_loss(ctx, p, st.theta, rng);
            return terms.total;
          },
          st.theta);
      finite = std::isfinite(vg.value) && vg.grad.all_finite();
    } catch (const NonFiniteError&) {
      finite = false;
    }
    if (!finite) {
      if (halved) {
        throw std::runtime_error("train: non-finite loss again at iteration " +
                                 std::to_string(st.iteration) + " after halving the learning rate");
      }
      halved = true;
      ++result.nan_restarts;
      const double lr = st.lr * 0.5;
      st = snapshot;
      st.lr = lr;
      rng = Rng::from_state(snapshot.rng);
      window.clear();
      const auto keep = static_cast<std::size_t>(st.iteration - (resume ? resume->iteration : 0));
      if (result.log.size() > keep) result.log.resize(keep);
      continue;
    }

    const double norm = clip_global_norm(vg.grad, config.clip);
    AdamConfig ac = config.adam;
    ac.lr = st.lr;
    adamw_step(st.theta, st.adam, vg.grad, ac);
    ema_update(st.ema, st.theta, config.ema_decay);
    ++st.iteration;

    result.nfe_simulation += static_cast<long>(config.batch) * config.base_steps;
    if (distill) {
      result.nfe_distillation +=
          static_cast<long>(ctx.anchors) * kDistillNfePerAnchor * config.distill_substeps;
    }

    IterationLog entry;
    entry.iteration = st.iteration;
    entry.loss = vg.value;
    entry.rnd = terms.rnd;
    entry.state = terms.state;
    entry.vol = terms.vol;
    entry.jac = terms.jac;
    entry.elbo = terms.elbo;
    entry.grad_norm = norm;
    entry.lr = st.lr;
    entry.dropped = terms.dropped;
    result.log.push_back(entry);
    if (hooks.on_iteration) hooks.on_iteration(entry);

    window.push_back(terms.elbo);
    if (static_cast<int>(window.size()) > config.ma_window) window.pop_front();
    if (static_cast<int>(window.size()) == config.ma_window) {
      const double ma = std::accumulate(window.begin(), window.end(), 0.0) / config.ma_window;
      if (!result.has_best || ma > result.best_ma_elbo) {
        result.has_best = true;
        result.best_ma_elbo = ma;
        result.best_state = st;
        result.best_state.rng = rng.state();
        if (hooks.on_checkpoint) hooks.on_checkpoint(result.best_state, "best");
      }
    }
    if (config.checkpoint_every > 0 && st.iteration % config.checkpoint_every == 0) {
      snapshot = st;
      snapshot.rng = rng.state();
      if (hooks.on_checkpoint) hooks.on_checkpoint(snapshot, "iter");
    }
  }
  st.rng = rng.state();
  result.final_state = st;
  if (hooks.on_checkpoint) hooks.on_checkpoint(st, "final");
  return result;
}

}  // namespace osds::trainer
