#include "osds/dynamics/pf.hpp"

#include "osds/diffcore/derivatives.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace osds::dynamics {

AugmentedState AugmentedState::start(const ad::Var& x) {
  return {x, ad::constant(Eigen::MatrixXd::Zero(x.rows(), 1))};
}

ad::Dual pf_drift(const ControlFn& u, const NoiseSchedule& schedule, const ad::Dual& x,
                  const Eigen::VectorXd& t, const Eigen::VectorXd& d) {
  const ad::Var half_sigma = ad::constant(0.5 * schedule.sigma(t));
  const ad::Var minus_f = ad::constant(-schedule.f(t));
  return ad::add(ad::mul(ad::Dual(half_sigma), u(x, t, d)), ad::mul(ad::Dual(minus_f), x));
}

TimeField pf_field(ControlFn u, const NoiseSchedule& schedule, Eigen::VectorXd d) {
  return [u = std::move(u), schedule, d = std::move(d)](const ad::Dual& x,
                                                        const Eigen::VectorXd& t) {
    return pf_drift(u, schedule, x, t, d);
  };
}

namespace {

struct Stage {
  ad::Var value;
  ad::Var div;
};

Stage evaluate_stage(const TimeField& b, const ad::Var& x, const Eigen::VectorXd& t,
                     const PfOptions& options, const std::vector<Eigen::MatrixXd>& probes) {
  VectorField field = [&](const ad::Dual& y) { return b(y, t); };
  Stage s;
  switch (options.divergence) {
    case DivergenceMode::None:
      s.value = field(ad::Dual(x)).val;
      break;
    case DivergenceMode::Exact:
      s.div = exact_divergence(field, x, &s.value);
      break;
    case DivergenceMode::Hutchinson: {
      for (std::size_t p = 0; p < probes.size(); ++p) {
        ad::Var v;
        ad::Var term = hutchinson_term(field, x, probes[p], p == 0 ? &v : nullptr);
        if (p == 0) s.value = v;
        s.div = s.div.defined() ? ad::add(s.div, term) : term;
      }
      if (probes.size() > 1) s.div = ad::scale(s.div, 1.0 / static_cast<double>(probes.size()));
      break;
    }
  }
  return s;
}

ad::Var weighted(const ad::Var& col, const ad::Var& v) { return ad::mul(col, v); }

}  // namespace

AugmentedState integrate_pf(const TimeField& b, const AugmentedState& start,
                            const Eigen::VectorXd& t_start, const Eigen::VectorXd& span,
                            int substeps, const PfOptions& options, Rng* rng,
                            const Eigen::MatrixXd* shared_probe) {
  if (substeps < 1) throw std::invalid_argument("integrate_pf: substeps must be >= 1");
  const Eigen::Index rows = start.x.rows();
  if (t_start.size() != rows || span.size() != rows) {
    throw std::invalid_argument("integrate_pf: need one start time and span per row");
  }
  const bool hutch = options.divergence == DivergenceMode::Hutchinson &&
                     options.solver != SolverKind::Custom;
  if (hutch && !shared_probe && !rng) {
    throw std::invalid_argument("integrate_pf: Hutchinson divergence needs an rng or a probe");
  }
  if (options.solver == SolverKind::Custom && !options.custom) {
    throw std::invalid_argument("integrate_pf: custom solver selected without a step function");
  }

  const Eigen::VectorXd h = span / static_cast<double>(substeps);
  const ad::Var hv = ad::constant(h);
  const ad::Var h_half = ad::constant(0.5 * h);
  const ad::Var h_sixth = ad::constant(h / 6.0);

  AugmentedState s = start;
  std::vector<Eigen::MatrixXd> probes;
  for (int k = 0; k < substeps; ++k) {
    const Eigen::VectorXd t = t_start + static_cast<double>(k) * h;
    if (options.solver == SolverKind::Custom) {
      StepResult r = options.custom(s.x, t, h);
      s.x = r.x;
      if (r.dell.defined()) s.ell = ad::add(s.ell, r.dell);
      continue;
    }
    probes.clear();
    if (hutch) {
      if (shared_probe) {
        probes.push_back(*shared_probe);
      } else {
        for (int p = 0; p < options.probes; ++p) {
          probes.push_back(rng->probe(rows, s.x.cols(), options.probe));
        }
      }
    }
    const bool vol = options.divergence != DivergenceMode::None;
    if (options.solver == SolverKind::Euler) {
      Stage k1 = evaluate_stage(b, s.x, t, options, probes);
      s.x = ad::add(s.x, weighted(hv, k1.value));
      if (vol) s.ell = ad::add(s.ell, weighted(hv, k1.div));
      continue;
    }
    const Eigen::VectorXd t_mid = t + 0.5 * h;
    const Eigen::VectorXd t_end = t + h;
    Stage k1 = evaluate_stage(b, s.x, t, options, probes);
    Stage k2 = evaluate_stage(b, ad::add(s.x, weighted(h_half, k1.value)), t_mid, options, probes);
    Stage k3 = evaluate_stage(b, ad::add(s.x, weighted(h_half, k2.value)), t_mid, options, probes);
    Stage k4 = evaluate_stage(b, ad::add(s.x, weighted(hv, k3.value)), t_end, options, probes);
    ad::Var incr = ad::add(ad::add(k1.value, ad::scale(ad::add(k2.value, k3.value), 2.0)), k4.value);
    s.x = ad::add(s.x, weighted(h_sixth, incr));
    if (vol) {
      ad::Var dincr = ad::add(ad::add(k1.div, ad::scale(ad::add(k2.div, k3.div), 2.0)), k4.div);
      s.ell = ad::add(s.ell, weighted(h_sixth, dincr));
    }
  }
  if (!options.allow_nonfinite && (!s.x.value().allFinite() || !s.ell.value().allFinite())) {
    throw std::runtime_error("integrate_pf: non-finite state or log-volume");
  }
  return s;
}

}  // namespace osds::dynamics
