#include "osds/trainer/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace osds::trainer {

AdamState AdamState::zeros_like(const ParameterVector& theta) {
  return {theta.zeros_like(), theta.zeros_like(), 0, 0};
}

bool adamw_step(ParameterVector& theta, AdamState& state, const ParameterVector& grads,
                const AdamConfig& c) {
  if (!grads.all_finite()) {
    ++state.skipped;
    return false;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  auto& segs = theta.segments();
  for (std::size_t i = 0; i < segs.size(); ++i) {
    auto& p = segs[i].second;
    const auto& g = grads.segments()[i].second;
    auto& m = state.m.segments()[i].second;
    auto& v = state.v.segments()[i].second;
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw std::invalid_argument("adamw_step: gradient shape mismatch in '" + segs[i].first + "'");
    }
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseAbs2();
    p *= 1.0 - c.lr * c.weight_decay;
    p.array() -= c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
  }
  return true;
}

double clip_global_norm(ParameterVector& grads, double threshold) {
  double sq = 0.0;
  for (const auto& [name, g] : grads.segments()) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > threshold) {
    const double s = threshold / norm;
    for (auto& [name, g] : grads.segments()) g *= s;
  }
  return norm;
}

void ema_update(ParameterVector& ema, const ParameterVector& theta, double decay) {
  for (std::size_t i = 0; i < ema.segments().size(); ++i) {
    auto& e = ema.segments()[i].second;
    e = decay * e + (1.0 - decay) * theta.segments()[i].second;
  }
}

}  // namespace osds::trainer
