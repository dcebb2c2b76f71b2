#pragma once

#include "osds/diffcore/params.hpp"

namespace osds::trainer {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  ParameterVector m;
  ParameterVector v;
  long step = 0;
  long skipped = 0;

  static AdamState zeros_like(const ParameterVector& theta);
};

/// Bias-corrected AdamW with decoupled decay theta <- theta (1 - lr wd).
/// Non-finite gradients skip the update; returns whether it was applied.
bool adamw_step(ParameterVector& theta, AdamState& state, const ParameterVector& grads,
                const AdamConfig& config);

/// Rescales to norm `threshold` when the global norm exceeds it; returns the
/// norm before clipping.
double clip_global_norm(ParameterVector& grads, double threshold);

/// ema <- decay ema + (1 - decay) theta.
void ema_update(ParameterVector& ema, const ParameterVector& theta, double decay);

}  // namespace osds::trainer
