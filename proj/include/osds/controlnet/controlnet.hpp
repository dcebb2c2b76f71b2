#pragma once

#include "osds/diffcore/autodiff.hpp"
#include "osds/diffcore/params.hpp"
#include "osds/diffcore/rng.hpp"
#include "osds/dynamics/simulate.hpp"
#include "osds/targets/targets.hpp"

#include <Eigen/Dense>

#include <atomic>
#include <memory>

namespace osds::controlnet {

struct NetworkConfig {
  int width = 64;
  int depth = 2;
  int fourier_features = 64;
  double fourier_base = 1.0;
  /// Ratio between the highest and the lowest Fourier frequency.
  double fourier_span = 64.0;
  double clip_bound = 1e3;
  bool step_embedding = true;

  void validate() const;
  int embedding_dim() const { return (step_embedding ? 4 : 2) * fourier_features; }
};

/// (sin(w_k v), cos(w_k v)) for w_k = base * span^(k / (n - 1)); one row per value.
Eigen::MatrixXd fourier_embed(const Eigen::VectorXd& values, int n_features, double base,
                              double span = 64.0);

/// Step-conditioned control
///   u = MLP([x, fourier(t), fourier(d)]) + gate(t, d) * clip(score(x), +-clip_bound).
/// The output layer and the gate's last layer start at zero, so a fresh net
/// is the uncontrolled process.
class ControlNet {
 public:
  ControlNet(NetworkConfig config, int dim, ParameterVector params);

  static ControlNet init(const NetworkConfig& config, int dim, Rng& rng);
  static Eigen::Index parameter_count(const NetworkConfig& config, int dim);

  const NetworkConfig& config() const { return config_; }
  int dim() const { return dim_; }
  const ParameterVector& params() const { return params_; }
  ParameterVector& params() { return params_; }

  ad::Dual forward(const ParamBinding& p, const ad::Dual& x, const Eigen::VectorXd& t,
                   const Eigen::VectorXd& d, const targets::TargetDensity& target) const;

  /// Evaluates with the stored parameters.
  Eigen::MatrixXd evaluate(const Eigen::MatrixXd& x, const Eigen::VectorXd& t,
                           const Eigen::VectorXd& d, const targets::TargetDensity& target) const;

  /// A control function over the given parameter leaves.
  dynamics::ControlFn bind(const ParamBinding& p, targets::TargetPtr target) const;
  /// A control function over a constant copy of `values` (no gradients).
  dynamics::ControlFn frozen(const ParameterVector& values, targets::TargetPtr target) const;

  /// Number of non-finite score entries replaced so far.
  long nonfinite_scores() const { return nonfinite_->load(); }

 private:
  NetworkConfig config_;
  int dim_;
  ParameterVector params_;
  std::shared_ptr<std::atomic<long>> nonfinite_;
};

}  // namespace osds::controlnet
