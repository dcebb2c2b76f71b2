#pragma once

#include <Eigen/Dense>

namespace osds::estimators {

struct SinkhornOptions {
  /// Entropic regularization; <= 0 selects 1e-2 times the median pairwise
  /// squared distance between the two sets.
  double epsilon = 0.0;
  int max_iter = 5000;
  double tol = 1e-6;
};

struct SinkhornResult {
  double value = 0.0;      // debiased divergence
  double epsilon = 0.0;
  bool converged = true;
  double violation = 0.0;  // worst marginal L1 violation over the three problems
  int iterations = 0;      // most iterations used by any of the three problems
};

/// Entropic OT cost with squared Euclidean ground cost between equal-weight
/// point clouds (rows), in the log domain.
SinkhornResult entropic_ot(const Eigen::MatrixXd& xs, const Eigen::MatrixXd& ys, double epsilon,
                           int max_iter, double tol);

/// S(x, y) = OT(x, y) - OT(x, x) / 2 - OT(y, y) / 2.
SinkhornResult sinkhorn(const Eigen::MatrixXd& xs, const Eigen::MatrixXd& ys,
                        const SinkhornOptions& options = {});

double median_pairwise_sq_distance(const Eigen::MatrixXd& xs, const Eigen::MatrixXd& ys);

}  // namespace osds::estimators
