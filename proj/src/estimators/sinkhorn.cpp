#include "osds/estimators/sinkhorn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace osds::estimators {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd sq_cost(const MatrixXd& xs, const MatrixXd& ys) {
  const VectorXd nx = xs.rowwise().squaredNorm();
  const VectorXd ny = ys.rowwise().squaredNorm();
  MatrixXd c = -2.0 * xs * ys.transpose();
  c.colwise() += nx;
  c.rowwise() += ny.transpose();
  return c.cwiseMax(0.0);
}

// out_i = -eps * log sum_j exp(log_w_j + (pot_j - c_ij) / eps)
VectorXd soft_min(const MatrixXd& c, const VectorXd& pot, double log_w, double eps) {
  VectorXd out(c.rows());
  for (Index i = 0; i < c.rows(); ++i) {
    const Eigen::ArrayXd z = (pot.transpose() - c.row(i)).array() / eps;
    const double m = z.maxCoeff();
    out(i) = -eps * (log_w + m + std::log((z - m).exp().sum()));
  }
  return out;
}

}  // namespace

double median_pairwise_sq_distance(const MatrixXd& xs, const MatrixXd& ys) {
  const MatrixXd c = sq_cost(xs, ys);
  std::vector<double> v(c.data(), c.data() + c.size());
  auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

namespace {

double row_violation(const MatrixXd& c, const VectorXd& f, const VectorXd& g, double log_a,
                     double log_b, double eps) {
  double viol = 0.0;
  for (Index i = 0; i < c.rows(); ++i) {
    const Eigen::ArrayXd z = (f(i) + g.transpose().array() - c.row(i).array()) / eps;
    viol += std::abs(std::exp(log_a + log_b) * z.exp().sum() - std::exp(log_a));
  }
  return viol;
}

// Geometric epsilon schedule from the largest cost down to the target.
std::vector<double> annealing(const MatrixXd& c, double eps) {
  std::vector<double> out;
  for (double e = std::max(c.maxCoeff(), eps); e > eps; e *= 0.5) out.push_back(e);
  out.push_back(eps);
  return out;
}

constexpr int kStageIterations = 100;

void check_inputs(const MatrixXd& xs, const MatrixXd& ys, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("sinkhorn: epsilon must be positive");
  if (xs.rows() == 0 || ys.rows() == 0 || xs.cols() != ys.cols()) {
    throw std::invalid_argument("sinkhorn: need non-empty point sets of equal dimension");
  }
}

}  // namespace

SinkhornResult entropic_ot(const MatrixXd& xs, const MatrixXd& ys, double eps, int max_iter,
                           double tol) {
  check_inputs(xs, ys, eps);
  const MatrixXd c = sq_cost(xs, ys);
  const MatrixXd ct = c.transpose();
  const double log_a = -std::log(static_cast<double>(xs.rows()));
  const double log_b = -std::log(static_cast<double>(ys.rows()));
  VectorXd f = VectorXd::Zero(xs.rows());
  VectorXd g = VectorXd::Zero(ys.rows());
  SinkhornResult r;
  r.epsilon = eps;
  r.converged = false;
  // Averaged simultaneous updates; on a symmetric problem f and g stay equal.
  for (double e : annealing(c, eps)) {
    const bool last = e == eps;
    const int budget = last ? max_iter : kStageIterations;
    for (int it = 0; it < budget; ++it) {
      VectorXd f_next = 0.5 * (f + soft_min(c, g, log_b, e));
      g = 0.5 * (g + soft_min(ct, f, log_a, e));
      f = std::move(f_next);
      ++r.iterations;
      if (last) {
        r.violation = row_violation(c, f, g, log_a, log_b, e) +
                      row_violation(ct, g, f, log_b, log_a, e);
        if (r.violation < tol) {
          r.converged = true;
          break;
        }
      }
    }
  }
  r.value = f.mean() + g.mean();
  return r;
}

SinkhornResult sinkhorn(const MatrixXd& xs, const MatrixXd& ys, const SinkhornOptions& options) {
  double eps = options.epsilon;
  if (eps <= 0.0) {
    eps = 1e-2 * median_pairwise_sq_distance(xs, ys);
    if (!(eps > 0.0)) eps = 1e-2;
  }
  const auto xy = entropic_ot(xs, ys, eps, options.max_iter, options.tol);
  const auto xx = entropic_ot(xs, xs, eps, options.max_iter, options.tol);
  const auto yy = entropic_ot(ys, ys, eps, options.max_iter, options.tol);
  SinkhornResult r;
  r.epsilon = eps;
  r.value = xy.value - 0.5 * xx.value - 0.5 * yy.value;
  r.converged = xy.converged && xx.converged && yy.converged;
  r.violation = std::max({xy.violation, xx.violation, yy.violation});
  r.iterations = std::max({xy.iterations, xx.iterations, yy.iterations});
  return r;
}

}  // namespace osds::estimators
