#include "osds/targets/targets.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace osds::targets {

using ad::Dual;
using ad::Var;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;

Var row_const(const MatrixXd& row) { return ad::constant(row); }

double log_sum_exp(const VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}
}  // namespace

// ---------------------------------------------------------------------------

MatrixXd TargetDensity::sample(Rng&, Index) const {
  throw std::logic_error("target '" + name() + "' has no reference sampler");
}

VectorXd TargetDensity::evaluate_log_rho(const MatrixXd& x) const {
  return log_rho(Dual(ad::constant(x))).value().col(0);
}

MatrixXd TargetDensity::evaluate_score(const MatrixXd& x) const {
  return score(Dual(ad::constant(x))).value();
}

void TargetDensity::check_dim(const Dual& x) const {
  if (x.cols() != dim()) {
    throw std::invalid_argument("target '" + name() + "' has dimension " +
                                std::to_string(dim()) + " but got points of dimension " +
                                std::to_string(x.cols()));
  }
}

// ---------------------------------------------------------------------------

GaussianPrior::GaussianPrior(VectorXd mean, double scale) : mean_(std::move(mean)), scale_(scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("prior scale must be positive");
}

GaussianPrior GaussianPrior::standard(int dim, double scale) {
  return GaussianPrior(VectorXd::Zero(dim), scale);
}

Dual GaussianPrior::log_density(const Dual& x) const {
  const double var = scale_ * scale_;
  const double c = -0.5 * dim() * (kLog2Pi + std::log(var));
  Dual centered = ad::sub(x, Dual(row_const(mean_.transpose())));
  return ad::add_scalar(ad::scale(ad::sum_cols(ad::square(centered)), -0.5 / var), c);
}

VectorXd GaussianPrior::evaluate_log_density(const MatrixXd& x) const {
  const double var = scale_ * scale_;
  const double c = -0.5 * dim() * (kLog2Pi + std::log(var));
  return ((x.rowwise() - mean_.transpose()).rowwise().squaredNorm().array() * (-0.5 / var) + c)
      .matrix();
}

MatrixXd GaussianPrior::sample(Rng& rng, Index n) const {
  MatrixXd z = rng.gaussian(n, dim()) * scale_;
  return z.rowwise() + mean_.transpose();
}

// ---------------------------------------------------------------------------

GaussianMixture::GaussianMixture(std::vector<MixtureMode> modes, int dim)
    : modes_(std::move(modes)), dim_(dim) {
  if (modes_.empty()) throw std::invalid_argument("gmm_target: empty mode list");
  if (dim < 1) throw std::invalid_argument("gmm_target: dimension must be positive");
  const auto k = static_cast<Index>(modes_.size());
  means_t_.resize(dim, k);
  scaled_means_.resize(k, dim);
  inv_var_col_.resize(k, 1);
  quad_coef_.resize(1, k);
  offsets_.resize(1, k);
  for (Index i = 0; i < k; ++i) {
    const auto& m = modes_[static_cast<std::size_t>(i)];
    if (m.mean.size() != dim) throw std::invalid_argument("gmm_target: mode dimension mismatch");
    if (!(m.scale > 0.0) || !(m.weight > 0.0)) {
      throw std::invalid_argument("gmm_target: scales and weights must be positive");
    }
    const double var = m.scale * m.scale;
    means_t_.col(i) = m.mean;
    scaled_means_.row(i) = m.mean.transpose() / var;
    inv_var_col_(i, 0) = 1.0 / var;
    quad_coef_(0, i) = -0.5 / var;
    offsets_(0, i) = std::log(m.weight) - 0.5 * dim * (kLog2Pi + std::log(var)) -
                     0.5 * m.mean.squaredNorm() / var;
  }
}

// log w_k + log N(x; mu_k, s_k^2) = -|x|^2/(2 s^2) + x.mu/s^2 + offset_k
Dual GaussianMixture::component_logits(const Dual& x) const {
  check_dim(x);
  Dual sq = ad::sum_cols(ad::square(x));                              // B x 1
  Dual cross = ad::matmul(x, Dual(ad::constant(scaled_means_.transpose())));  // B x K
  Dual quad = ad::mul(sq, Dual(row_const(quad_coef_)));               // B x K
  return ad::add(ad::add(quad, cross), Dual(row_const(offsets_)));
}

Dual GaussianMixture::log_rho(const Dual& x) const {
  return ad::logsumexp_cols(component_logits(x));
}

Dual GaussianMixture::score(const Dual& x) const {
  Dual logits = component_logits(x);
  Dual resp = ad::exp(ad::sub(logits, ad::logsumexp_cols(logits)));  // B x K
  Dual pull = ad::matmul(resp, Dual(ad::constant(scaled_means_)));     // B x D
  Dual precision = ad::matmul(resp, Dual(ad::constant(inv_var_col_))); // B x 1
  return ad::sub(pull, ad::mul(x, precision));
}

std::optional<double> GaussianMixture::exact_log_z() const {
  VectorXd lw(static_cast<Index>(modes_.size()));
  for (std::size_t i = 0; i < modes_.size(); ++i) lw(static_cast<Index>(i)) = std::log(modes_[i].weight);
  return log_sum_exp(lw);
}

MatrixXd GaussianMixture::sample(Rng& rng, Index n) const {
  double total = 0.0;
  for (const auto& m : modes_) total += m.weight;
  MatrixXd out(n, dim_);
  for (Index r = 0; r < n; ++r) {
    double u = rng.uniform() * total;
    std::size_t k = 0;
    while (k + 1 < modes_.size() && u >= modes_[k].weight) {
      u -= modes_[k].weight;
      ++k;
    }
    out.row(r) = modes_[k].mean.transpose() + modes_[k].scale * rng.gaussian(1, dim_);
  }
  return out;
}

std::shared_ptr<GaussianMixture> gmm_target(std::vector<MixtureMode> modes, int dim) {
  return std::make_shared<GaussianMixture>(std::move(modes), dim);
}

std::shared_ptr<GaussianMixture> random_gmm(int n_modes, int dim, double lo, double hi,
                                            double scale, Rng& rng) {
  if (n_modes < 1) throw std::invalid_argument("random_gmm: need at least one mode");
  std::vector<MixtureMode> modes;
  modes.reserve(static_cast<std::size_t>(n_modes));
  for (int k = 0; k < n_modes; ++k) {
    VectorXd mu(dim);
    for (int j = 0; j < dim; ++j) mu(j) = lo + (hi - lo) * rng.uniform();
    modes.push_back({mu, scale, 1.0 / n_modes});
  }
  return gmm_target(std::move(modes), dim);
}

// ---------------------------------------------------------------------------

Funnel::Funnel(int dim) : dim_(dim) {
  if (dim < 2) throw std::invalid_argument("funnel_target: dimension must be at least 2");
}

Dual Funnel::log_rho(const Dual& x) const {
  check_dim(x);
  const double rest_dims = dim_ - 1;
  Dual x1 = ad::slice_cols(x, 0, 1);
  Dual rest = ad::slice_cols(x, 1, dim_ - 1);
  Dual inv_var = ad::exp(ad::neg(x1));
  Dual head = ad::scale(ad::square(x1), -1.0 / 18.0);
  Dual tail = ad::scale(ad::mul(inv_var, ad::sum_cols(ad::square(rest))), -0.5);
  const double c = -0.5 * (kLog2Pi + std::log(9.0)) - 0.5 * rest_dims * kLog2Pi;
  return ad::add_scalar(ad::add(ad::add(head, ad::scale(x1, -0.5 * rest_dims)), tail), c);
}

Dual Funnel::score(const Dual& x) const {
  check_dim(x);
  const double rest_dims = dim_ - 1;
  Dual x1 = ad::slice_cols(x, 0, 1);
  Dual rest = ad::slice_cols(x, 1, dim_ - 1);
  Dual inv_var = ad::exp(ad::neg(x1));
  Dual d1 = ad::add_scalar(
      ad::add(ad::scale(x1, -1.0 / 9.0),
              ad::scale(ad::mul(inv_var, ad::sum_cols(ad::square(rest))), 0.5)),
      -0.5 * rest_dims);
  Dual drest = ad::neg(ad::mul(rest, inv_var));
  return ad::concat_cols({d1, drest});
}

MatrixXd Funnel::sample(Rng& rng, Index n) const {
  MatrixXd z = rng.gaussian(n, dim_);
  for (Index r = 0; r < n; ++r) {
    const double x1 = 3.0 * z(r, 0);
    z(r, 0) = x1;
    z.row(r).tail(dim_ - 1) *= std::exp(0.5 * x1);
  }
  return z;
}

std::shared_ptr<Funnel> funnel_target(int dim) { return std::make_shared<Funnel>(dim); }

// ---------------------------------------------------------------------------

void gauss_hermite(int n, VectorXd& nodes, VectorXd& weights) {
  if (n < 1) throw std::invalid_argument("gauss_hermite: need at least one node");
  // Golub-Welsch on the symmetric Jacobi matrix of the Hermite recurrence.
  MatrixXd jacobi = MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double b = std::sqrt(0.5 * k);
    jacobi(k, k - 1) = b;
    jacobi(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(jacobi);
  nodes = eig.eigenvalues();
  weights = std::sqrt(std::numbers::pi) * eig.eigenvectors().row(0).transpose().array().square();
}

double double_well_log_normalizer(double delta, int nodes) {
  VectorXd x;
  VectorXd w;
  gauss_hermite(nodes, x, w);
  // integral e^{-x^2} g(x) with g(x) = exp(-x^4 + (delta + 1) x^2)
  VectorXd terms(nodes);
  for (int i = 0; i < nodes; ++i) {
    const double xi = x(i);
    terms(i) = std::log(w(i)) - xi * xi * xi * xi + (delta + 1.0) * xi * xi;
  }
  return log_sum_exp(terms);
}

ManyWell::ManyWell(int dim, int n_wells, double delta, int quadrature_nodes)
    : dim_(dim), wells_(n_wells), delta_(delta) {
  if (dim < 1 || n_wells < 0 || n_wells > dim) {
    throw std::invalid_argument("manywell_target: need 0 <= wells <= dim and dim >= 1");
  }
  quartic_row_ = MatrixXd::Zero(1, dim);
  quad_row_ = MatrixXd::Constant(1, dim, -0.5);
  for (int i = 0; i < n_wells; ++i) {
    quartic_row_(0, i) = -1.0;
    quad_row_(0, i) = delta;
  }
  log_z_ = n_wells * double_well_log_normalizer(delta, quadrature_nodes) +
           0.5 * (dim - n_wells) * kLog2Pi;

  // Rejection envelope for one coordinate: equal mixture of N(+-sqrt(delta/2), 0.5^2).
  const double mode = std::sqrt(std::max(delta, 0.0) / 2.0);
  const double s = 0.5;
  double bound = 0.0;
  for (int i = 0; i <= 24000; ++i) {
    const double xg = -8.0 + 16.0 * i / 24000.0;
    const double log_p = -xg * xg * xg * xg + delta * xg * xg;
    const double q = 0.5 * (std::exp(-0.5 * (xg - mode) * (xg - mode) / (s * s)) +
                            std::exp(-0.5 * (xg + mode) * (xg + mode) / (s * s))) /
                     (s * std::sqrt(2.0 * std::numbers::pi));
    bound = std::max(bound, std::exp(log_p) / q);
  }
  envelope_bound_ = 1.1 * bound;
}

Dual ManyWell::log_rho(const Dual& x) const {
  check_dim(x);
  Dual x2 = ad::square(x);
  Dual x4 = ad::square(x2);
  Dual terms = ad::add(ad::mul(x4, Dual(row_const(quartic_row_))),
                       ad::mul(x2, Dual(row_const(quad_row_))));
  return ad::sum_cols(terms);
}

Dual ManyWell::score(const Dual& x) const {
  check_dim(x);
  Dual x3 = ad::mul(ad::square(x), x);
  return ad::add(ad::mul(x3, Dual(row_const(4.0 * quartic_row_))),
                 ad::mul(x, Dual(row_const(2.0 * quad_row_))));
}

MatrixXd ManyWell::sample(Rng& rng, Index n) const {
  const double mode = std::sqrt(std::max(delta_, 0.0) / 2.0);
  const double s = 0.5;
  MatrixXd out(n, dim_);
  for (Index r = 0; r < n; ++r) {
    for (int i = 0; i < dim_; ++i) {
      if (i >= wells_) {
        out(r, i) = rng.gaussian(1, 1)(0, 0);
        continue;
      }
      for (;;) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        const double xg = sign * mode + s * rng.gaussian(1, 1)(0, 0);
        const double log_p = -xg * xg * xg * xg + delta_ * xg * xg;
        const double q = 0.5 * (std::exp(-0.5 * (xg - mode) * (xg - mode) / (s * s)) +
                                std::exp(-0.5 * (xg + mode) * (xg + mode) / (s * s))) /
                         (s * std::sqrt(2.0 * std::numbers::pi));
        if (rng.uniform() * envelope_bound_ * q <= std::exp(log_p)) {
          out(r, i) = xg;
          break;
        }
      }
    }
  }
  return out;
}

std::shared_ptr<ManyWell> manywell_target(int dim, int n_wells, double delta) {
  return std::make_shared<ManyWell>(dim, n_wells, delta);
}

// ---------------------------------------------------------------------------

void LogisticRegressionData::validate() const {
  if (features.rows() != labels.size()) {
    throw std::invalid_argument("logistic data: " + std::to_string(features.rows()) +
                                " feature rows but " + std::to_string(labels.size()) + " labels");
  }
  if (!features.allFinite()) throw std::invalid_argument("logistic data: non-finite feature");
  for (Index i = 0; i < labels.size(); ++i) {
    if (labels(i) != 0.0 && labels(i) != 1.0) {
      throw std::invalid_argument("logistic data: label in row " + std::to_string(i) +
                                  " is not binary");
    }
  }
  if (!(prior_scale > 0.0)) throw std::invalid_argument("logistic data: prior scale must be positive");
}

LogisticPosterior::LogisticPosterior(LogisticRegressionData data) : data_(std::move(data)) {
  data_.validate();
  const Index n = data_.features.rows();
  const Index p = data_.features.cols();
  dim_ = static_cast<int>(p + (data_.intercept ? 1 : 0));
  design_.resize(n, dim_);
  if (data_.intercept) {
    design_.col(0).setOnes();
    design_.rightCols(p) = data_.features;
  } else {
    design_ = data_.features;
  }
  design_t_ = design_.transpose();
  label_row_ = data_.labels.transpose();
}

Dual LogisticPosterior::log_rho(const Dual& x) const {
  check_dim(x);
  const double var = data_.prior_scale * data_.prior_scale;
  Dual prior = ad::add_scalar(ad::scale(ad::sum_cols(ad::square(x)), -0.5 / var),
                              -0.5 * dim_ * (kLog2Pi + std::log(var)));
  if (design_.rows() == 0) return prior;
  Dual z = ad::matmul(x, Dual(ad::constant(design_t_)));  // B x n
  Dual ll = ad::sum_cols(ad::sub(ad::mul(z, Dual(row_const(label_row_))), ad::softplus(z)));
  return ad::add(ll, prior);
}

Dual LogisticPosterior::score(const Dual& x) const {
  check_dim(x);
  const double var = data_.prior_scale * data_.prior_scale;
  Dual prior = ad::scale(x, -1.0 / var);
  if (design_.rows() == 0) return prior;
  Dual z = ad::matmul(x, Dual(ad::constant(design_t_)));
  Dual resid = ad::sub(Dual(row_const(label_row_)), ad::sigmoid(z));  // B x n
  return ad::add(ad::matmul(resid, Dual(ad::constant(design_))), prior);
}

VectorXd LogisticPosterior::log_likelihood(const MatrixXd& w) const {
  if (w.cols() != dim_) throw std::invalid_argument("logistic: weight dimension mismatch");
  if (design_.rows() == 0) return VectorXd::Zero(w.rows());
  Var z = ad::constant(w * design_t_);
  return ad::sum_cols(ad::sub(ad::mul(z, row_const(label_row_)), ad::softplus(z))).value().col(0);
}

std::shared_ptr<LogisticPosterior> logistic_posterior(LogisticRegressionData data) {
  return std::make_shared<LogisticPosterior>(std::move(data));
}

}  // namespace osds::targets
