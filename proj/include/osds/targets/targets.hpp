#pragma once

#include "osds/diffcore/autodiff.hpp"
#include "osds/diffcore/rng.hpp"

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace osds::targets {

/// Unnormalized log-density with an analytic score.
///
/// Both log_rho and score are written with graph operations so that the
/// control network can use the score as an input feature and still be
/// differentiated in x (tangents) and through states (reverse mode).
class TargetDensity {
 public:
  virtual ~TargetDensity() = default;

  virtual int dim() const = 0;
  virtual std::string name() const = 0;

  /// Rows of x are points; returns B x 1.
  virtual ad::Dual log_rho(const ad::Dual& x) const = 0;
  /// grad_x log_rho, B x D.
  virtual ad::Dual score(const ad::Dual& x) const = 0;

  virtual std::optional<double> exact_log_z() const { return std::nullopt; }
  virtual bool has_reference_sampler() const { return false; }
  /// Draws n exact samples from rho / Z. Throws when no sampler exists.
  virtual Eigen::MatrixXd sample(Rng& rng, Eigen::Index n) const;

  Eigen::VectorXd evaluate_log_rho(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd evaluate_score(const Eigen::MatrixXd& x) const;

 protected:
  void check_dim(const ad::Dual& x) const;
};

using TargetPtr = std::shared_ptr<const TargetDensity>;

/// Isotropic normalized Gaussian N(mean, scale^2 I); also the sampler prior.
class GaussianPrior {
 public:
  GaussianPrior(Eigen::VectorXd mean, double scale);
  static GaussianPrior standard(int dim, double scale = 1.0);

  int dim() const { return static_cast<int>(mean_.size()); }
  const Eigen::VectorXd& mean() const { return mean_; }
  double scale() const { return scale_; }

  ad::Dual log_density(const ad::Dual& x) const;
  Eigen::VectorXd evaluate_log_density(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd sample(Rng& rng, Eigen::Index n) const;

 private:
  Eigen::VectorXd mean_;
  double scale_;
};

struct MixtureMode {
  Eigen::VectorXd mean;
  double scale = 1.0;
  double weight = 1.0;
};

/// rho(x) = sum_k w_k N(x; mu_k, s_k^2 I), so log Z = log sum_k w_k.
class GaussianMixture final : public TargetDensity {
 public:
  GaussianMixture(std::vector<MixtureMode> modes, int dim);

  int dim() const override { return dim_; }
  std::string name() const override { return "gmm"; }
  ad::Dual log_rho(const ad::Dual& x) const override;
  ad::Dual score(const ad::Dual& x) const override;
  std::optional<double> exact_log_z() const override;
  bool has_reference_sampler() const override { return true; }
  Eigen::MatrixXd sample(Rng& rng, Eigen::Index n) const override;

  const std::vector<MixtureMode>& modes() const { return modes_; }

 private:
  ad::Dual component_logits(const ad::Dual& x) const;

  std::vector<MixtureMode> modes_;
  int dim_;
  Eigen::MatrixXd means_t_;      // D x K
  Eigen::MatrixXd scaled_means_;  // K x D, mu_k / s_k^2
  Eigen::MatrixXd inv_var_col_;   // K x 1, 1 / s_k^2
  Eigen::MatrixXd quad_coef_;     // 1 x K, -1 / (2 s_k^2)
  Eigen::MatrixXd offsets_;       // 1 x K
};

std::shared_ptr<GaussianMixture> gmm_target(std::vector<MixtureMode> modes, int dim);

/// Equal-weight mixture with means uniform in [lo, hi]^dim, normalized weights.
std::shared_ptr<GaussianMixture> random_gmm(int n_modes, int dim, double lo, double hi,
                                            double scale, Rng& rng);

/// Neal's funnel: x1 ~ N(0, 3^2), x_rest | x1 ~ N(0, exp(x1) I).
class Funnel final : public TargetDensity {
 public:
  explicit Funnel(int dim = 10);

  int dim() const override { return dim_; }
  std::string name() const override { return "funnel"; }
  ad::Dual log_rho(const ad::Dual& x) const override;
  ad::Dual score(const ad::Dual& x) const override;
  std::optional<double> exact_log_z() const override { return 0.0; }
  bool has_reference_sampler() const override { return true; }
  Eigen::MatrixXd sample(Rng& rng, Eigen::Index n) const override;

 private:
  int dim_;
};

std::shared_ptr<Funnel> funnel_target(int dim = 10);

/// Separable double wells: sum_{i<m} (-x_i^4 + delta x_i^2) - 1/2 sum_{i>=m} x_i^2.
class ManyWell final : public TargetDensity {
 public:
  ManyWell(int dim = 5, int n_wells = 5, double delta = 4.0, int quadrature_nodes = 200);

  int dim() const override { return dim_; }
  std::string name() const override { return "manywell"; }
  ad::Dual log_rho(const ad::Dual& x) const override;
  ad::Dual score(const ad::Dual& x) const override;
  std::optional<double> exact_log_z() const override { return log_z_; }
  bool has_reference_sampler() const override { return true; }
  Eigen::MatrixXd sample(Rng& rng, Eigen::Index n) const override;

  int n_wells() const { return wells_; }
  double delta() const { return delta_; }

 private:
  int dim_;
  int wells_;
  double delta_;
  double log_z_;
  Eigen::MatrixXd quartic_row_;  // 1 x D
  Eigen::MatrixXd quad_row_;     // 1 x D
  double envelope_bound_;        // rejection constant for one double-well coordinate
};

std::shared_ptr<ManyWell> manywell_target(int dim = 5, int n_wells = 5, double delta = 4.0);

/// log of the integral of exp(-x^4 + delta x^2) by Gauss-Hermite quadrature.
double double_well_log_normalizer(double delta, int nodes);

/// Gauss-Hermite nodes and weights for the weight function exp(-x^2).
void gauss_hermite(int n, Eigen::VectorXd& nodes, Eigen::VectorXd& weights);

struct LogisticRegressionData {
  Eigen::MatrixXd features;  // n_rows x n_features
  Eigen::VectorXd labels;    // n_rows, entries in {0, 1}
  double prior_scale = 1.0;
  bool intercept = true;

  void validate() const;
};

/// Bayesian logistic regression posterior over weights (and intercept).
class LogisticPosterior final : public TargetDensity {
 public:
  explicit LogisticPosterior(LogisticRegressionData data);

  int dim() const override { return dim_; }
  std::string name() const override { return "logistic"; }
  ad::Dual log_rho(const ad::Dual& x) const override;
  ad::Dual score(const ad::Dual& x) const override;

  /// Log-likelihood part only, for inspection.
  Eigen::VectorXd log_likelihood(const Eigen::MatrixXd& w) const;

 private:
  LogisticRegressionData data_;
  int dim_;
  Eigen::MatrixXd design_;    // n x D (intercept column first when enabled)
  Eigen::MatrixXd design_t_;  // D x n
  Eigen::MatrixXd label_row_; // 1 x n
};

std::shared_ptr<LogisticPosterior> logistic_posterior(LogisticRegressionData data);

struct CsvOptions {
  bool standardize = true;
  double prior_scale = 1.0;
  bool intercept = true;
};

/// Reads a headed CSV whose last column is a 0/1 label.
LogisticRegressionData load_csv(const std::string& path, const CsvOptions& options = {});

}  // namespace osds::targets
