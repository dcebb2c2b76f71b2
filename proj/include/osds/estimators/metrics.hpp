#pragma once

#include "osds/estimators/weights.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <optional>
#include <ostream>
#include <string>

namespace osds::estimators {

/// log(mean(exp(v))) with max subtraction.
double log_mean_exp(const Eigen::VectorXd& v);

double elbo(const WeightSet& ws);
/// Mean of forward log-weights over target samples (non-finite entries skipped).
double eubo(const Eigen::VectorXd& forward_log_weights);
/// (sum w)^2 / (m sum w^2), computed from log-weights.
double ess(const WeightSet& ws);
double log_z_hat(const WeightSet& ws);
double delta_log_z(const WeightSet& ws, double exact_log_z);

struct MetricReport {
  std::string run_id;
  std::uint64_t seed = 0;
  int nfe = 0;
  WeightKind kind = WeightKind::DF;
  double elbo = 0.0;
  double ess = 0.0;
  double log_z_hat = 0.0;
  std::optional<double> eubo;
  std::optional<double> delta_log_z;
  std::optional<double> sinkhorn;
  Eigen::Index n_samples = 0;
  int n_dropped = 0;
};

MetricReport make_report(const WeightSet& ws, std::optional<double> exact_log_z = std::nullopt,
                         std::optional<double> eubo_value = std::nullopt,
                         std::optional<double> sinkhorn_value = std::nullopt);

nlohmann::ordered_json to_json(const MetricReport& r);
/// Writes one JSON object followed by a newline.
void write_jsonl(std::ostream& os, const nlohmann::ordered_json& line);

}  // namespace osds::estimators
