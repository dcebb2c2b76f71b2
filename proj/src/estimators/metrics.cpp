#include "osds/estimators/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace osds::estimators {

double log_mean_exp(const Eigen::VectorXd& v) {
  if (v.size() == 0) throw std::invalid_argument("log_mean_exp of an empty vector");
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum() / static_cast<double>(v.size()));
}

double elbo(const WeightSet& ws) { return ws.log_weights.mean(); }

double eubo(const Eigen::VectorXd& forward_log_weights) {
  double sum = 0.0;
  Eigen::Index n = 0;
  for (double v : forward_log_weights) {
    if (!std::isfinite(v)) continue;
    sum += v;
    ++n;
  }
  if (n == 0) throw std::runtime_error("eubo: no finite forward weight");
  return sum / static_cast<double>(n);
}

double ess(const WeightSet& ws) {
  const auto& lw = ws.log_weights;
  const double m = lw.maxCoeff();
  const Eigen::ArrayXd w = (lw.array() - m).exp();
  const double s1 = w.sum();
  const double s2 = w.square().sum();
  return s1 * s1 / (static_cast<double>(lw.size()) * s2);
}

double log_z_hat(const WeightSet& ws) { return log_mean_exp(ws.log_weights); }

double delta_log_z(const WeightSet& ws, double exact_log_z) {
  return std::abs(exact_log_z - log_z_hat(ws));
}

MetricReport make_report(const WeightSet& ws, std::optional<double> exact_log_z,
                         std::optional<double> eubo_value, std::optional<double> sinkhorn_value) {
  MetricReport r;
  r.run_id = ws.run_id;
  r.seed = ws.seed;
  r.nfe = ws.nfe;
  r.kind = ws.kind;
  r.elbo = elbo(ws);
  r.ess = ess(ws);
  r.log_z_hat = log_z_hat(ws);
  if (exact_log_z) r.delta_log_z = delta_log_z(ws, *exact_log_z);
  r.eubo = eubo_value;
  r.sinkhorn = sinkhorn_value;
  r.n_samples = ws.size();
  r.n_dropped = ws.n_dropped;
  return r;
}

nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["run_id"] = r.run_id;
  j["seed"] = r.seed;
  j["nfe"] = r.nfe;
  j["weight_kind"] = to_string(r.kind);
  j["elbo"] = r.elbo;
  j["eubo"] = r.eubo ? nlohmann::ordered_json(*r.eubo) : nlohmann::ordered_json(nullptr);
  j["ess"] = r.ess;
  j["log_z_hat"] = r.log_z_hat;
  j["delta_log_z"] =
      r.delta_log_z ? nlohmann::ordered_json(*r.delta_log_z) : nlohmann::ordered_json(nullptr);
  j["sinkhorn"] = r.sinkhorn ? nlohmann::ordered_json(*r.sinkhorn) : nlohmann::ordered_json(nullptr);
  j["n_samples"] = r.n_samples;
  j["n_dropped"] = r.n_dropped;
  return j;
}

void write_jsonl(std::ostream& os, const nlohmann::ordered_json& line) {
  os << line.dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::strict) << '\n';
}

}  // namespace osds::estimators
