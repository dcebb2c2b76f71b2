#include "osds/diagnostics/diagnostics.hpp"

#include "osds/dynamics/kernels.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace osds::diagnostics {

nlohmann::ordered_json KernelGapReport::to_json() const {
  nlohmann::ordered_json j;
  j["beta"] = beta;
  j["sigma0_sq"] = sigma0_sq;
  j["A"] = a;
  j["Q"] = q;
  j["K"] = k;
  j["Sigma_post"] = sigma_post;
  j["em_backward_coef"] = em_backward_coef;
  j["em_backward_var"] = em_backward_var;
  j["marginal_var"] = marginal_var;
  j["expected_kl_nats"] = expected_kl;
  return j;
}

std::string KernelGapReport::to_text() const {
  char buf[1024];
  std::snprintf(buf, sizeof(buf),
                "kernel gap (beta=%g, sigma0^2=%g)\n"
                "  forward EM          A = %.6f   Q = %.6f\n"
                "  time-adjoint        K = %.6f   Sigma_post = %.6f\n"
                "  surrogate EM back   coef = %.6f   var = %.6f\n"
                "  terminal marginal   var = %.6f\n"
                "  expected KL         %.4f nats\n",
                beta, sigma0_sq, a, q, k, sigma_post, em_backward_coef, em_backward_var,
                marginal_var, expected_kl);
  return buf;
}

KernelGapReport kernel_gap(double beta, double sigma0_sq) {
  if (!(beta > 0.0)) throw std::invalid_argument("kernel_gap: beta must be positive");
  if (!(sigma0_sq > 0.0)) throw std::invalid_argument("kernel_gap: sigma0^2 must be positive");
  KernelGapReport r;
  r.beta = beta;
  r.sigma0_sq = sigma0_sq;
  r.a = 1.0 + 0.5 * beta;
  r.q = beta * sigma0_sq;
  const auto adj = dynamics::kalman_time_adjoint(sigma0_sq, r.a, r.q);
  r.k = adj.coef;
  r.sigma_post = adj.var;
  r.em_backward_coef = 1.0 - 0.5 * beta;
  r.em_backward_var = r.q;
  r.marginal_var = r.a * r.a * sigma0_sq + r.q;
  const double dk = r.k - r.em_backward_coef;
  r.expected_kl = 0.5 * (std::log(r.em_backward_var / r.sigma_post) +
                         (r.sigma_post + dk * dk * r.marginal_var) / r.em_backward_var - 1.0);
  return r;
}

std::int64_t delta_nfe(std::int64_t n, std::int64_t batch, std::int64_t iterations,
                       std::int64_t samples) {
  return (n - 1) * samples - 3 * iterations * batch;
}

NfeScenario nfe_savings(std::int64_t n, std::int64_t batch, std::int64_t iterations,
                        const std::vector<std::int64_t>& samples) {
  if (n < 2 || batch < 1 || iterations < 1) {
    throw std::invalid_argument("nfe_savings: need N >= 2, B >= 1, I >= 1");
  }
  NfeScenario s;
  s.n = n;
  s.batch = batch;
  s.iterations = iterations;
  s.training_overhead = 3 * iterations * batch;
  s.s_break = (s.training_overhead + (n - 1) - 1) / (n - 1);
  s.s_break_exact = static_cast<double>(s.training_overhead) / static_cast<double>(n - 1);
  s.asymptotic_savings = 1.0 - 1.0 / static_cast<double>(n);
  std::vector<std::int64_t> grid = samples;
  if (grid.empty()) {
    grid = {s.s_break / 10, s.s_break, 10 * s.s_break, 100 * s.s_break, 1000000000};
  }
  for (auto m : grid) {
    const auto delta = delta_nfe(n, batch, iterations, m);
    const double rel = m > 0 ? static_cast<double>(delta) / (static_cast<double>(n) * m) : 0.0;
    s.rows.push_back({m, delta, rel});
  }
  return s;
}

std::vector<NfeScenario> default_nfe_scenarios() {
  return {nfe_savings(128, 512, 10000), nfe_savings(256, 64, 50000)};
}

nlohmann::ordered_json NfeScenario::to_json() const {
  nlohmann::ordered_json j;
  j["N"] = n;
  j["B"] = batch;
  j["I"] = iterations;
  j["training_overhead"] = training_overhead;
  j["S_break"] = s_break;
  j["S_break_exact"] = s_break_exact;
  j["asymptotic_relative_savings"] = asymptotic_savings;
  auto rows_json = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["S"] = r.samples;
    row["delta_nfe"] = r.delta_nfe;
    row["relative_savings"] = r.relative_savings;
    rows_json.push_back(row);
  }
  j["rows"] = rows_json;
  return j;
}

std::string NfeScenario::to_text() const {
  std::ostringstream os;
  os << "N=" << n << " B=" << batch << " I=" << iterations << "\n"
     << "  training overhead 3IB = " << training_overhead << "\n"
     << "  S_break = " << s_break << " (exact " << s_break_exact << ")\n"
     << "  asymptotic relative savings = " << asymptotic_savings << "\n";
  for (const auto& r : rows) {
    os << "  S=" << r.samples << "  delta_NFE=" << r.delta_nfe
       << "  relative savings=" << r.relative_savings << "\n";
  }
  return os.str();
}

std::vector<SweepRow> few_step_collapse_sweep(const SweepSetup& setup,
                                              const std::vector<int>& nfe_list) {
  const auto& s = setup.sampler;
  const auto exact = s.target->exact_log_z();
  std::vector<SweepRow> rows;
  for (int nfe : nfe_list) {
    if (nfe < 1) throw std::invalid_argument("few_step_collapse_sweep: NFE must be >= 1");
    Rng rng(setup.seed, 100 + static_cast<std::uint64_t>(nfe));
    SweepRow row;
    row.nfe = nfe;

    const Eigen::MatrixXd x0 = s.prior.sample(rng, setup.samples);
    auto df = estimators::df_log_weights(s, x0, nfe, rng);
    auto df_ws = estimators::WeightSet::from_raw(df.log_weights, estimators::WeightKind::DF, nfe,
                                                 setup.seed, setup.run_id);
    row.df = estimators::make_report(df_ws, exact);

    const auto disc = dynamics::Discretization::uniform(nfe, s.schedule.horizon());
    dynamics::SimulateOptions so;
    so.condition_step = setup.fb_condition_step > 0.0 ? setup.fb_condition_step : disc.base_step();
    so.abort_on_nonfinite = false;
    auto tr = dynamics::simulate_forward(s.control, s.schedule, s.prior, disc, rng,
                                         setup.samples, so);
    auto fb_ws = estimators::WeightSet::from_raw(estimators::fb_log_weights(tr, *s.target),
                                                 estimators::WeightKind::FB, nfe, setup.seed,
                                                 setup.run_id);
    row.fb = estimators::make_report(fb_ws, exact);
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_table(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%5s | %12s %9s %10s | %12s %9s %10s\n", "NFE", "DF ELBO",
                "DF ESS", "DF |dlogZ|", "RND ELBO", "RND ESS", "RND |dlogZ|");
  os << buf;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%5d | %12.4f %9.4f %10.4f | %12.4f %9.4f %10.4f\n", r.nfe,
                  r.df.elbo, r.df.ess, r.df.delta_log_z.value_or(nan), r.fb.elbo, r.fb.ess,
                  r.fb.delta_log_z.value_or(nan));
    os << buf;
  }
  return os.str();
}

}  // namespace osds::diagnostics
