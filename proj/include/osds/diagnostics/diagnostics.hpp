#pragma once

#include "osds/diffcore/rng.hpp"
#include "osds/estimators/metrics.hpp"
#include "osds/estimators/weights.hpp"
#include "osds/dynamics/simulate.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace osds::diagnostics {

/// One-step kernel mismatch on the 1D VP chain with constant beta.
struct KernelGapReport {
  double beta = 0.0;
  double sigma0_sq = 0.0;
  double a = 0.0;                 // forward mean coefficient 1 + beta / 2
  double q = 0.0;                 // forward variance beta sigma0^2
  double k = 0.0;                 // time-adjoint gain
  double sigma_post = 0.0;        // time-adjoint variance
  double em_backward_coef = 0.0;  // 1 - beta / 2
  double em_backward_var = 0.0;
  double marginal_var = 0.0;      // A^2 sigma0^2 + Q
  double expected_kl = 0.0;       // nats

  nlohmann::ordered_json to_json() const;
  std::string to_text() const;
};

KernelGapReport kernel_gap(double beta = 10.0, double sigma0_sq = 1.0);

/// Cost model: OSDS pays 3 I B extra evaluations in training and saves
/// N - 1 evaluations per generated sample.
struct NfeScenario {
  std::int64_t n = 0;
  std::int64_t batch = 0;
  std::int64_t iterations = 0;
  std::int64_t training_overhead = 0;  // 3 I B
  std::int64_t s_break = 0;            // ceil(3 I B / (N - 1))
  double s_break_exact = 0.0;
  double asymptotic_savings = 0.0;     // 1 - 1 / N
  struct Row {
    std::int64_t samples;
    std::int64_t delta_nfe;
    double relative_savings;
  };
  std::vector<Row> rows;

  nlohmann::ordered_json to_json() const;
  std::string to_text() const;
};

/// (N - 1) S - 3 I B.
std::int64_t delta_nfe(std::int64_t n, std::int64_t batch, std::int64_t iterations,
                       std::int64_t samples);

NfeScenario nfe_savings(std::int64_t n, std::int64_t batch, std::int64_t iterations,
                        const std::vector<std::int64_t>& samples = {});

/// The two cost scenarios (N=128, B=512, I=1e4) and (N=256, B=64, I=5e4).
std::vector<NfeScenario> default_nfe_scenarios();

struct SweepRow {
  int nfe = 0;
  estimators::MetricReport df;
  estimators::MetricReport fb;
};

struct SweepSetup {
  estimators::FlowSampler sampler;
  /// Step size the control is conditioned on for the stochastic sampler.
  double fb_condition_step = 0.0;
  Eigen::Index samples = 2000;
  std::uint64_t seed = 0;
  std::string run_id;
};

/// For each NFE: DF weights from the PF map with NFE steps and FB-RND weights
/// from an NFE-step EM chain.
std::vector<SweepRow> few_step_collapse_sweep(const SweepSetup& setup,
                                              const std::vector<int>& nfe_list = {1, 2, 4, 8, 16,
                                                                                  32, 64, 128});

std::string sweep_table(const std::vector<SweepRow>& rows);

}  // namespace osds::diagnostics
