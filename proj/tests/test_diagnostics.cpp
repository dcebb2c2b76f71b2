#include "osds/diagnostics/diagnostics.hpp"
#include "osds/dynamics/kernels.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace osds;
using namespace osds::diagnostics;
using Eigen::VectorXd;

TEST_SUITE("diagnostics") {
  TEST_CASE("kernel gap at beta = 10") {
    auto r = kernel_gap(10.0, 1.0);
    CHECK(r.a == 6.0);
    CHECK(r.q == 10.0);
    CHECK(r.k == doctest::Approx(6.0 / 46.0).epsilon(1e-14));
    CHECK(r.sigma_post == doctest::Approx(10.0 / 46.0).epsilon(1e-14));
    CHECK(r.em_backward_coef == -4.0);
    CHECK(r.em_backward_var == 10.0);
    CHECK(r.marginal_var == 46.0);
    CHECK(r.expected_kl > 38.7);
    CHECK(r.expected_kl < 42.7);
    CHECK(r.sigma_post < r.q);
    auto j = r.to_json();
    CHECK(j["A"].get<double>() == 6.0);
    CHECK(r.to_text().find("40.66") != std::string::npos);
    CHECK_THROWS(kernel_gap(0.0, 1.0));
  }

  TEST_CASE("kernel gap matches a Monte Carlo average of per-point KLs") {
    auto r = kernel_gap(10.0, 1.0);
    Rng rng(1);
    const int n = 1000000;
    VectorXd x = rng.gaussian(n, 1).col(0) * std::sqrt(r.marginal_var);
    VectorXd kl(n);
    for (int i = 0; i < n; ++i) {
      kl(i) = dynamics::gaussian_kl(r.k * x(i), r.sigma_post, r.em_backward_coef * x(i), r.em_backward_var);
    }
    auto m = oracle::moments(kl);
    CHECK(std::abs(m.mean - r.expected_kl) < 3 * m.se);
  }

  TEST_CASE("kernel gap vanishes in the small-beta limit") {
    CHECK(kernel_gap(1e-6, 1.0).expected_kl < 1e-3);
    CHECK(kernel_gap(1e-3, 1.0).expected_kl < kernel_gap(1e-1, 1.0).expected_kl);
    for (double b : {0.1, 1.0, 5.0, 20.0}) CHECK(kernel_gap(b, 0.5).expected_kl >= 0.0);
  }

  TEST_CASE("NFE cost scenario one") {
    auto s = nfe_savings(128, 512, 10000, {1000, 1000000});
    CHECK(s.training_overhead == 15360000);
    CHECK(s.s_break == 120945);
    CHECK(delta_nfe(128, 512, 10000, s.s_break) >= 0);
    CHECK(delta_nfe(128, 512, 10000, s.s_break - 1) < 0);
    CHECK(s.s_break_exact * 127 == doctest::Approx(15360000.0).epsilon(1e-15));
    CHECK(s.asymptotic_savings == doctest::Approx(1.0 - 1.0 / 128).epsilon(1e-15));
    REQUIRE(s.rows.size() == 2);
    CHECK(s.rows[0].delta_nfe < 0);
    CHECK(s.rows[1].relative_savings < s.asymptotic_savings);
    CHECK(s.rows[1].relative_savings > 0.0);
  }

  TEST_CASE("break-even is exact when it divides") {
    auto s = nfe_savings(4, 1, 1);
    CHECK(s.s_break == 1);
    CHECK(delta_nfe(4, 1, 1, s.s_break) == 0);
    auto defaults = default_nfe_scenarios();
    REQUIRE(defaults.size() == 2);
    CHECK(defaults[1].n == 256);
    CHECK(defaults[1].s_break == (3LL * 50000 * 64 + 254) / 255);
  }

  TEST_CASE("relative savings approach one minus one over N") {
    auto s = nfe_savings(128, 512, 10000, {100000000000LL});
    CHECK(std::abs(s.rows[0].relative_savings - (1.0 - 1.0 / 128)) < 1e-4);
  }

  TEST_CASE("sweep on the uncontrolled sampler") {
    SweepSetup setup;
    setup.sampler.control = dynamics::zero_control();
    setup.sampler.schedule = dynamics::NoiseSchedule::vp();
    setup.sampler.prior = targets::GaussianPrior::standard(2);
    setup.sampler.target = targets::gmm_target({{VectorXd::Zero(2), 1.0, 1.0}}, 2);
    setup.sampler.pf.divergence = dynamics::DivergenceMode::Exact;
    setup.fb_condition_step = 1.0 / 32;
    setup.samples = 200;
    auto rows = few_step_collapse_sweep(setup, {1, 4});
    REQUIRE(rows.size() == 2);
    for (const auto& r : rows) {
      CHECK(std::isfinite(r.df.elbo));
      CHECK(std::isfinite(r.df.log_z_hat));
      CHECK(r.df.ess > 0.0);
      CHECK(r.df.nfe == r.nfe);
      CHECK(r.fb.kind == estimators::WeightKind::FB);
    }
    auto table = sweep_table(rows);
    CHECK(table.find("RND ELBO") != std::string::npos);
    CHECK(std::count(table.begin(), table.end(), '\n') == 3);
  }
}
