#include "osds/controlnet/controlnet.hpp"
#include "osds/dynamics/kernels.hpp"
#include "osds/estimators/metrics.hpp"
#include "osds/estimators/sinkhorn.hpp"
#include "osds/estimators/weights.hpp"
#include "osds/targets/targets.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

using namespace osds;
using namespace osds::estimators;
using dynamics::Discretization;
using dynamics::NoiseSchedule;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

NoiseSchedule unit_diffusion() { return NoiseSchedule::constant(1e-24, 1e12); }

// Exact 1D flow x -> a x built from the exponential of b(x) = (log a / T) x.
FlowSampler linear_flow(double a) {
  const double k = std::log(a);
  FlowSampler s;
  s.schedule = unit_diffusion();
  s.prior = targets::GaussianPrior::standard(1);
  s.target = targets::gmm_target({{VectorXd::Zero(1), a, a * std::sqrt(2 * std::numbers::pi)}}, 1);
  s.pf.solver = dynamics::SolverKind::Custom;
  s.pf.custom = [k](const ad::Var& x, const VectorXd&, const VectorXd& h) {
    return dynamics::StepResult{ad::mul(x, ad::constant(VectorXd((k * h).array().exp()))),
                                ad::constant(VectorXd(k * h))};
  };
  s.control = dynamics::zero_control();
  return s;
}

WeightSet weights_of(const VectorXd& v) { return WeightSet::from_raw(v, WeightKind::DF); }

}  // namespace

TEST_SUITE("estimators") {
  TEST_CASE("identity transport onto the prior gives zero log-weights") {
    FlowSampler s;
    s.schedule = unit_diffusion();
    s.prior = targets::GaussianPrior::standard(2, 1.3);
    s.target = targets::gmm_target({{VectorXd::Zero(2), 1.3, 1.0}}, 2);
    s.control = dynamics::zero_control();
    Rng rng(1);
    MatrixXd x0 = s.prior.sample(rng, 50);
    auto r = df_log_weights(s, x0, 4, rng);
    CHECK(r.log_weights.cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("analytic linear flow has zero-variance weights at log Z") {
    const double a = 2.5;
    auto s = linear_flow(a);
    Rng rng(2);
    MatrixXd x0 = s.prior.sample(rng, 1000);
    for (int n : {1, 3, 8}) {
      auto r = df_log_weights(s, x0, n, rng);
      const double log_z = std::log(a * std::sqrt(2 * std::numbers::pi));
      CHECK(*s.target->exact_log_z() == doctest::Approx(log_z).epsilon(1e-15));
      CHECK((r.log_weights.array() - log_z).abs().maxCoeff() < 1e-10);
      auto ws = weights_of(r.log_weights);
      CHECK(delta_log_z(ws, log_z) < 1e-10);
      CHECK(ess(ws) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("DF importance sampling is unbiased for Z") {
    FlowSampler s;
    s.schedule = NoiseSchedule::constant(0.5);
    s.prior = targets::GaussianPrior::standard(1);
    s.target = targets::gmm_target({{VectorXd::Constant(1, 0.3), 1.2, 2.0}}, 1);
    s.control = dynamics::zero_control();
    s.pf.divergence = dynamics::DivergenceMode::Exact;
    s.substeps = 8;
    Rng rng(3);
    auto r = df_log_weights(s, s.prior.sample(rng, 100000), 2, rng);
    VectorXd w = r.log_weights.array().exp();
    auto m = oracle::moments(w);
    CHECK(std::abs(m.mean - 2.0) < 3 * m.se);
  }

  TEST_CASE("DF weights are stable under substep refinement") {
    Rng rng(4);
    controlnet::NetworkConfig cfg;
    cfg.width = 8;
    cfg.fourier_features = 2;
    auto net = controlnet::ControlNet::init(cfg, 2, rng);
    for (auto& [name, m] : net.params().segments()) m = rng.gaussian(m.rows(), m.cols()) * 0.2;
    FlowSampler s;
    s.schedule = NoiseSchedule::vp(0.01, 4.0);
    s.prior = targets::GaussianPrior::standard(2);
    s.target = targets::gmm_target({{VectorXd::Ones(2), 1.0, 1.0}, {-VectorXd::Ones(2), 0.7, 1.0}}, 2);
    s.control = net.frozen(net.params(), s.target);
    s.pf.divergence = dynamics::DivergenceMode::Exact;
    MatrixXd x0 = s.prior.sample(rng, 200);
    auto lz = [&](int sub) {
      s.substeps = sub;
      return log_z_hat(weights_of(df_log_weights(s, x0, 1, rng).log_weights));
    };
    const double a = lz(8), b = lz(16), c = lz(32);
    CHECK(std::abs(b - c) < 1e-4);
    CHECK(std::abs(b - c) < std::abs(a - b));
  }

  TEST_CASE("reverse integration gives exact forward weights for the exact flow") {
    const double a = 0.6;
    auto s = linear_flow(a);
    Rng rng(5);
    MatrixXd y = s.target->sample(rng, 100);
    VectorXd fw = df_forward_log_weights(s, y, 2, rng);
    const double log_z = std::log(a * std::sqrt(2 * std::numbers::pi));
    CHECK((fw.array() - log_z).abs().maxCoeff() < 1e-10);
    CHECK(eubo(fw) == doctest::Approx(log_z).epsilon(1e-10));
  }

  TEST_CASE("EUBO bounds the ELBO from above on a matched run") {
    Rng rng(6);
    FlowSampler s;
    s.schedule = NoiseSchedule::constant(1.0);
    s.prior = targets::GaussianPrior::standard(2);
    s.target = targets::gmm_target({{VectorXd::Constant(2, 1.5), 0.8, 1.0}, {VectorXd::Constant(2, -1.0), 0.6, 1.0}}, 2);
    s.control = dynamics::zero_control();
    s.pf.divergence = dynamics::DivergenceMode::Exact;
    s.substeps = 16;
    auto r = df_log_weights(s, s.prior.sample(rng, 2000), 1, rng);
    auto fw = df_forward_log_weights(s, s.target->sample(rng, 2000), 1, rng);
    const double lo = elbo(weights_of(r.log_weights)), hi = eubo(fw);
    CHECK(lo < *s.target->exact_log_z());
    CHECK(hi > *s.target->exact_log_z());
  }

  TEST_CASE("FB weights with the exact time-adjoint kernel vanish") {
    auto sched = NoiseSchedule::constant(10.0);
    auto prior = targets::GaussianPrior::standard(1);
    auto target = targets::gmm_target({{VectorXd::Zero(1), std::sqrt(46.0), 1.0}}, 1);
    Rng rng(7);
    auto tr = dynamics::simulate_forward(dynamics::zero_control(), sched, prior,
                                         Discretization::uniform(1), rng, 1000);
    auto adj = dynamics::kalman_time_adjoint(1.0, 6.0, 10.0);
    VectorXd lw = fb_log_weights(tr, *target, [&](const MatrixXd& x, const MatrixXd& xn, int) {
      return adj.log_density(x, xn);
    });
    CHECK(lw.cwiseAbs().maxCoeff() < 1e-10);

    VectorXd sur = fb_log_weights(tr, *target);
    auto m = oracle::moments(sur);
    CHECK(std::abs(m.mean + 40.6643) < 3 * m.se + 0.01);
  }

  TEST_CASE("scaling the target shifts every FB weight by log c") {
    auto sched = NoiseSchedule::vp();
    auto prior = targets::GaussianPrior::standard(2);
    std::vector<targets::MixtureMode> modes{{VectorXd::Zero(2), 1.0, 1.0}};
    auto base = targets::gmm_target(modes, 2);
    modes[0].weight = 3.0;
    auto scaled = targets::gmm_target(modes, 2);
    Rng rng(8);
    auto tr = dynamics::simulate_forward(dynamics::zero_control(), sched, prior,
                                         Discretization::uniform(5), rng, 20);
    VectorXd diff = fb_log_weights(tr, *scaled) - fb_log_weights(tr, *base);
    CHECK((diff.array() - std::log(3.0)).abs().maxCoeff() < 1e-12);
  }

  TEST_CASE("surrogate backward chain forward weights at the noiseless limit") {
    auto sched = NoiseSchedule::vp();
    auto prior = targets::GaussianPrior::standard(1);
    auto target = targets::gmm_target({{VectorXd::Zero(1), 1.0, 1.0}}, 1);
    Rng rng(9);
    MatrixXd y = target->sample(rng, 500);
    VectorXd fw = fb_forward_log_weights(dynamics::zero_control(), sched, prior, *target,
                                         Discretization::uniform(8), y, 0.125, rng);
    CHECK(fw.allFinite());
    CHECK(fw.size() == 500);
  }

  TEST_CASE("metric identities") {
    VectorXd flat = VectorXd::Constant(10, std::log(3.0));
    auto ws = weights_of(flat);
    CHECK(elbo(ws) == doctest::Approx(std::log(3.0)).epsilon(1e-15));
    CHECK(ess(ws) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(delta_log_z(ws, std::log(3.0)) < 1e-15);

    VectorXd dom = VectorXd::Zero(50);
    dom(7) = 800.0;
    CHECK(ess(weights_of(dom)) == doctest::Approx(1.0 / 50).epsilon(1e-12));

    Rng rng(10);
    for (int i = 0; i < 100; ++i) {
      VectorXd v = rng.gaussian(20, 1).col(0) * 3.0;
      auto w = weights_of(v);
      CHECK(elbo(w) <= log_z_hat(w));
      const double e = ess(w);
      CHECK(e > 0.0);
      CHECK(e <= 1.0);
    }
    CHECK(log_mean_exp(VectorXd::Constant(3, 1000.0)) == doctest::Approx(1000.0));
  }

  TEST_CASE("weight sets drop non-finite entries") {
    VectorXd raw(4);
    raw << 1.0, kNaN, -std::numeric_limits<double>::infinity(), 2.0;
    auto ws = WeightSet::from_raw(raw, WeightKind::FB, 4, 9, "r");
    CHECK(ws.size() == 2);
    CHECK(ws.n_dropped == 2);
    CHECK_THROWS(WeightSet::from_raw(VectorXd::Constant(3, kNaN), WeightKind::DF));
    CHECK(eubo(raw) == doctest::Approx(1.5));
    CHECK(to_string(WeightKind::FB) == "FB-RND");
  }

  TEST_CASE("report serialization") {
    auto ws = WeightSet::from_raw(VectorXd::Constant(4, -1.0), WeightKind::DF, 16, 3, "run7");
    auto r = make_report(ws, -1.0, std::nullopt, 0.25);
    auto j = to_json(r);
    std::vector<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
    CHECK(keys == std::vector<std::string>{"run_id", "seed", "nfe", "weight_kind", "elbo", "eubo",
                                           "ess", "log_z_hat", "delta_log_z", "sinkhorn",
                                           "n_samples", "n_dropped"});
    CHECK(j["eubo"].is_null());
    CHECK(j["delta_log_z"].get<double>() == doctest::Approx(0.0));
    std::ostringstream os;
    write_jsonl(os, j);
    const std::string line = os.str();
    CHECK(line.back() == '\n');
    CHECK(std::count(line.begin(), line.end(), '\n') == 1);
  }

  TEST_CASE("Sinkhorn divergence on identical sets") {
    Rng rng(11);
    MatrixXd x = rng.gaussian(60, 3);
    auto r = sinkhorn(x, x);
    CHECK(r.converged);
    CHECK(std::abs(r.value) <= 1e-8);
  }

  TEST_CASE("Sinkhorn divergence approaches the sorted 1D transport cost") {
    Rng rng(12);
    VectorXd a = rng.gaussian(40, 1).col(0);
    VectorXd b = (rng.gaussian(40, 1).array() * 0.5 + 1.5).matrix().col(0);
    VectorXd sa = a, sb = b;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    const double w2 = (sa - sb).squaredNorm() / 40.0;
    const double med = median_pairwise_sq_distance(a, b);
    double prev = 1e300;
    for (double scale : {1e-1, 1e-2, 1e-3}) {
      SinkhornOptions o;
      o.epsilon = scale * med;
      o.max_iter = 100000;
      o.tol = 1e-9;
      auto r = sinkhorn(a, b, o);
      CHECK(r.converged);
      const double err = std::abs(r.value - w2);
      CHECK(err <= prev);
      prev = err;
    }
    CHECK(prev / w2 < 0.01);
  }

  TEST_CASE("Sinkhorn reports non-convergence") {
    Rng rng(13);
    SinkhornOptions o;
    o.max_iter = 1;
    o.tol = 1e-14;
    auto r = sinkhorn(rng.gaussian(30, 2), rng.gaussian(30, 2) * 3.0, o);
    CHECK_FALSE(r.converged);
    CHECK(r.violation > o.tol);
  }

  TEST_CASE("Gaussian entropy gap") {
    dynamics::GaussianKernel k{0.3, 0.7};
    CHECK(gaussian_entropy_gap(k, k, 5.0) == 0.0);
    auto adj = dynamics::kalman_time_adjoint(1.0, 6.0, 10.0);
    auto sur = dynamics::em_backward_kernel(1.0, 1.0, NoiseSchedule::constant(10.0));
    const double gap = gaussian_entropy_gap(adj, sur, 46.0);
    const double kk = 6.0 / 46.0, sp = 10.0 / 46.0;
    const double ref = -0.5 * (std::log(10.0 / sp) + (sp + (kk + 4.0) * (kk + 4.0) * 46.0) / 10.0 - 1.0);
    CHECK(std::abs(gap - ref) < 1e-10);
    CHECK(gap > -42.7);
    CHECK(gap < -38.7);
    Rng rng(14);
    for (int i = 0; i < 50; ++i) {
      dynamics::GaussianKernel p{rng.gaussian(1, 1)(0, 0), rng.uniform() + 0.1};
      dynamics::GaussianKernel q{rng.gaussian(1, 1)(0, 0), rng.uniform() + 0.1};
      CHECK(gaussian_entropy_gap(p, q, rng.uniform() * 3) <= 0.0);
    }
  }
}
