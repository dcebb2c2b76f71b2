#include "osds/controlnet/controlnet.hpp"
#include "osds/targets/targets.hpp"
#include "osds/trainer/optim.hpp"
#include "osds/trainer/trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace osds;
using namespace osds::trainer;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

ParameterVector scalar(double v) {
  ParameterVector p;
  p.add("theta", MatrixXd::Constant(1, 1, v));
  return p;
}

struct Fixture {
  controlnet::ControlNet net;
  targets::TargetPtr target;
  targets::GaussianPrior prior = targets::GaussianPrior::standard(2);
  dynamics::NoiseSchedule schedule = dynamics::NoiseSchedule::vp();
  TrainConfig config;

  static controlnet::ControlNet make_net() {
    controlnet::NetworkConfig c;
    c.width = 8;
    c.fourier_features = 2;
    Rng rng(1);
    return controlnet::ControlNet::init(c, 2, rng);
  }

  Fixture() : net(make_net()) {
    target = targets::gmm_target({{VectorXd::Constant(2, 1.0), 0.7, 1.0},
                                  {VectorXd::Constant(2, -1.0), 0.7, 1.0}},
                                 2);
    config.iterations = 6;
    config.batch = 8;
    config.base_steps = 4;
    config.anchors = 4;
    config.ma_window = 2;
    config.seed = 5;
  }

  TrainResult run(const TrainHooks& hooks = {}, const TrainState* resume = nullptr) const {
    return train(config, net, target, prior, schedule, hooks, resume);
  }
};

// log rho is undefined on the first `bad_calls` evaluations.
class FlakyTarget final : public targets::TargetDensity {
 public:
  FlakyTarget(targets::TargetPtr inner, int bad_calls) : inner_(std::move(inner)), bad_(bad_calls) {}
  int dim() const override { return inner_->dim(); }
  std::string name() const override { return "flaky"; }
  ad::Dual log_rho(const ad::Dual& x) const override {
    if (calls_++ < bad_) {
      return ad::Dual(ad::constant(MatrixXd::Constant(x.rows(), 1, std::nan(""))));
    }
    return inner_->log_rho(x);
  }
  ad::Dual score(const ad::Dual& x) const override { return inner_->score(x); }

 private:
  targets::TargetPtr inner_;
  int bad_;
  mutable int calls_ = 0;
};

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("AdamW leaves parameters alone for zero gradients without decay") {
    auto p = scalar(0.7);
    auto st = AdamState::zeros_like(p);
    AdamConfig c;
    CHECK(adamw_step(p, st, scalar(0.0), c));
    CHECK(p.at("theta")(0, 0) == 0.7);
    CHECK(st.step == 1);
  }

  TEST_CASE("AdamW single step by hand") {
    auto p = scalar(1.0);
    auto st = AdamState::zeros_like(p);
    AdamConfig c;
    c.lr = 0.1;
    adamw_step(p, st, scalar(1.0), c);
    // m = 0.1, v = 0.001; bias-corrected m = 1, v = 1.
    const double m_hat = 0.1 / (1 - 0.9), v_hat = 0.001 / (1 - 0.999);
    CHECK(std::abs(p.at("theta")(0, 0) - (1.0 - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8))) < 1e-12);

    adamw_step(p, st, scalar(-2.0), c);
    const double m2 = 0.9 * 0.1 + 0.1 * -2.0, v2 = 0.999 * 0.001 + 0.001 * 4.0;
    const double step2 = 0.1 * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.999 * 0.999)) + 1e-8);
    const double first = 1.0 - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8);
    CHECK(std::abs(p.at("theta")(0, 0) - (first - step2)) < 1e-12);
  }

  TEST_CASE("AdamW decay is decoupled") {
    auto p = scalar(2.0);
    auto st = AdamState::zeros_like(p);
    AdamConfig c;
    c.lr = 1e-3;
    c.weight_decay = 0.1;
    for (int k = 1; k <= 5; ++k) {
      adamw_step(p, st, scalar(0.0), c);
      CHECK(p.at("theta")(0, 0) == doctest::Approx(2.0 * std::pow(1 - 1e-4, k)).epsilon(1e-14));
    }
  }

  TEST_CASE("AdamW skips non-finite gradients") {
    auto p = scalar(1.0);
    auto st = AdamState::zeros_like(p);
    CHECK_FALSE(adamw_step(p, st, scalar(std::nan("")), AdamConfig{}));
    CHECK(p.at("theta")(0, 0) == 1.0);
    CHECK(st.skipped == 1);
    CHECK(st.step == 0);
  }

  TEST_CASE("global-norm clipping") {
    ParameterVector g;
    g.add("a", (MatrixXd(1, 2) << 0.3, 0.4).finished());
    CHECK(clip_global_norm(g, 1.0) == doctest::Approx(0.5));
    CHECK(g.at("a")(0, 1) == 0.4);

    ParameterVector h;
    h.add("a", (MatrixXd(1, 2) << 0.0, 4.0 * 0.6).finished());
    h.add("b", MatrixXd::Constant(1, 1, 4.0 * 0.8));
    const VectorXd before = h.flatten();
    CHECK(clip_global_norm(h, 1.0) == doctest::Approx(4.0));
    CHECK(h.flatten().norm() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK((h.flatten() - before / 4.0).cwiseAbs().maxCoeff() < 1e-15);
  }

  TEST_CASE("EMA follows the geometric series") {
    auto ema = scalar(3.0);
    const auto theta = scalar(-1.0);
    for (int k = 1; k <= 50; ++k) {
      ema_update(ema, theta, 0.9);
      CHECK(std::abs(ema.at("theta")(0, 0) - (-1.0 + 4.0 * std::pow(0.9, k))) < 1e-12);
    }
    ema_update(ema, scalar(7.0), 0.0);
    CHECK(ema.at("theta")(0, 0) == 7.0);
  }

  TEST_CASE("config validation") {
    TrainConfig c;
    c.iterations = 0;
    CHECK_THROWS(c.validate());
    c = TrainConfig{};
    c.ema_decay = 1.0;
    CHECK_THROWS(c.validate());
    c = TrainConfig{};
    c.base_steps = 1;
    CHECK_THROWS(c.validate());
  }

  TEST_CASE("single plain step is finite") {
    Fixture f;
    f.config.iterations = 1;
    f.config.weights = {0.0, 0.0, 0.0};
    auto r = f.run();
    REQUIRE(r.log.size() == 1);
    CHECK(std::isfinite(r.log[0].loss));
    CHECK(r.log[0].loss == r.log[0].rnd);
    CHECK(r.nfe_distillation == 0);
    CHECK(r.nfe_simulation == 8 * 4);
    CHECK_FALSE(r.final_state.theta == f.net.params());
  }

  TEST_CASE("training is deterministic and resumable") {
    Fixture f;
    auto a = f.run();
    auto b = f.run();
    REQUIRE(a.log.size() == 6);
    for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].to_json() == b.log[i].to_json());
    CHECK(a.final_state.theta == b.final_state.theta);
    CHECK(a.final_state.ema == b.final_state.ema);

    TrainState mid;
    f.config.checkpoint_every = 3;
    f.run({nullptr, [&](const TrainState& s, const std::string& tag) {
             if (tag == "iter" && s.iteration == 3) mid = s;
           }});
    REQUIRE(mid.iteration == 3);
    auto resumed = f.run({}, &mid);
    REQUIRE(resumed.log.size() == 3);
    CHECK(resumed.log.back().to_json() == a.log.back().to_json());
    CHECK(resumed.final_state.theta == a.final_state.theta);
  }

  TEST_CASE("distillation cost and EMA bookkeeping") {
    Fixture f;
    f.config.ema_decay = 0.5;
    auto r = f.run();
    CHECK(r.nfe_distillation == 6L * 4 * kDistillNfePerAnchor);
    CHECK(r.nfe_simulation == 6L * 8 * 4);
    CHECK(r.final_state.adam.step == 6);
    CHECK_FALSE(r.final_state.ema == r.final_state.theta);
    for (const auto& e : r.log) {
      CHECK(e.state >= 0.0);
      CHECK(e.vol >= 0.0);
    }
  }

  TEST_CASE("best checkpoint holds the highest moving-average ELBO") {
    Fixture f;
    f.config.iterations = 12;
    f.config.ma_window = 3;
    int best_iteration = -1;
    auto r = f.run({nullptr, [&](const TrainState& s, const std::string& tag) {
                      if (tag == "best") best_iteration = s.iteration;
                    }});
    REQUIRE(r.has_best);
    CHECK(best_iteration == r.best_state.iteration);
    for (std::size_t end = 3; end <= r.log.size(); ++end) {
      const double ma = (r.log[end - 1].elbo + r.log[end - 2].elbo + r.log[end - 3].elbo) / 3.0;
      CHECK(r.best_ma_elbo >= ma - 1e-12);
    }
  }

  TEST_CASE("a non-finite loss restores and halves the learning rate once") {
    Fixture f;
    f.target = std::make_shared<FlakyTarget>(f.target, 1);
    auto r = f.run();
    CHECK(r.nan_restarts == 1);
    CHECK(r.log.size() == 6);
    CHECK(r.log.front().lr == doctest::Approx(0.5 * f.config.adam.lr));

    Fixture g;
    g.target = std::make_shared<FlakyTarget>(g.target, 1000);
    CHECK_THROWS_WITH_AS(g.run(), doctest::Contains("after halving"), std::runtime_error);
  }
}
