#include "osds/diffcore/array.hpp"
#include "osds/diffcore/autodiff.hpp"
#include "osds/diffcore/derivatives.hpp"
#include "osds/diffcore/params.hpp"
#include "osds/diffcore/rng.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace osds;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

ParameterVector scalar_param(double v) {
  ParameterVector p;
  p.add("theta", MatrixXd::Constant(1, 1, v));
  return p;
}

// Two-layer tanh MLP with a least-squares loss on fixed data.
struct MlpFixture {
  MatrixXd x;
  MatrixXd y;
  ParameterVector theta;

  explicit MlpFixture(std::uint64_t seed) {
    Rng rng(seed);
    x = rng.gaussian(16, 4);
    y = rng.gaussian(16, 2);
    theta.add("w1", rng.gaussian(4, 8) * 0.5);
    theta.add("b1", rng.gaussian(1, 8) * 0.1);
    theta.add("w2", rng.gaussian(8, 2) * 0.5);
    theta.add("b2", rng.gaussian(1, 2) * 0.1);
  }

  ScalarLoss loss() const {
    return [this](const ParamBinding& p) {
      ad::Var h = ad::tanh(ad::add(ad::matmul(ad::constant(x), p["w1"]), p["b1"]));
      ad::Var out = ad::add(ad::matmul(h, p["w2"]), p["b2"]);
      return ad::mean(ad::sum_cols(ad::square(ad::sub(out, ad::constant(y)))));
    };
  }
};

}  // namespace

TEST_SUITE("diffcore") {
  TEST_CASE("gradient of a square") {
    auto g = grad([](const ParamBinding& p) { return ad::sum(ad::square(p["theta"])); },
                  scalar_param(3.0));
    CHECK(g.at("theta")(0, 0) == doctest::Approx(6.0).epsilon(1e-15));
  }

  TEST_CASE("gradient of a sum of sines at grid points") {
    ParameterVector p;
    MatrixXd v(1, 2);
    v << 0.0, std::numbers::pi / 2;
    p.add("theta", v);
    auto g = grad([](const ParamBinding& b) { return ad::sum(ad::sin(b["theta"])); }, p);
    CHECK(g.at("theta")(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::abs(g.at("theta")(0, 1)) < 1e-15);
  }

  TEST_CASE("MLP least-squares gradient matches central differences") {
    MlpFixture f(11);
    auto analytic = grad(f.loss(), f.theta).flatten();
    auto numeric = oracle::fd_gradient(f.loss(), f.theta);
    CHECK(oracle::rel_err(analytic, numeric) < 1e-4);
  }

  TEST_CASE("every elementwise op matches central differences") {
    Rng rng(3);
    ParameterVector p;
    p.add("a", rng.gaussian(5, 3));
    p.add("b", rng.gaussian(1, 3));
    const MatrixXd pos = (rng.gaussian(5, 3).array().abs() + 0.5).matrix();
    ScalarLoss loss = [&](const ParamBinding& q) {
      ad::Var a = q["a"];
      ad::Var b = q["b"];
      ad::Var s = ad::add(ad::mul(ad::exp(ad::scale(a, 0.3)), ad::sigmoid(b)),
                          ad::softplus(ad::sub(a, b)));
      s = ad::add(s, ad::log(ad::add(ad::square(a), ad::constant(pos))));
      s = ad::add(s, ad::mul(ad::reciprocal(ad::add(ad::constant(pos), ad::square(b))), ad::cos(a)));
      s = ad::add(s, ad::clip(a, -0.7, 0.7));
      ad::Var r = ad::logsumexp_cols(ad::concat_cols(std::vector<ad::Var>{s, ad::slice_cols(a, 1, 2)}));
      return ad::add(ad::mean(r), ad::sum(ad::sum_rows(ad::tanh(s))));
    };
    auto analytic = grad(loss, p).flatten();
    auto numeric = oracle::fd_gradient(loss, p);
    CHECK(oracle::rel_err(analytic, numeric) < 1e-4);
  }

  TEST_CASE("non-finite loss names the offending segment") {
    ParameterVector p;
    p.add("good", MatrixXd::Constant(1, 2, 1.0));
    p.add("bad", MatrixXd::Constant(1, 1, -1.0));
    ScalarLoss loss = [](const ParamBinding& b) {
      return ad::add(ad::sum(ad::square(b["good"])), ad::sum(ad::log(b["bad"])));
    };
    try {
      grad(loss, p);
      FAIL("expected a NonFiniteError");
    } catch (const NonFiniteError& e) {
      CHECK(e.segment() == "bad");
      CHECK(std::string(e.what()).find("bad") != std::string::npos);
    }
  }

  TEST_CASE("jvp of a linear map returns the matrix column") {
    MatrixXd a(2, 2);
    a << 1, 2, 3, 4;
    VectorField field = [&](const ad::Dual& x) {
      return ad::matmul(x, ad::Dual(ad::constant(a.transpose())));
    };
    MatrixXd x = MatrixXd::Constant(1, 2, 0.3);
    MatrixXd v(1, 2);
    v << 1, 0;
    MatrixXd out = jvp(field, x, v);
    CHECK(out(0, 0) == 1.0);
    CHECK(out(0, 1) == 3.0);
  }

  TEST_CASE("jvp of the identity returns the direction") {
    Rng rng(5);
    MatrixXd x = rng.gaussian(3, 4);
    MatrixXd v = rng.gaussian(3, 4);
    CHECK(jvp([](const ad::Dual& y) { return y; }, x, v) == v);
  }

  TEST_CASE("jvp rejects a direction of the wrong shape") {
    CHECK_THROWS_AS(jvp([](const ad::Dual& y) { return y; }, MatrixXd::Zero(2, 3),
                        MatrixXd::Zero(2, 2)),
                    std::invalid_argument);
  }

  TEST_CASE("jvp of a nonlinear field matches central differences") {
    Rng rng(8);
    const MatrixXd w = rng.gaussian(3, 3);
    VectorField field = [&](const ad::Dual& x) {
      ad::Dual h = ad::tanh(ad::matmul(x, ad::Dual(ad::constant(w))));
      return ad::mul(h, ad::sigmoid(x));
    };
    const MatrixXd x = rng.gaussian(4, 3);
    const MatrixXd v = rng.gaussian(4, 3);
    const double h = 1e-5;
    auto eval = [&](const MatrixXd& p) { return field(ad::Dual(ad::constant(p))).value(); };
    MatrixXd numeric = (eval(x + h * v) - eval(x - h * v)) / (2 * h);
    CHECK(oracle::rel_err(jvp(field, x, v), numeric) < 1e-4);
  }

  TEST_CASE("gradient through a jvp matches central differences") {
    Rng rng(21);
    ParameterVector p;
    p.add("w", rng.gaussian(3, 3) * 0.7);
    const MatrixXd x = rng.gaussian(5, 3);
    const MatrixXd eps = rng.rademacher(5, 3);
    ScalarLoss loss = [&](const ParamBinding& b) {
      VectorField field = [&](const ad::Dual& y) {
        return ad::tanh(ad::matmul(y, ad::Dual(b["w"])));
      };
      return ad::mean(hutchinson_term(field, ad::constant(x), eps));
    };
    CHECK(oracle::rel_err(grad(loss, p).flatten(), oracle::fd_gradient(loss, p)) < 1e-4);
  }

  TEST_CASE("hutchinson divergence of a constant field is zero") {
    Rng rng(1);
    VectorField field = [](const ad::Dual& x) {
      return ad::Dual(ad::constant(MatrixXd::Constant(x.rows(), x.cols(), 2.5)));
    };
    VectorXd d = hutchinson_divergence(field, rng.gaussian(3, 4), 3, rng, ProbeKind::Gaussian);
    CHECK(d.cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("hutchinson divergence of a diagonal field is exact with one Rademacher probe") {
    Rng rng(2);
    MatrixXd diag = MatrixXd::Zero(3, 3);
    diag.diagonal() << 1, 2, 3;
    VectorField field = [&](const ad::Dual& x) {
      return ad::matmul(x, ad::Dual(ad::constant(diag)));
    };
    VectorXd d = hutchinson_divergence(field, rng.gaussian(4, 3), 1, rng, ProbeKind::Rademacher);
    for (double v : d) CHECK(v == 6.0);
  }

  TEST_CASE("hutchinson divergence with Gaussian probes is unbiased for the trace") {
    Rng rng(9);
    const MatrixXd a = rng.gaussian(5, 5);
    VectorField field = [&](const ad::Dual& x) {
      return ad::matmul(x, ad::Dual(ad::constant(a.transpose())));
    };
    const int n = 100000;
    // One row per probe so that every estimate is stored for the SE.
    MatrixXd x = MatrixXd::Zero(n, 5);
    VectorXd est = hutchinson_divergence(field, x, 1, rng, ProbeKind::Gaussian);
    auto m = oracle::moments(est);
    CHECK(std::abs(m.mean - a.trace()) < 3.0 * m.se);
  }

  TEST_CASE("exact divergence matches the Jacobian trace") {
    Rng rng(4);
    const MatrixXd a = rng.gaussian(4, 4);
    VectorField field = [&](const ad::Dual& x) {
      return ad::matmul(x, ad::Dual(ad::constant(a.transpose())));
    };
    ad::Var d = exact_divergence(field, ad::constant(rng.gaussian(2, 4)));
    CHECK(d.value()(0, 0) == doctest::Approx(a.trace()).epsilon(1e-14));
  }

  TEST_CASE("random draws are reproducible and distinct across streams") {
    Rng a(42, 0), b(42, 0), c(42, 1);
    MatrixXd ra = a.rademacher(1, 4);
    CHECK(ra == b.rademacher(1, 4));
    MatrixXd ga = a.gaussian(2, 8);
    CHECK(ga == b.gaussian(2, 8));
    CHECK_FALSE(ga == c.gaussian(2, 8));
    Rng restored = Rng::from_state(a.state());
    CHECK(restored.gaussian(3, 3) == a.gaussian(3, 3));
  }

  TEST_CASE("Rademacher mean and Gaussian variance") {
    Rng rng(123);
    MatrixXd r = rng.rademacher(1000000, 1);
    CHECK((r.array() * r.array() == 1.0).all());
    CHECK(std::abs(r.mean()) < 3e-3);
    VectorXd g = rng.gaussian(1000000, 1).col(0);
    CHECK(std::abs(oracle::moments(g).var - 1.0) < 0.01);
  }

  TEST_CASE("parameter vector flatten round trip and duplicate names") {
    Rng rng(6);
    ParameterVector p;
    p.add("a", rng.gaussian(2, 3));
    p.add("b", rng.gaussian(1, 4));
    CHECK(p.total_count() == 10);
    CHECK(p.unflatten(p.flatten()) == p);
    CHECK_THROWS(p.add("a", MatrixXd::Zero(1, 1)));
  }

  TEST_CASE("array shape invariant and matrix round trip") {
    CHECK_THROWS(Array({2, 3}, std::vector<double>(5)));
    Rng rng(7);
    MatrixXd m = rng.gaussian(3, 2);
    Array a = Array::from_matrix(m);
    CHECK(a.shape() == std::vector<std::size_t>{3, 2});
    CHECK(a.to_matrix() == m);
    CHECK(a.data()[1] == m(0, 1));
  }
}
