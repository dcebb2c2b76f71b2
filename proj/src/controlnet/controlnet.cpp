#include "osds/controlnet/controlnet.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace osds::controlnet {

using ad::Dual;
using ad::Var;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

void NetworkConfig::validate() const {
  if (width < 1 || depth < 1) throw std::invalid_argument("network: width and depth must be >= 1");
  if (fourier_features < 1) throw std::invalid_argument("network: fourier_features must be >= 1");
  if (!(clip_bound > 0.0)) throw std::invalid_argument("network: clip_bound must be positive");
  if (!(fourier_base > 0.0) || !(fourier_span >= 1.0)) {
    throw std::invalid_argument("network: need fourier_base > 0 and fourier_span >= 1");
  }
}

MatrixXd fourier_embed(const VectorXd& values, int n_features, double base, double span) {
  MatrixXd out(values.size(), 2 * n_features);
  for (int k = 0; k < n_features; ++k) {
    const double w =
        n_features == 1 ? base : base * std::pow(span, static_cast<double>(k) / (n_features - 1));
    for (Index i = 0; i < values.size(); ++i) {
      out(i, k) = std::sin(w * values(i));
      out(i, n_features + k) = std::cos(w * values(i));
    }
  }
  return out;
}

namespace {

MatrixXd fan_in(Rng& rng, Index rows, Index cols) {
  return rng.gaussian(rows, cols) / std::sqrt(static_cast<double>(rows));
}

Dual silu(const Dual& a) { return ad::mul(a, ad::sigmoid(a)); }

// Replaces non-finite entries by the clip bound (NaN by zero); gradients and
// tangents through replaced entries are zero.
Dual sanitize(const Dual& a, double bound, std::atomic<long>& counter) {
  const MatrixXd& v = a.value();
  if (v.allFinite()) return a;
  MatrixXd fixed = v;
  MatrixXd mask = MatrixXd::Ones(v.rows(), v.cols());
  long bad = 0;
  for (Index i = 0; i < v.rows(); ++i) {
    for (Index j = 0; j < v.cols(); ++j) {
      const double e = v(i, j);
      if (std::isfinite(e)) continue;
      ++bad;
      mask(i, j) = 0.0;
      fixed(i, j) = std::isnan(e) ? 0.0 : (e > 0 ? bound : -bound);
    }
  }
  counter += bad;
  Var val = ad::make_result(fixed, {a.val}, [mask](ad::Node& n) {
    n.parents[0]->accumulate(n.grad.cwiseProduct(mask));
  });
  Var tan;
  if (a.has_tangent()) tan = ad::mul(a.tan, ad::constant(mask));
  return Dual(val, tan);
}

}  // namespace

ControlNet::ControlNet(NetworkConfig config, int dim, ParameterVector params)
    : config_(config), dim_(dim), params_(std::move(params)),
      nonfinite_(std::make_shared<std::atomic<long>>(0)) {
  config_.validate();
  if (params_.total_count() != parameter_count(config_, dim_)) {
    throw std::invalid_argument("ControlNet: parameter vector does not match the architecture");
  }
}

Index ControlNet::parameter_count(const NetworkConfig& c, int dim) {
  const Index h = c.width;
  const Index e = c.embedding_dim();
  const Index d = dim;
  Index n = d * h + e * h + h;            // first layer
  n += (c.depth - 1) * (h * h + h);       // further hidden layers
  n += h * d + d;                         // output layer
  n += e * h + h + h + 1;                 // gate
  return n;
}

ControlNet ControlNet::init(const NetworkConfig& config, int dim, Rng& rng) {
  config.validate();
  const Index h = config.width;
  const Index e = config.embedding_dim();
  const Index in = dim + e;
  ParameterVector p;
  MatrixXd w1 = fan_in(rng, in, h);
  p.add("w1x", w1.topRows(dim));
  p.add("w1e", w1.bottomRows(e));
  p.add("b1", MatrixXd::Zero(1, h));
  for (int l = 1; l < config.depth; ++l) {
    p.add("w" + std::to_string(l + 1), fan_in(rng, h, h));
    p.add("b" + std::to_string(l + 1), MatrixXd::Zero(1, h));
  }
  p.add("wout", MatrixXd::Zero(h, dim));
  p.add("bout", MatrixXd::Zero(1, dim));
  p.add("wg1", fan_in(rng, e, h));
  p.add("bg1", MatrixXd::Zero(1, h));
  p.add("wg2", MatrixXd::Zero(h, 1));
  p.add("bg2", MatrixXd::Zero(1, 1));
  return ControlNet(config, dim, std::move(p));
}

namespace {

Dual forward_impl(const NetworkConfig& c, int dim, std::atomic<long>& counter,
                  const ParamBinding& p, const Dual& x, const VectorXd& t, const VectorXd& d,
                  const targets::TargetDensity& target) {
  if (x.cols() != dim) throw std::invalid_argument("ControlNet: state dimension mismatch");
  if (t.size() != x.rows() || d.size() != x.rows()) {
    throw std::invalid_argument("ControlNet: need one t and one d per row");
  }
  MatrixXd emb(x.rows(), c.embedding_dim());
  emb.leftCols(2 * c.fourier_features) =
      fourier_embed(t, c.fourier_features, c.fourier_base, c.fourier_span);
  if (c.step_embedding) {
    emb.rightCols(2 * c.fourier_features) =
        fourier_embed(d, c.fourier_features, c.fourier_base, c.fourier_span);
  }
  const Var e = ad::constant(std::move(emb));

  Var emb_proj = ad::add(ad::matmul(e, p["w1e"]), p["b1"]);
  Dual h = silu(ad::add(ad::matmul(x, Dual(p["w1x"])), Dual(emb_proj)));
  for (int l = 1; l < c.depth; ++l) {
    const std::string id = std::to_string(l + 1);
    h = silu(ad::add(ad::matmul(h, Dual(p["w" + id])), Dual(p["b" + id])));
  }
  Dual out = ad::add(ad::matmul(h, Dual(p["wout"])), Dual(p["bout"]));

  Var gate = ad::add(ad::matmul(ad::tanh(ad::add(ad::matmul(e, p["wg1"]), p["bg1"])), p["wg2"]),
                     p["bg2"]);
  Dual score = sanitize(target.score(x), c.clip_bound, counter);
  Dual feature = ad::clip(score, -c.clip_bound, c.clip_bound);
  return ad::add(out, ad::mul(Dual(gate), feature));
}

}  // namespace

Dual ControlNet::forward(const ParamBinding& p, const Dual& x, const VectorXd& t,
                         const VectorXd& d, const targets::TargetDensity& target) const {
  return forward_impl(config_, dim_, *nonfinite_, p, x, t, d, target);
}

MatrixXd ControlNet::evaluate(const MatrixXd& x, const VectorXd& t, const VectorXd& d,
                              const targets::TargetDensity& target) const {
  ParamBinding p(params_, false);
  return forward(p, Dual(ad::constant(x)), t, d, target).value();
}

dynamics::ControlFn ControlNet::bind(const ParamBinding& p, targets::TargetPtr target) const {
  return [config = config_, dim = dim_, counter = nonfinite_, p, target](
             const Dual& x, const VectorXd& t, const VectorXd& d) {
    return forward_impl(config, dim, *counter, p, x, t, d, *target);
  };
}

dynamics::ControlFn ControlNet::frozen(const ParameterVector& values,
                                       targets::TargetPtr target) const {
  return bind(ParamBinding(values, false), std::move(target));
}

}  // namespace osds::controlnet
