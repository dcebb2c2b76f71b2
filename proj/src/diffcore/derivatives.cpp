#include "osds/diffcore/derivatives.hpp"

#include <cmath>
#include <unordered_set>
#include <vector>

namespace osds {

namespace {

// Names of the parameter segments upstream of the earliest non-finite nodes.
std::string offending_segments(const ad::Var& root, const ParamBinding& leaves,
                               const ParameterVector& at) {
  std::vector<ad::Node*> stack{root.node().get()};
  std::unordered_set<ad::Node*> seen;
  std::vector<ad::Node*> origins;
  while (!stack.empty()) {
    ad::Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    if (n->value.allFinite()) continue;
    bool parents_finite = true;
    for (const auto& p : n->parents) {
      if (!p->value.allFinite()) parents_finite = false;
      stack.push_back(p.get());
    }
    if (parents_finite) origins.push_back(n);
  }
  std::unordered_set<ad::Node*> upstream;
  stack.assign(origins.begin(), origins.end());
  while (!stack.empty()) {
    ad::Node* n = stack.back();
    stack.pop_back();
    if (!upstream.insert(n).second) continue;
    for (const auto& p : n->parents) stack.push_back(p.get());
  }
  std::string names;
  for (const auto& [name, value] : at.segments()) {
    if (upstream.count(leaves[name].node().get())) names += (names.empty() ? "" : ",") + name;
  }
  return names;
}

}  // namespace

ValueAndGrad value_and_grad(const ScalarLoss& loss, const ParameterVector& at) {
  ParamBinding leaves(at, true);
  ad::Var value = loss(leaves);
  if (value.rows() != 1 || value.cols() != 1) {
    throw std::invalid_argument("loss must be a scalar");
  }
  ad::backward(value);
  ValueAndGrad out{value.item(), leaves.gradients()};
  if (!std::isfinite(out.value)) {
    for (const auto& [name, g] : out.grad.segments()) {
      if (!at.at(name).allFinite()) {
        throw NonFiniteError("non-finite loss; offending parameter segment '" + name + "'",
                             name);
      }
    }
    const std::string names = offending_segments(value, leaves, at);
    if (!names.empty()) {
      throw NonFiniteError("non-finite loss; offending parameter segment '" + names + "'", names);
    }
    throw NonFiniteError("non-finite loss not traceable to a parameter segment", "");
  }
  return out;
}

ParameterVector grad(const ScalarLoss& loss, const ParameterVector& at) {
  return value_and_grad(loss, at).grad;
}

Eigen::MatrixXd jvp(const VectorField& field, const Eigen::MatrixXd& x,
                    const Eigen::MatrixXd& v) {
  if (x.rows() != v.rows() || x.cols() != v.cols()) {
    throw std::invalid_argument("jvp: direction shape does not match the point");
  }
  ad::Dual out = field(ad::Dual(ad::constant(x), ad::constant(v)));
  if (!out.has_tangent()) {
    return Eigen::MatrixXd::Zero(out.rows(), out.cols());
  }
  return out.tan.value();
}

ad::Var hutchinson_term(const VectorField& field, const ad::Var& x,
                        const Eigen::MatrixXd& eps, ad::Var* field_value) {
  if (x.rows() != eps.rows() || x.cols() != eps.cols()) {
    throw std::invalid_argument("hutchinson: probe shape does not match the point");
  }
  ad::Var e = ad::constant(eps);
  ad::Dual out = field(ad::Dual(x, e));
  if (field_value) *field_value = out.val;
  if (!out.has_tangent()) {
    return ad::constant(Eigen::MatrixXd::Zero(x.rows(), 1));
  }
  return ad::sum_cols(ad::mul(e, out.tan));
}

ad::Var exact_divergence(const VectorField& field, const ad::Var& x, ad::Var* field_value) {
  const Eigen::Index n = x.rows();
  const Eigen::Index dim = x.cols();
  ad::Var total;
  for (Eigen::Index i = 0; i < dim; ++i) {
    Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(n, dim);
    basis.col(i).setOnes();
    ad::Dual out = field(ad::Dual(x, ad::constant(std::move(basis))));
    if (i == 0 && field_value) *field_value = out.val;
    if (!out.has_tangent()) continue;
    ad::Var diag = ad::slice_cols(out.tan, i, 1);
    total = total.defined() ? ad::add(total, diag) : diag;
  }
  if (!total.defined()) return ad::constant(Eigen::MatrixXd::Zero(n, 1));
  return total;
}

Eigen::VectorXd hutchinson_divergence(const VectorField& field, const Eigen::MatrixXd& x,
                                      int probes, Rng& rng, ProbeKind kind) {
  if (probes < 1) throw std::invalid_argument("hutchinson_divergence needs probes >= 1");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(x.rows());
  const ad::Var xv = ad::constant(x);
  for (int p = 0; p < probes; ++p) {
    Eigen::MatrixXd eps = rng.probe(x.rows(), x.cols(), kind);
    acc += hutchinson_term(field, xv, eps).value().col(0);
  }
  return acc / static_cast<double>(probes);
}

}  // namespace osds
