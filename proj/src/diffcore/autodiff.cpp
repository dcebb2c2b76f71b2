#include "osds/diffcore/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace osds::ad {

void Node::accumulate(const Mat& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var::Var(Mat value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

double Var::item() const {
  if (rows() != 1 || cols() != 1) {
    throw std::logic_error("Var::item on a " + std::to_string(rows()) + "x" +
                           std::to_string(cols()) + " value");
  }
  return node_->value(0, 0);
}

Mat Var::grad() const {
  if (!node_ || node_->grad.size() == 0) {
    return Mat::Zero(node_ ? rows() : 0, node_ ? cols() : 0);
  }
  return node_->grad;
}

Var constant(Mat value) { return Var(std::move(value), false); }

Var constant_scalar(double value) { return Var(Mat::Constant(1, 1, value), false); }

Var detach(const Var& v) { return Var(v.value(), false); }

Var make_result(Mat value, std::vector<Var> inputs,
                std::function<void(Node&)> backward) {
  Var out(std::move(value), false);
  bool any = false;
  for (const auto& in : inputs) {
    if (in.requires_grad()) {
      any = true;
      break;
    }
  }
  if (any) {
    out.node_->requires_grad = true;
    out.node_->parents.reserve(inputs.size());
    for (auto& in : inputs) {
      out.node_->parents.push_back(in.node_);
    }
    out.node_->backward = std::move(backward);
  }
  return out;
}

void backward(const Var& root) {
  if (!root.defined() || root.rows() != 1 || root.cols() != 1) {
    throw std::logic_error("backward requires a 1x1 root");
  }
  if (!root.requires_grad()) {
    return;
  }
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->accumulate(Mat::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) {
      n->backward(*n);
    }
  }
}

// ---------------------------------------------------------------------------
// Broadcasting

namespace {

Index out_extent(Index a, Index b, const char* what) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw std::invalid_argument(std::string("shape mismatch in ") + what + ": " +
                              std::to_string(a) + " vs " + std::to_string(b));
}

void accumulate_parent(Node& self, std::size_t i, const Mat& g) {
  Node& p = *self.parents[i];
  if (p.requires_grad) {
    p.accumulate(reduce_to(g, p.value.rows(), p.value.cols()));
  }
}

template <class Fn, class Deriv>
Var unary(const Var& a, Fn fn, Deriv deriv) {
  Mat y = a.value().unaryExpr(fn);
  return make_result(std::move(y), {a}, [deriv](Node& self) {
    const Mat& x = self.parents[0]->value;
    self.parents[0]->accumulate(
        self.grad.cwiseProduct(deriv(x, self.value)));
  });
}

}  // namespace

Mat broadcast_to(const Mat& m, Index rows, Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  if (m.rows() == 1 && m.cols() == 1) return Mat::Constant(rows, cols, m(0, 0));
  if (m.rows() == 1 && m.cols() == cols) return m.replicate(rows, 1);
  if (m.cols() == 1 && m.rows() == rows) return m.replicate(1, cols);
  throw std::invalid_argument("cannot broadcast " + std::to_string(m.rows()) +
                              "x" + std::to_string(m.cols()) + " to " +
                              std::to_string(rows) + "x" + std::to_string(cols));
}

Mat reduce_to(const Mat& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Mat::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  if (cols == 1) return g.rowwise().sum();
  throw std::invalid_argument("cannot reduce gradient");
}

// ---------------------------------------------------------------------------
// Reverse-mode primitives

Var add(const Var& a, const Var& b) {
  const Index r = out_extent(a.rows(), b.rows(), "add");
  const Index c = out_extent(a.cols(), b.cols(), "add");
  Mat y = broadcast_to(a.value(), r, c) + broadcast_to(b.value(), r, c);
  return make_result(std::move(y), {a, b}, [](Node& self) {
    accumulate_parent(self, 0, self.grad);
    accumulate_parent(self, 1, self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  const Index r = out_extent(a.rows(), b.rows(), "sub");
  const Index c = out_extent(a.cols(), b.cols(), "sub");
  Mat y = broadcast_to(a.value(), r, c) - broadcast_to(b.value(), r, c);
  return make_result(std::move(y), {a, b}, [](Node& self) {
    accumulate_parent(self, 0, self.grad);
    accumulate_parent(self, 1, -self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  const Index r = out_extent(a.rows(), b.rows(), "mul");
  const Index c = out_extent(a.cols(), b.cols(), "mul");
  Mat y = broadcast_to(a.value(), r, c).cwiseProduct(broadcast_to(b.value(), r, c));
  return make_result(std::move(y), {a, b}, [](Node& self) {
    const Index rr = self.value.rows();
    const Index cc = self.value.cols();
    if (self.parents[0]->requires_grad) {
      accumulate_parent(self, 0,
                        self.grad.cwiseProduct(broadcast_to(self.parents[1]->value, rr, cc)));
    }
    if (self.parents[1]->requires_grad) {
      accumulate_parent(self, 1,
                        self.grad.cwiseProduct(broadcast_to(self.parents[0]->value, rr, cc)));
    }
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a}, [s](Node& self) {
    self.parents[0]->accumulate(self.grad * s);
  });
}

Var add_scalar(const Var& a, double s) {
  Mat y = a.value().array() + s;
  return make_result(std::move(y), {a}, [](Node& self) {
    self.parents[0]->accumulate(self.grad);
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul shape mismatch: " + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " * " +
                                std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Mat y = a.value() * b.value();
  return make_result(std::move(y), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(self.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate(pa.value.transpose() * self.grad);
  });
}

Var exp(const Var& a) {
  return unary(
      a, [](double x) { return std::exp(x); },
      [](const Mat&, const Mat& y) { return y; });
}

Var log(const Var& a) {
  return unary(
      a, [](double x) { return std::log(x); },
      [](const Mat& x, const Mat&) { return Mat(x.cwiseInverse()); });
}

Var sin(const Var& a) {
  return unary(
      a, [](double x) { return std::sin(x); },
      [](const Mat& x, const Mat&) { return Mat(x.array().cos()); });
}

Var cos(const Var& a) {
  return unary(
      a, [](double x) { return std::cos(x); },
      [](const Mat& x, const Mat&) { return Mat(-x.array().sin()); });
}

Var tanh(const Var& a) {
  return unary(
      a, [](double x) { return std::tanh(x); },
      [](const Mat&, const Mat& y) { return Mat(1.0 - y.array().square()); });
}

namespace {
double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
double softplus_scalar(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
}  // namespace

Var sigmoid(const Var& a) {
  return unary(a, sigmoid_scalar, [](const Mat&, const Mat& y) {
    return Mat(y.array() * (1.0 - y.array()));
  });
}

Var softplus(const Var& a) {
  return unary(a, softplus_scalar,
               [](const Mat& x, const Mat&) { return Mat(x.unaryExpr(&sigmoid_scalar)); });
}

Var square(const Var& a) {
  return unary(
      a, [](double x) { return x * x; },
      [](const Mat& x, const Mat&) { return Mat(2.0 * x); });
}

Var reciprocal(const Var& a) {
  return unary(
      a, [](double x) { return 1.0 / x; },
      [](const Mat&, const Mat& y) { return Mat(-y.array().square()); });
}

Var clip(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](const Mat& x, const Mat&) {
        return Mat(x.unaryExpr([lo, hi](double v) { return (v > lo && v < hi) ? 1.0 : 0.0; }));
      });
}

Var sum_cols(const Var& a) {
  Mat y = a.value().rowwise().sum();
  return make_result(std::move(y), {a}, [](Node& self) {
    self.parents[0]->accumulate(self.grad.replicate(1, self.parents[0]->value.cols()));
  });
}

Var sum_rows(const Var& a) {
  Mat y = a.value().colwise().sum();
  return make_result(std::move(y), {a}, [](Node& self) {
    self.parents[0]->accumulate(self.grad.replicate(self.parents[0]->value.rows(), 1));
  });
}

Var sum(const Var& a) {
  Mat y = Mat::Constant(1, 1, a.value().sum());
  return make_result(std::move(y), {a}, [](Node& self) {
    const Mat& x = self.parents[0]->value;
    self.parents[0]->accumulate(Mat::Constant(x.rows(), x.cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const auto n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var logsumexp_cols(const Var& a) {
  const Mat& x = a.value();
  Eigen::VectorXd m = x.rowwise().maxCoeff();
  Mat shifted = x.colwise() - m;
  Eigen::VectorXd s = shifted.array().exp().rowwise().sum();
  Mat y = (m.array() + s.array().log()).matrix();
  return make_result(std::move(y), {a}, [](Node& self) {
    const Mat& xv = self.parents[0]->value;
    Mat soft = (xv.colwise() - Eigen::VectorXd(self.value.col(0))).array().exp();
    self.parents[0]->accumulate(soft.array().colwise() * self.grad.col(0).array());
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
  const Index r = parts.front().rows();
  Index c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw std::invalid_argument("concat_cols row mismatch");
    c += p.cols();
  }
  Mat y(r, c);
  Index off = 0;
  for (const auto& p : parts) {
    y.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return make_result(std::move(y), parts, [](Node& self) {
    Index o = 0;
    for (auto& p : self.parents) {
      const Index w = p->value.cols();
      if (p->requires_grad) p->accumulate(self.grad.middleCols(o, w));
      o += w;
    }
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::invalid_argument("slice_cols out of range");
  }
  Mat y = a.value().middleCols(start, count);
  return make_result(std::move(y), {a}, [start, count](Node& self) {
    const Mat& x = self.parents[0]->value;
    Mat g = Mat::Zero(x.rows(), x.cols());
    g.middleCols(start, count) = self.grad;
    self.parents[0]->accumulate(g);
  });
}

Var select_rows(const Var& a, const std::vector<Index>& rows) {
  Mat y(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    y.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  return make_result(std::move(y), {a}, [rows](Node& self) {
    const Mat& x = self.parents[0]->value;
    Mat g = Mat::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      g.row(rows[i]) += self.grad.row(static_cast<Index>(i));
    }
    self.parents[0]->accumulate(g);
  });
}

// ---------------------------------------------------------------------------
// Forward mode

namespace {

Var tan_add(const Var& a, const Var& b) {
  if (!a.defined()) return b;
  if (!b.defined()) return a;
  return add(a, b);
}

// Tangents of broadcast operands must take the output shape.
Var tan_expand(const Var& t, Index rows, Index cols) {
  if (!t.defined() || (t.rows() == rows && t.cols() == cols)) return t;
  return add(t, constant(Mat::Zero(rows, cols)));
}

}  // namespace

Dual add(const Dual& a, const Dual& b) {
  Var v = add(a.val, b.val);
  return {v, tan_expand(tan_add(a.tan, b.tan), v.rows(), v.cols())};
}

Dual sub(const Dual& a, const Dual& b) {
  Var v = sub(a.val, b.val);
  Var t;
  if (a.has_tangent() && b.has_tangent()) {
    t = sub(a.tan, b.tan);
  } else if (a.has_tangent()) {
    t = a.tan;
  } else if (b.has_tangent()) {
    t = neg(b.tan);
  }
  return {v, tan_expand(t, v.rows(), v.cols())};
}

Dual mul(const Dual& a, const Dual& b) {
  Var v = mul(a.val, b.val);
  Var t;
  if (a.has_tangent()) t = mul(a.tan, b.val);
  if (b.has_tangent()) t = tan_add(t, mul(a.val, b.tan));
  return {v, tan_expand(t, v.rows(), v.cols())};
}

Dual neg(const Dual& a) {
  return {neg(a.val), a.has_tangent() ? neg(a.tan) : Var()};
}

Dual scale(const Dual& a, double s) {
  return {scale(a.val, s), a.has_tangent() ? scale(a.tan, s) : Var()};
}

Dual add_scalar(const Dual& a, double s) { return {add_scalar(a.val, s), a.tan}; }

Dual matmul(const Dual& a, const Dual& b) {
  Var v = matmul(a.val, b.val);
  Var t;
  if (a.has_tangent()) t = matmul(a.tan, b.val);
  if (b.has_tangent()) t = tan_add(t, matmul(a.val, b.tan));
  return {v, t};
}

Dual exp(const Dual& a) {
  Var y = exp(a.val);
  return {y, a.has_tangent() ? mul(y, a.tan) : Var()};
}

Dual log(const Dual& a) {
  Var y = log(a.val);
  return {y, a.has_tangent() ? mul(a.tan, reciprocal(a.val)) : Var()};
}

Dual sin(const Dual& a) {
  Var y = sin(a.val);
  if (!a.has_tangent()) return {y};
  return {y, mul(cos(a.val), a.tan)};
}

Dual cos(const Dual& a) {
  Var y = cos(a.val);
  if (!a.has_tangent()) return {y};
  return {y, mul(neg(sin(a.val)), a.tan)};
}

Dual tanh(const Dual& a) {
  Var y = tanh(a.val);
  if (!a.has_tangent()) return {y};
  Var d = add_scalar(neg(square(y)), 1.0);
  return {y, mul(d, a.tan)};
}

Dual sigmoid(const Dual& a) {
  Var y = sigmoid(a.val);
  if (!a.has_tangent()) return {y};
  Var d = mul(y, add_scalar(neg(y), 1.0));
  return {y, mul(d, a.tan)};
}

Dual softplus(const Dual& a) {
  Var y = softplus(a.val);
  if (!a.has_tangent()) return {y};
  return {y, mul(sigmoid(a.val), a.tan)};
}

Dual square(const Dual& a) {
  Var y = square(a.val);
  if (!a.has_tangent()) return {y};
  return {y, mul(scale(a.val, 2.0), a.tan)};
}

Dual reciprocal(const Dual& a) {
  Var y = reciprocal(a.val);
  if (!a.has_tangent()) return {y};
  return {y, mul(neg(square(y)), a.tan)};
}

Dual clip(const Dual& a, double lo, double hi) {
  Var y = clip(a.val, lo, hi);
  if (!a.has_tangent()) return {y};
  Mat mask = a.value().unaryExpr([lo, hi](double v) { return (v > lo && v < hi) ? 1.0 : 0.0; });
  return {y, mul(constant(std::move(mask)), a.tan)};
}

Dual sum_cols(const Dual& a) {
  return {sum_cols(a.val), a.has_tangent() ? sum_cols(a.tan) : Var()};
}

Dual sum(const Dual& a) { return {sum(a.val), a.has_tangent() ? sum(a.tan) : Var()}; }

Dual logsumexp_cols(const Dual& a) {
  Var y = logsumexp_cols(a.val);
  if (!a.has_tangent()) return {y};
  Var soft = exp(sub(a.val, y));
  return {y, sum_cols(mul(soft, a.tan))};
}

Dual concat_cols(const std::vector<Dual>& parts) {
  std::vector<Var> vals;
  std::vector<Var> tans;
  bool any = false;
  for (const auto& p : parts) {
    vals.push_back(p.val);
    any = any || p.has_tangent();
  }
  Var v = concat_cols(vals);
  if (!any) return {v};
  for (const auto& p : parts) {
    tans.push_back(p.has_tangent() ? p.tan : constant(Mat::Zero(p.rows(), p.cols())));
  }
  return {v, concat_cols(tans)};
}

Dual slice_cols(const Dual& a, Index start, Index count) {
  return {slice_cols(a.val, start, count),
          a.has_tangent() ? slice_cols(a.tan, start, count) : Var()};
}

}  // namespace osds::ad
