#pragma once

// Reverse-mode differentiation over batched dense matrices.
//
// Every value is an Eigen matrix whose rows index batch elements. A Var is a
// handle to a node of a dynamically built graph; nodes only keep their
// parents when at least one input requires a gradient, so evaluation without
// trainable leaves builds no graph at all.
//
// Forward-mode directional derivatives are provided by Dual, whose tangent is
// itself a Var. Because tangents are built from the same graph operations,
// the reverse pass differentiates through them, which is what gradients of
// Hutchinson estimates and Jacobian penalties need.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <vector>

namespace osds::ad {

using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

struct Node {
  Mat value;
  Mat grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Mat& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(Mat value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Mat& value() const { return node_->value; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const;

  /// Gradient accumulated by the last backward pass; zeros if untouched.
  Mat grad() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend Var make_result(Mat value, std::vector<Var> inputs,
                         std::function<void(Node&)> backward);
  std::shared_ptr<Node> node_;
};

Var constant(Mat value);
Var constant_scalar(double value);
Var detach(const Var& v);

/// Builds a node from `value`. If any input requires a gradient the node keeps
/// them as parents and `backward` is run during the reverse pass.
Var make_result(Mat value, std::vector<Var> inputs,
                std::function<void(Node&)> backward);

/// Runs the reverse pass from a 1x1 root.
void backward(const Var& root);

// Elementwise binary operations broadcast an operand with one row, one column
// or a single entry against the other operand.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var matmul(const Var& a, const Var& b);

Var exp(const Var& a);
Var log(const Var& a);
Var sin(const Var& a);
Var cos(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var square(const Var& a);
Var reciprocal(const Var& a);
/// Clamps to [lo, hi]; the derivative is zero where the bound is active.
Var clip(const Var& a, double lo, double hi);

Var sum_cols(const Var& a);  // B x C -> B x 1
Var sum_rows(const Var& a);  // B x C -> 1 x C
Var sum(const Var& a);       // -> 1 x 1
Var mean(const Var& a);      // -> 1 x 1
Var logsumexp_cols(const Var& a);  // B x C -> B x 1

Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Index start, Index count);
Var select_rows(const Var& a, const std::vector<Index>& rows);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }

/// Broadcast helpers shared with the forward-mode layer.
Mat broadcast_to(const Mat& m, Index rows, Index cols);
Mat reduce_to(const Mat& g, Index rows, Index cols);

// ---------------------------------------------------------------------------
// Forward mode

/// A value with an optional tangent (undefined tangent means zero).
struct Dual {
  Var val;
  Var tan;

  Dual() = default;
  Dual(Var v) : val(std::move(v)) {}  // NOLINT(google-explicit-constructor)
  Dual(Var v, Var t) : val(std::move(v)), tan(std::move(t)) {}

  bool has_tangent() const { return tan.defined(); }
  const Mat& value() const { return val.value(); }
  Index rows() const { return val.rows(); }
  Index cols() const { return val.cols(); }
};

Dual add(const Dual& a, const Dual& b);
Dual sub(const Dual& a, const Dual& b);
Dual mul(const Dual& a, const Dual& b);
Dual neg(const Dual& a);
Dual scale(const Dual& a, double s);
Dual add_scalar(const Dual& a, double s);
Dual matmul(const Dual& a, const Dual& b);

Dual exp(const Dual& a);
Dual log(const Dual& a);
Dual sin(const Dual& a);
Dual cos(const Dual& a);
Dual tanh(const Dual& a);
Dual sigmoid(const Dual& a);
Dual softplus(const Dual& a);
Dual square(const Dual& a);
Dual reciprocal(const Dual& a);
Dual clip(const Dual& a, double lo, double hi);

Dual sum_cols(const Dual& a);
Dual sum(const Dual& a);
Dual logsumexp_cols(const Dual& a);
Dual concat_cols(const std::vector<Dual>& parts);
Dual slice_cols(const Dual& a, Index start, Index count);

inline Dual operator+(const Dual& a, const Dual& b) { return add(a, b); }
inline Dual operator-(const Dual& a, const Dual& b) { return sub(a, b); }
inline Dual operator*(const Dual& a, const Dual& b) { return mul(a, b); }
inline Dual operator-(const Dual& a) { return neg(a); }
inline Dual operator*(double s, const Dual& a) { return scale(a, s); }

}  // namespace osds::ad
