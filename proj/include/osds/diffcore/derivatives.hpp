#pragma once

// Gradient, Jacobian-vector product and Hutchinson divergence entry points.

#include "osds/diffcore/autodiff.hpp"
#include "osds/diffcore/params.hpp"
#include "osds/diffcore/rng.hpp"

#include <functional>
#include <stdexcept>
#include <string>

namespace osds {

/// A batched vector field: rows of `x` are independent points.
using VectorField = std::function<ad::Dual(const ad::Dual& x)>;
using ScalarLoss = std::function<ad::Var(const ParamBinding& params)>;

/// Thrown when a loss or gradient evaluates to a non-finite value.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& what, std::string segment)
      : std::runtime_error(what), segment_(std::move(segment)) {}
  const std::string& segment() const { return segment_; }

 private:
  std::string segment_;
};

struct ValueAndGrad {
  double value = 0.0;
  ParameterVector grad;
};

/// d loss / d theta with the segment layout of `at`.
ValueAndGrad value_and_grad(const ScalarLoss& loss, const ParameterVector& at);
ParameterVector grad(const ScalarLoss& loss, const ParameterVector& at);

/// (d field / dx)(x) v for every row.
Eigen::MatrixXd jvp(const VectorField& field, const Eigen::MatrixXd& x,
                    const Eigen::MatrixXd& v);

/// eps^T (d field/dx) eps per row as a graph value (B x 1). Differentiable in
/// whatever the field depends on.
ad::Var hutchinson_term(const VectorField& field, const ad::Var& x,
                        const Eigen::MatrixXd& eps, ad::Var* field_value = nullptr);

/// Exact divergence per row via one JVP per coordinate (B x 1).
ad::Var exact_divergence(const VectorField& field, const ad::Var& x,
                         ad::Var* field_value = nullptr);

/// Averages `probes` independent Hutchinson estimates of the divergence at
/// every row of `x`. Returns a B-vector.
Eigen::VectorXd hutchinson_divergence(const VectorField& field, const Eigen::MatrixXd& x,
                                      int probes, Rng& rng, ProbeKind kind);

}  // namespace osds
