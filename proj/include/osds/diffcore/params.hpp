#pragma once

#include "osds/diffcore/autodiff.hpp"

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

namespace osds {

/// Named parameter segments in a fixed order.
class ParameterVector {
 public:
  void add(const std::string& name, Eigen::MatrixXd value);

  bool contains(const std::string& name) const;
  const Eigen::MatrixXd& at(const std::string& name) const;
  Eigen::MatrixXd& at(const std::string& name);

  std::size_t segment_count() const { return segments_.size(); }
  const std::vector<std::pair<std::string, Eigen::MatrixXd>>& segments() const {
    return segments_;
  }
  std::vector<std::pair<std::string, Eigen::MatrixXd>>& segments() { return segments_; }

  Eigen::Index total_count() const;
  Eigen::VectorXd flatten() const;
  /// Inverse of flatten; segment shapes are taken from `*this`.
  ParameterVector unflatten(const Eigen::VectorXd& flat) const;
  ParameterVector zeros_like() const;
  bool all_finite() const;

  friend bool operator==(const ParameterVector& a, const ParameterVector& b);

 private:
  std::vector<std::pair<std::string, Eigen::MatrixXd>> segments_;
};

/// Graph leaves for every segment of a ParameterVector.
class ParamBinding {
 public:
  ParamBinding(const ParameterVector& values, bool requires_grad);

  const ad::Var& operator[](const std::string& name) const;
  bool trainable() const { return trainable_; }

  /// Gradients accumulated on the leaves, in the source segment layout.
  ParameterVector gradients() const;

 private:
  std::vector<std::pair<std::string, ad::Var>> leaves_;
  bool trainable_;
};

}  // namespace osds
