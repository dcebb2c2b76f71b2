#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace osds {

/// Dense row-major container of 64-bit reals with an arbitrary shape.
class Array {
 public:
  Array() = default;
  Array(std::vector<std::size_t> shape, std::vector<double> data);
  explicit Array(std::vector<std::size_t> shape);

  static Array from_matrix(const Eigen::MatrixXd& m);
  /// Interprets a rank-1 or rank-2 array as a matrix (rank 1 is a column).
  Eigen::MatrixXd to_matrix() const;

  const std::vector<std::size_t>& shape() const { return shape_; }
  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }

  bool all_finite() const;
  friend bool operator==(const Array& a, const Array& b);

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

}  // namespace osds
