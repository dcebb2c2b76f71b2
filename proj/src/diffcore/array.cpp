#include "osds/diffcore/array.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace osds {

namespace {
std::size_t extent_product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}
}  // namespace

Array::Array(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (extent_product(shape_) != data_.size()) {
    throw std::invalid_argument("Array: shape does not match data length");
  }
}

Array::Array(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(extent_product(shape_), 0.0) {}

Array Array::from_matrix(const Eigen::MatrixXd& m) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      data[k++] = m(i, j);
    }
  }
  return Array({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
               std::move(data));
}

Eigen::MatrixXd Array::to_matrix() const {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  if (rank() == 1) {
    rows = static_cast<Eigen::Index>(shape_[0]);
    cols = 1;
  } else if (rank() == 2) {
    rows = static_cast<Eigen::Index>(shape_[0]);
    cols = static_cast<Eigen::Index>(shape_[1]);
  } else {
    throw std::invalid_argument("Array::to_matrix needs rank 1 or 2");
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(i, j) = data_[k++];
    }
  }
  return m;
}

bool Array::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool operator==(const Array& a, const Array& b) {
  return a.shape_ == b.shape_ && a.data_.size() == b.data_.size() &&
         (a.data_.empty() ||
          std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(double)) == 0);
}

}  // namespace osds
