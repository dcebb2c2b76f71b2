#include "osds/diffcore/params.hpp"

#include <cstring>
#include <stdexcept>

namespace osds {

void ParameterVector::add(const std::string& name, Eigen::MatrixXd value) {
  if (contains(name)) {
    throw std::invalid_argument("duplicate parameter segment '" + name + "'");
  }
  segments_.emplace_back(name, std::move(value));
}

bool ParameterVector::contains(const std::string& name) const {
  for (const auto& [n, _] : segments_) {
    if (n == name) return true;
  }
  return false;
}

const Eigen::MatrixXd& ParameterVector::at(const std::string& name) const {
  for (const auto& [n, v] : segments_) {
    if (n == name) return v;
  }
  throw std::out_of_range("no parameter segment '" + name + "'");
}

Eigen::MatrixXd& ParameterVector::at(const std::string& name) {
  for (auto& [n, v] : segments_) {
    if (n == name) return v;
  }
  throw std::out_of_range("no parameter segment '" + name + "'");
}

Eigen::Index ParameterVector::total_count() const {
  Eigen::Index n = 0;
  for (const auto& [_, v] : segments_) n += v.size();
  return n;
}

Eigen::VectorXd ParameterVector::flatten() const {
  Eigen::VectorXd flat(total_count());
  Eigen::Index off = 0;
  for (const auto& [_, v] : segments_) {
    flat.segment(off, v.size()) = Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
    off += v.size();
  }
  return flat;
}

ParameterVector ParameterVector::unflatten(const Eigen::VectorXd& flat) const {
  if (flat.size() != total_count()) {
    throw std::invalid_argument("unflatten: expected " + std::to_string(total_count()) +
                                " entries, got " + std::to_string(flat.size()));
  }
  ParameterVector out;
  Eigen::Index off = 0;
  for (const auto& [name, v] : segments_) {
    Eigen::MatrixXd m(v.rows(), v.cols());
    Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = flat.segment(off, v.size());
    off += v.size();
    out.add(name, std::move(m));
  }
  return out;
}

ParameterVector ParameterVector::zeros_like() const {
  ParameterVector out;
  for (const auto& [name, v] : segments_) {
    out.add(name, Eigen::MatrixXd::Zero(v.rows(), v.cols()));
  }
  return out;
}

bool ParameterVector::all_finite() const {
  for (const auto& [_, v] : segments_) {
    if (!v.allFinite()) return false;
  }
  return true;
}

bool operator==(const ParameterVector& a, const ParameterVector& b) {
  if (a.segments_.size() != b.segments_.size()) return false;
  for (std::size_t i = 0; i < a.segments_.size(); ++i) {
    const auto& [na, va] = a.segments_[i];
    const auto& [nb, vb] = b.segments_[i];
    if (na != nb || va.rows() != vb.rows() || va.cols() != vb.cols()) return false;
    if (va.size() > 0 &&
        std::memcmp(va.data(), vb.data(), static_cast<std::size_t>(va.size()) * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

ParamBinding::ParamBinding(const ParameterVector& values, bool requires_grad)
    : trainable_(requires_grad) {
  for (const auto& [name, v] : values.segments()) {
    leaves_.emplace_back(name, ad::Var(v, requires_grad));
  }
}

const ad::Var& ParamBinding::operator[](const std::string& name) const {
  for (const auto& [n, v] : leaves_) {
    if (n == name) return v;
  }
  throw std::out_of_range("no parameter segment '" + name + "'");
}

ParameterVector ParamBinding::gradients() const {
  ParameterVector out;
  for (const auto& [name, v] : leaves_) out.add(name, v.grad());
  return out;
}

}  // namespace osds
