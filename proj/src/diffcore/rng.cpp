#include "osds/diffcore/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace osds {

namespace {
std::mt19937_64 seeded_engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32), 0x05d5u};
  return std::mt19937_64(seq);
}
}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(seeded_engine(seed, stream)) {}

Eigen::MatrixXd Rng::gaussian(Eigen::Index rows, Eigen::Index cols) {
  // A fresh distribution per call so no cached variate leaks across calls.
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      out(i, j) = normal(engine_);
    }
  }
  return out;
}

Eigen::MatrixXd Rng::rademacher(Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      out(i, j) = (engine_() >> 63) ? 1.0 : -1.0;
    }
  }
  return out;
}

Eigen::MatrixXd Rng::probe(Eigen::Index rows, Eigen::Index cols, ProbeKind kind) {
  return kind == ProbeKind::Rademacher ? rademacher(rows, cols) : gaussian(rows, cols);
}

double Rng::uniform() {
  return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_int over an empty range");
  return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
}

RngState Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return {seed_, stream_, os.str()};
}

Rng Rng::from_state(const RngState& s) {
  Rng r(s.seed, s.stream);
  std::istringstream is(s.engine);
  is >> r.engine_;
  if (!is) throw std::runtime_error("malformed RNG engine state");
  return r;
}

}  // namespace osds
