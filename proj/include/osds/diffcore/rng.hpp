#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>

namespace osds {

/// Serializable snapshot of an Rng: the (seed, stream) identity plus the
/// engine position.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::string engine;  // textual mt19937_64 state
};

enum class ProbeKind { Rademacher, Gaussian };

/// Seeded random source. Identical (seed, stream, call sequence) gives
/// identical draws; distinct streams are seeded through independent seed
/// sequences.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  /// A fresh generator on another stream of the same seed.
  Rng fork(std::uint64_t stream) const { return Rng(seed_, stream); }

  Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols);
  Eigen::MatrixXd rademacher(Eigen::Index rows, Eigen::Index cols);
  Eigen::MatrixXd probe(Eigen::Index rows, Eigen::Index cols, ProbeKind kind);
  double uniform();
  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  RngState state() const;
  static Rng from_state(const RngState& s);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

}  // namespace osds
