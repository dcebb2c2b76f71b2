#pragma once

#include "osds/diffcore/params.hpp"
#include "osds/diffcore/rng.hpp"
#include "osds/trainer/trainer.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace osds::cli {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary layout, all integers and reals little-endian:
///   "OSDS" | u32 version | u64 len + config JSON | u64 iteration | u64 adam step
///   | f64 learning rate | u64 rng seed | u64 rng stream | u64 len + engine text
///   | u64 array count | per array: u64 len + name, u64 rows, u64 cols, rows*cols f64 (row-major)
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string config_json;
  std::uint64_t iteration = 0;
  std::uint64_t adam_step = 0;
  double lr = 0.0;
  RngState rng;
  std::vector<std::pair<std::string, Eigen::MatrixXd>> arrays;

  const Eigen::MatrixXd& array(const std::string& name) const;
  bool has_array(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

/// Arrays are stored as theta/<segment>, ema/<segment>, adam_m/<segment>, adam_v/<segment>.
Checkpoint make_checkpoint(const std::string& config_json, const trainer::TrainState& state);
/// Rebuilds a training state; `layout` supplies segment names and shapes.
trainer::TrainState restore_state(const Checkpoint& c, const ParameterVector& layout);

}  // namespace osds::cli
