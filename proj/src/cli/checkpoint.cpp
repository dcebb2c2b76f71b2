#include "osds/cli/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace osds::cli {

namespace {

constexpr char kMagic[4] = {'O', 'S', 'D', 'S'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_str(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : b_(bytes) {}

  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw CheckpointError("checkpoint is truncated");
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace

const Eigen::MatrixXd& Checkpoint::array(const std::string& name) const {
  for (const auto& [n, m] : arrays) {
    if (n == name) return m;
  }
  throw CheckpointError("checkpoint has no array '" + name + "'");
}

bool Checkpoint::has_array(const std::string& name) const {
  for (const auto& [n, m] : arrays) {
    if (n == name) return true;
  }
  return false;
}

std::string encode_checkpoint(const Checkpoint& c) {
  std::string out(kMagic, 4);
  put_u32(out, Checkpoint::kVersion);
  put_str(out, c.config_json);
  put_u64(out, c.iteration);
  put_u64(out, c.adam_step);
  put_f64(out, c.lr);
  put_u64(out, c.rng.seed);
  put_u64(out, c.rng.stream);
  put_str(out, c.rng.engine);
  put_u64(out, c.arrays.size());
  for (const auto& [name, m] : c.arrays) {
    put_str(out, name);
    put_u64(out, static_cast<std::uint64_t>(m.rows()));
    put_u64(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) put_f64(out, m(i, j));
    }
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.raw(4) != std::string(kMagic, 4)) throw CheckpointError("checkpoint: bad magic bytes");
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kVersion) {
    throw CheckpointError("checkpoint: unsupported format version " + std::to_string(version));
  }
  Checkpoint c;
  c.config_json = r.str();
  c.iteration = r.u64();
  c.adam_step = r.u64();
  c.lr = r.f64();
  c.rng.seed = r.u64();
  c.rng.stream = r.u64();
  c.rng.engine = r.str();
  const std::uint64_t n = r.u64();
  for (std::uint64_t k = 0; k < n; ++k) {
    std::string name = r.str();
    const auto rows = static_cast<Eigen::Index>(r.u64());
    const auto cols = static_cast<Eigen::Index>(r.u64());
    r.need(static_cast<std::size_t>(rows * cols) * 8);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = r.f64();
    }
    c.arrays.emplace_back(std::move(name), std::move(m));
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  const std::string bytes = encode_checkpoint(c);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

Checkpoint make_checkpoint(const std::string& config_json, const trainer::TrainState& s) {
  Checkpoint c;
  c.config_json = config_json;
  c.iteration = static_cast<std::uint64_t>(s.iteration);
  c.adam_step = static_cast<std::uint64_t>(s.adam.step);
  c.lr = s.lr;
  c.rng = s.rng;
  auto add = [&](const std::string& prefix, const ParameterVector& p) {
    for (const auto& [name, m] : p.segments()) c.arrays.emplace_back(prefix + "/" + name, m);
  };
  add("theta", s.theta);
  add("ema", s.ema);
  if (s.adam.m.segment_count() > 0) {
    add("adam_m", s.adam.m);
    add("adam_v", s.adam.v);
  }
  return c;
}

trainer::TrainState restore_state(const Checkpoint& c, const ParameterVector& layout) {
  auto read = [&](const std::string& prefix) {
    ParameterVector p;
    for (const auto& [name, shape] : layout.segments()) {
      const auto& m = c.array(prefix + "/" + name);
      if (m.rows() != shape.rows() || m.cols() != shape.cols()) {
        throw CheckpointError("checkpoint array '" + prefix + "/" + name + "' has the wrong shape");
      }
      p.add(name, m);
    }
    return p;
  };
  trainer::TrainState s;
  s.theta = read("theta");
  s.ema = read("ema");
  if (c.has_array("adam_m/" + layout.segments().front().first)) {
    s.adam.m = read("adam_m");
    s.adam.v = read("adam_v");
  } else {
    s.adam = trainer::AdamState::zeros_like(s.theta);
  }
  s.adam.step = static_cast<long>(c.adam_step);
  s.iteration = static_cast<int>(c.iteration);
  s.lr = c.lr;
  s.rng = c.rng;
  return s;
}

}  // namespace osds::cli
