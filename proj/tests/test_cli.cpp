#include "osds/cli/checkpoint.hpp"
#include "osds/cli/commands.hpp"
#include "osds/cli/config.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

using namespace osds;
using namespace osds::cli;
using Eigen::MatrixXd;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::string hex_bytes(const std::string& hex) {
  std::string out;
  std::istringstream is(hex);
  std::string tok;
  while (is >> tok) out.push_back(static_cast<char>(std::stoi(tok, nullptr, 16)));
  return out;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("osds_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string cli_binary() {
  const char* env = std::getenv("OSDS_CLI");
  REQUIRE_MESSAGE(env != nullptr, "OSDS_CLI must point at the osds executable");
  return env;
}

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = cli_binary() + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Tiny GMM run that trains in well under a second.
const char* kSmallConfig = R"({
  "target": {"kind": "gmm", "dim": 2, "modes": [
     {"mean": [1.5, 0], "scale": 0.7, "weight": 0.5},
     {"mean": [-1.5, 0], "scale": 0.7, "weight": 0.5}]},
  "network": {"width": 8, "depth": 1, "fourier_features": 2},
  "train": {"iterations": 5, "batch": 16, "base_steps": 4, "anchors": 8, "seed": 3,
            "checkpoint_every": 2, "ma_window": 2},
  "eval": {"runs": 2, "samples": 40, "nfe_list": [1, 2], "sinkhorn": true,
           "sinkhorn_samples": 20, "seed": 11}
})";

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

double log_mean_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s / static_cast<double>(v.size()));
}

}  // namespace

TEST_CASE("config rejects unknown keys and a missing target kind") {
  auto j = nlohmann::json::parse(kSmallConfig);
  j["train"]["xxx"] = 1;
  try {
    Config::from_json(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.xxx") != std::string::npos);
  }

  auto k = nlohmann::json::parse(kSmallConfig);
  k["target"].erase("kind");
  try {
    Config::from_json(k);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("target.kind") != std::string::npos);
  }

  auto top = nlohmann::json::parse(kSmallConfig);
  top["bogus"] = true;
  CHECK_THROWS_AS(Config::from_json(top), ConfigError);
}

TEST_CASE("resolved config round-trips") {
  const Config c = Config::from_string(kSmallConfig);
  CHECK(c.train.iterations == 5);
  CHECK(c.train.batch == 16);
  CHECK(c.eval.nfe_list == std::vector<int>{1, 2});
  const auto resolved = c.to_json();
  const Config back = Config::from_json(nlohmann::json::parse(resolved.dump()));
  CHECK(back.to_json().dump() == resolved.dump());

  auto target = make_target(c.target);
  CHECK(target->dim() == 2);
  CHECK(target->exact_log_z().has_value());
}

TEST_CASE("checkpoint encoding matches a hand-built byte fixture") {
  Checkpoint c;
  c.config_json = "{}";
  c.iteration = 3;
  c.adam_step = 2;
  c.lr = 0.5;
  c.rng = RngState{1, 2, "e"};
  MatrixXd a(1, 2);
  a << 1.0, -2.0;
  c.arrays.emplace_back("a", a);

  const std::string expected = hex_bytes(
      "4F 53 44 53 "                 // magic
      "01 00 00 00 "                 // version
      "02 00 00 00 00 00 00 00 7B 7D "  // config
      "03 00 00 00 00 00 00 00 "     // iteration
      "02 00 00 00 00 00 00 00 "     // adam step
      "00 00 00 00 00 00 E0 3F "     // lr = 0.5
      "01 00 00 00 00 00 00 00 "     // seed
      "02 00 00 00 00 00 00 00 "     // stream
      "01 00 00 00 00 00 00 00 65 "  // engine "e"
      "01 00 00 00 00 00 00 00 "     // array count
      "01 00 00 00 00 00 00 00 61 "  // name "a"
      "01 00 00 00 00 00 00 00 "     // rows
      "02 00 00 00 00 00 00 00 "     // cols
      "00 00 00 00 00 00 F0 3F "     // 1.0
      "00 00 00 00 00 00 00 C0");    // -2.0
  CHECK(encode_checkpoint(c) == expected);

  const Checkpoint d = decode_checkpoint(expected);
  CHECK(d.config_json == "{}");
  CHECK(d.iteration == 3);
  CHECK(d.adam_step == 2);
  CHECK(d.lr == 0.5);
  CHECK(d.rng.engine == "e");
  CHECK(d.array("a")(0, 1) == -2.0);
}

TEST_CASE("checkpoint round trip is bit-exact and corrupt input is rejected") {
  Checkpoint c;
  c.config_json = R"({"k": 1})";
  c.iteration = 17;
  c.adam_step = 16;
  c.lr = 1.0 / 3.0;
  Rng rng(5, 9);
  rng.uniform();
  c.rng = rng.state();
  MatrixXd m(2, 3);
  m << 0.1, -0.0, std::numeric_limits<double>::denorm_min(), 1e308, -1.0 / 7.0, 3.0;
  c.arrays.emplace_back("theta/w", m);

  const std::string bytes = encode_checkpoint(c);
  const Checkpoint d = decode_checkpoint(bytes);
  CHECK(encode_checkpoint(d) == bytes);
  CHECK(d.lr == c.lr);
  CHECK(std::signbit(d.array("theta/w")(0, 1)));
  CHECK(d.array("theta/w")(0, 2) == std::numeric_limits<double>::denorm_min());
  Rng resumed = Rng::from_state(d.rng);
  CHECK(resumed.uniform() == rng.uniform());

  SUBCASE("bad magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointError);
  }
  SUBCASE("version mismatch") {
    std::string bad = bytes;
    bad[4] = 2;
    CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointError);
  }
  SUBCASE("truncated") {
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  }
  SUBCASE("trailing bytes") {
    CHECK_THROWS_AS(decode_checkpoint(bytes + "z"), CheckpointError);
  }
}

TEST_CASE("training state survives make_checkpoint and restore_state") {
  ParameterVector theta;
  theta.add("w", MatrixXd::Constant(2, 2, 0.25));
  theta.add("b", MatrixXd::Constant(1, 2, -1.5));
  trainer::TrainState st;
  st.theta = theta;
  st.ema = theta;
  st.ema.at("w")(0, 0) = 0.3;
  st.adam = trainer::AdamState::zeros_like(theta);
  st.adam.m.at("b")(0, 1) = 1e-9;
  st.adam.v.at("w")(1, 1) = 2e-9;
  st.adam.step = 7;
  st.iteration = 7;
  st.lr = 5e-4;
  st.rng = Rng(2, 1).state();

  const Checkpoint c = make_checkpoint("{}", st);
  CHECK(c.has_array("theta/w"));
  CHECK(c.has_array("adam_v/w"));
  const auto back = restore_state(decode_checkpoint(encode_checkpoint(c)), theta);
  CHECK(back.theta == st.theta);
  CHECK(back.ema == st.ema);
  CHECK(back.adam.m == st.adam.m);
  CHECK(back.adam.v == st.adam.v);
  CHECK(back.adam.step == 7);
  CHECK(back.iteration == 7);
  CHECK(back.lr == st.lr);
  CHECK(back.rng.engine == st.rng.engine);
}

TEST_CASE("diagnose writes kernel-gap and nfe-cost reports") {
  const fs::path dir = scratch("diag");
  std::ostringstream log;
  DiagnoseParams p;
  CHECK(cmd_diagnose("kernel-gap", p, dir.string(), log) == 0);
  const auto kg = nlohmann::json::parse(read_file(dir / "kernel-gap.json"));
  CHECK(kg["A"].get<double>() == doctest::Approx(6.0));
  CHECK(kg["Q"].get<double>() == doctest::Approx(10.0));

  p.n = 128;
  p.batch = 512;
  p.iterations = 10000;
  CHECK(cmd_diagnose("nfe-cost", p, dir.string(), log) == 0);
  CHECK(fs::exists(dir / "nfe-cost.json"));
  CHECK_THROWS_AS(cmd_diagnose("nope", p, dir.string(), log), std::invalid_argument);
}

TEST_CASE("end-to-end train, sample, eval through the executable") {
  const fs::path root = scratch("e2e");
  const fs::path cfg = root / "config.json";
  write_text(cfg, kSmallConfig);

  REQUIRE(run("train --config " + cfg.string() + " --out " + (root / "a").string(),
              root / "a.log") == 0);
  REQUIRE(run("train --config " + cfg.string() + " --out " + (root / "b").string(),
              root / "b.log") == 0);
  CHECK(read_file(root / "a" / "metrics.jsonl") == read_file(root / "b" / "metrics.jsonl"));
  CHECK(read_lines(root / "a" / "metrics.jsonl").size() == 5);
  CHECK(read_file(root / "a" / "checkpoint_final.osds") ==
        read_file(root / "b" / "checkpoint_final.osds"));
  CHECK(fs::exists(root / "a" / "checkpoint_iter_000004.osds"));

  const std::string ckpt = (root / "a" / "checkpoint_final.osds").string();

  SUBCASE("sample") {
    REQUIRE(run("sample --checkpoint " + ckpt + " --nfe 2 --samples 25 --seed 4 --out " +
                    (root / "s1").string(),
                root / "s1.log") == 0);
    const auto rows = read_lines(root / "s1" / "samples.csv");
    REQUIRE(rows.size() == 26);
    CHECK(rows[0] == "x1,x2,log_weight");

    const auto report = nlohmann::json::parse(read_lines(root / "s1" / "weights.jsonl").at(0));
    const auto lw = report["log_weights"].get<std::vector<double>>();
    REQUIRE(lw.size() == 25);
    CHECK(report["log_z_hat"].get<double>() == doctest::Approx(log_mean_exp(lw)).epsilon(1e-12));

    REQUIRE(run("sample --checkpoint " + ckpt + " --nfe 2 --samples 25 --seed 4 --out " +
                    (root / "s2").string(),
                root / "s2.log") == 0);
    CHECK(read_file(root / "s1" / "samples.csv") == read_file(root / "s2" / "samples.csv"));
    REQUIRE(run("sample --checkpoint " + ckpt + " --nfe 2 --samples 25 --seed 5 --out " +
                    (root / "s3").string(),
                root / "s3.log") == 0);
    CHECK(read_file(root / "s1" / "samples.csv") != read_file(root / "s3" / "samples.csv"));
  }

  SUBCASE("eval") {
    REQUIRE(run("eval --checkpoint " + ckpt + " --out " + (root / "e1").string(),
                root / "e1.log") == 0);
    REQUIRE(run("eval --checkpoint " + ckpt + " --out " + (root / "e2").string(),
                root / "e2.log") == 0);
    CHECK(read_file(root / "e1" / "metrics.jsonl") == read_file(root / "e2" / "metrics.jsonl"));

    int per_run = 0;
    int summary = 0;
    for (const auto& line : read_lines(root / "e1" / "metrics.jsonl")) {
      const auto j = nlohmann::json::parse(line);
      if (j.contains("summary")) {
        ++summary;
      } else {
        ++per_run;
        CHECK(j["sinkhorn"].is_number());
      }
    }
    CHECK(per_run == 2 * 2 * 2);
    CHECK(summary == 2 * 2);
    const auto csv = read_lines(root / "e1" / "metrics_vs_nfe.csv");
    REQUIRE(!csv.empty());
    CHECK(csv[0] == "nfe,weight_kind,metric,mean,sd,n_runs");
  }

  SUBCASE("usage errors") {
    CHECK(run("diagnose not-a-kind --out " + (root / "d").string(), root / "d.log") != 0);
    auto bad = nlohmann::json::parse(kSmallConfig);
    bad["target"].erase("kind");
    write_text(root / "bad.json", bad.dump());
    CHECK(run("train --config " + (root / "bad.json").string() + " --out " +
                  (root / "bad").string(),
              root / "bad.log") != 0);
    CHECK(read_file(root / "bad.log").find("target.kind") != std::string::npos);
  }
}

TEST_CASE("eval on a target without a reference sampler flags sinkhorn") {
  const fs::path root = scratch("logistic");
  std::string csv = "f1,f2,y\n";
  Rng rng(8, 0);
  for (int i = 0; i < 30; ++i) {
    const double a = rng.gaussian(1, 1)(0, 0);
    const double b = rng.gaussian(1, 1)(0, 0);
    csv += std::to_string(a) + "," + std::to_string(b) + "," + (a + 0.5 * b > 0 ? "1" : "0") + "\n";
  }
  write_text(root / "data.csv", csv);
  auto cfg = nlohmann::json::parse(kSmallConfig);
  cfg["target"] = {{"kind", "logistic"}, {"csv", (root / "data.csv").string()}};
  cfg["eval"]["runs"] = 1;
  cfg["eval"]["nfe_list"] = {1};
  write_text(root / "config.json", cfg.dump());

  REQUIRE(run("train --config " + (root / "config.json").string() + " --out " +
                  (root / "t").string(),
              root / "t.log") == 0);
  REQUIRE(run("eval --checkpoint " + (root / "t" / "checkpoint_final.osds").string() +
                  " --out " + (root / "e").string(),
              root / "e.log") == 0);
  bool flagged = false;
  for (const auto& line : read_lines(root / "e" / "metrics.jsonl")) {
    const auto j = nlohmann::json::parse(line);
    if (j.contains("sinkhorn_status")) flagged = true;
    if (!j.contains("summary")) CHECK(j["sinkhorn"].is_null());
  }
  CHECK(flagged);
}
