#include "osds/cli/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace osds::cli {

using nlohmann::json;

namespace {

// Reads keys of one JSON object and rejects any key it was not asked about.
class Section {
 public:
  Section(const json& j, std::string path) : path_(std::move(path)) {
    if (!j.is_null() && !j.is_object()) throw ConfigError("config section '" + path_ + "' must be an object");
    if (j.is_object()) j_ = j;
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + name(key) + "' has the wrong type");
    }
  }

  template <typename T>
  T require(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError("missing required config key '" + name(key) + "'");
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + name(key) + "' has the wrong type");
    }
  }

  json child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? j_.at(key) : json();
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + name(key) + "'");
    }
  }

 private:
  json j_ = json::object();
  std::string path_;
  std::set<std::string> seen_;
};

dynamics::SolverKind parse_solver(const std::string& s, const std::string& key) {
  if (s == "rk4") return dynamics::SolverKind::RK4;
  if (s == "euler") return dynamics::SolverKind::Euler;
  throw ConfigError("config key '" + key + "' must be 'rk4' or 'euler'");
}

dynamics::DivergenceMode parse_divergence(const std::string& s, const std::string& key) {
  if (s == "hutchinson") return dynamics::DivergenceMode::Hutchinson;
  if (s == "exact") return dynamics::DivergenceMode::Exact;
  throw ConfigError("config key '" + key + "' must be 'hutchinson' or 'exact'");
}

ProbeKind parse_probe(const std::string& s, const std::string& key) {
  if (s == "rademacher") return ProbeKind::Rademacher;
  if (s == "gaussian") return ProbeKind::Gaussian;
  throw ConfigError("config key '" + key + "' must be 'rademacher' or 'gaussian'");
}

void read_pf(Section& s, dynamics::PfOptions& pf) {
  pf.solver = parse_solver(s.get<std::string>("solver", to_string(pf.solver)), s.name("solver"));
  pf.divergence = parse_divergence(s.get<std::string>("divergence", to_string(pf.divergence)),
                                   s.name("divergence"));
  pf.probe = parse_probe(s.get<std::string>("probe", to_string(pf.probe)), s.name("probe"));
  pf.probes = s.get<int>("probes", pf.probes);
  if (pf.probes < 1) throw ConfigError("config key '" + s.name("probes") + "' must be >= 1");
}

void write_pf(nlohmann::ordered_json& j, const dynamics::PfOptions& pf) {
  j["solver"] = to_string(pf.solver);
  j["divergence"] = to_string(pf.divergence);
  j["probe"] = to_string(pf.probe);
  j["probes"] = pf.probes;
}

template <typename Fn>
void guarded(Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

}  // namespace

std::string to_string(dynamics::SolverKind k) {
  switch (k) {
    case dynamics::SolverKind::RK4: return "rk4";
    case dynamics::SolverKind::Euler: return "euler";
    case dynamics::SolverKind::Custom: return "custom";
  }
  return "rk4";
}

std::string to_string(dynamics::DivergenceMode m) {
  switch (m) {
    case dynamics::DivergenceMode::Hutchinson: return "hutchinson";
    case dynamics::DivergenceMode::Exact: return "exact";
    case dynamics::DivergenceMode::None: return "none";
  }
  return "hutchinson";
}

std::string to_string(ProbeKind p) { return p == ProbeKind::Rademacher ? "rademacher" : "gaussian"; }

Config Config::from_json(const json& root) {
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  Config c;
  Section top(root, "");

  {
    Section s(top.child("target"), "target");
    auto& t = c.target;
    t.kind = s.require<std::string>("kind");
    t.dim = s.get<int>("dim", t.dim);
    const json modes = s.child("modes");
    if (!modes.is_null()) {
      if (!modes.is_array()) throw ConfigError("config key 'target.modes' must be an array");
      for (std::size_t i = 0; i < modes.size(); ++i) {
        Section m(modes[i], "target.modes[" + std::to_string(i) + "]");
        const auto mean = m.require<std::vector<double>>("mean");
        targets::MixtureMode mode;
        mode.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
        mode.scale = m.get<double>("scale", 1.0);
        mode.weight = m.get<double>("weight", 1.0);
        m.finish();
        t.modes.push_back(mode);
      }
    }
    t.n_modes = s.get<int>("n_modes", t.n_modes);
    t.box_lo = s.get<double>("box_lo", t.box_lo);
    t.box_hi = s.get<double>("box_hi", t.box_hi);
    t.mode_scale = s.get<double>("mode_scale", t.mode_scale);
    t.seed = s.get<std::uint64_t>("seed", t.seed);
    t.wells = s.get<int>("wells", t.wells);
    t.delta = s.get<double>("delta", t.delta);
    t.csv = s.get<std::string>("csv", t.csv);
    t.standardize = s.get<bool>("standardize", t.standardize);
    t.prior_scale = s.get<double>("prior_scale", t.prior_scale);
    t.intercept = s.get<bool>("intercept", t.intercept);
    s.finish();
    static const std::set<std::string> kinds{"gmm", "funnel", "manywell", "logistic"};
    if (!kinds.count(t.kind)) {
      throw ConfigError("config key 'target.kind' must be one of gmm, funnel, manywell, logistic");
    }
  }
  {
    Section s(top.child("prior"), "prior");
    c.prior_scale = s.get<double>("scale", c.prior_scale);
    s.finish();
    if (!(c.prior_scale > 0.0)) throw ConfigError("config key 'prior.scale' must be positive");
  }
  {
    Section s(top.child("schedule"), "schedule");
    auto& sc = c.schedule;
    const auto kind = s.get<std::string>("kind", "linear");
    if (kind == "linear") {
      sc.kind = dynamics::ScheduleKind::Linear;
    } else if (kind == "cosine") {
      sc.kind = dynamics::ScheduleKind::Cosine;
    } else {
      throw ConfigError("config key 'schedule.kind' must be 'linear' or 'cosine'");
    }
    sc.beta_min = s.get<double>("beta_min", sc.beta_min);
    sc.beta_max = s.get<double>("beta_max", sc.beta_max);
    sc.sigma0 = s.get<double>("sigma0", sc.sigma0);
    sc.sigma_min = s.get<double>("sigma_min", sc.sigma_min);
    sc.sigma_max = s.get<double>("sigma_max", sc.sigma_max);
    sc.shift = s.get<double>("shift", sc.shift);
    sc.exponent = s.get<double>("exponent", sc.exponent);
    s.finish();
    guarded([&] { sc.validate(); });
  }
  {
    Section s(top.child("network"), "network");
    auto& n = c.network;
    n.width = s.get<int>("width", n.width);
    n.depth = s.get<int>("depth", n.depth);
    n.fourier_features = s.get<int>("fourier_features", n.fourier_features);
    n.fourier_base = s.get<double>("fourier_base", n.fourier_base);
    n.fourier_span = s.get<double>("fourier_span", n.fourier_span);
    n.clip_bound = s.get<double>("clip_bound", n.clip_bound);
    n.step_embedding = s.get<bool>("step_embedding", n.step_embedding);
    s.finish();
    guarded([&] { n.validate(); });
  }
  {
    Section s(top.child("train"), "train");
    auto& tr = c.train;
    tr.iterations = s.get<int>("iterations", tr.iterations);
    tr.batch = s.get<Eigen::Index>("batch", tr.batch);
    tr.base_steps = s.get<int>("base_steps", tr.base_steps);
    tr.anchors = s.get<Eigen::Index>("anchors", tr.anchors);
    tr.adam.lr = s.get<double>("lr", tr.adam.lr);
    tr.adam.beta1 = s.get<double>("beta1", tr.adam.beta1);
    tr.adam.beta2 = s.get<double>("beta2", tr.adam.beta2);
    tr.adam.eps = s.get<double>("eps", tr.adam.eps);
    tr.adam.weight_decay = s.get<double>("weight_decay", tr.adam.weight_decay);
    tr.clip = s.get<double>("clip", tr.clip);
    tr.ema_decay = s.get<double>("ema_decay", tr.ema_decay);
    tr.weights.state = s.get<double>("lambda_state", tr.weights.state);
    tr.weights.vol = s.get<double>("lambda_vol", tr.weights.vol);
    tr.weights.jac = s.get<double>("lambda_jac", tr.weights.jac);
    tr.checkpoint_every = s.get<int>("checkpoint_every", tr.checkpoint_every);
    tr.ma_window = s.get<int>("ma_window", tr.ma_window);
    tr.seed = s.get<std::uint64_t>("seed", tr.seed);
    tr.distill_substeps = s.get<int>("distill_substeps", tr.distill_substeps);
    read_pf(s, tr.pf);
    s.finish();
    guarded([&] { tr.validate(); });
  }
  {
    Section s(top.child("eval"), "eval");
    auto& e = c.eval;
    e.runs = s.get<int>("runs", e.runs);
    e.samples = s.get<Eigen::Index>("samples", e.samples);
    e.nfe_list = s.get<std::vector<int>>("nfe_list", e.nfe_list);
    e.substeps = s.get<int>("substeps", e.substeps);
    read_pf(s, e.pf);
    e.eubo = s.get<bool>("eubo", e.eubo);
    e.sinkhorn = s.get<bool>("sinkhorn", e.sinkhorn);
    e.sinkhorn_samples = s.get<Eigen::Index>("sinkhorn_samples", e.sinkhorn_samples);
    e.use_ema = s.get<bool>("use_ema", e.use_ema);
    e.seed = s.get<std::uint64_t>("seed", e.seed);
    e.fb_condition_step = s.get<double>("fb_condition_step", e.fb_condition_step);
    s.finish();
    if (e.runs < 1 || e.samples < 1 || e.substeps < 1 || e.nfe_list.empty()) {
      throw ConfigError("eval: need runs, samples, substeps >= 1 and a non-empty nfe_list");
    }
    for (int n : e.nfe_list) {
      if (n < 1) throw ConfigError("config key 'eval.nfe_list' entries must be >= 1");
    }
  }
  {
    Section s(top.child("output"), "output");
    c.output_dir = s.get<std::string>("dir", c.output_dir);
    s.finish();
  }
  top.finish();
  return c;
}

Config Config::from_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

nlohmann::ordered_json Config::to_json() const {
  nlohmann::ordered_json j;
  auto& t = j["target"];
  t["kind"] = target.kind;
  t["dim"] = target.dim;
  if (!target.modes.empty()) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& m : target.modes) {
      nlohmann::ordered_json mj;
      mj["mean"] = std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size());
      mj["scale"] = m.scale;
      mj["weight"] = m.weight;
      arr.push_back(mj);
    }
    t["modes"] = arr;
  }
  t["n_modes"] = target.n_modes;
  t["box_lo"] = target.box_lo;
  t["box_hi"] = target.box_hi;
  t["mode_scale"] = target.mode_scale;
  t["seed"] = target.seed;
  t["wells"] = target.wells;
  t["delta"] = target.delta;
  t["csv"] = target.csv;
  t["standardize"] = target.standardize;
  t["prior_scale"] = target.prior_scale;
  t["intercept"] = target.intercept;

  j["prior"]["scale"] = prior_scale;

  auto& s = j["schedule"];
  s["kind"] = schedule.kind == dynamics::ScheduleKind::Linear ? "linear" : "cosine";
  s["beta_min"] = schedule.beta_min;
  s["beta_max"] = schedule.beta_max;
  s["sigma0"] = schedule.sigma0;
  s["sigma_min"] = schedule.sigma_min;
  s["sigma_max"] = schedule.sigma_max;
  s["shift"] = schedule.shift;
  s["exponent"] = schedule.exponent;

  auto& n = j["network"];
  n["width"] = network.width;
  n["depth"] = network.depth;
  n["fourier_features"] = network.fourier_features;
  n["fourier_base"] = network.fourier_base;
  n["fourier_span"] = network.fourier_span;
  n["clip_bound"] = network.clip_bound;
  n["step_embedding"] = network.step_embedding;

  auto& tr = j["train"];
  tr["iterations"] = train.iterations;
  tr["batch"] = train.batch;
  tr["base_steps"] = train.base_steps;
  tr["anchors"] = train.anchors;
  tr["lr"] = train.adam.lr;
  tr["beta1"] = train.adam.beta1;
  tr["beta2"] = train.adam.beta2;
  tr["eps"] = train.adam.eps;
  tr["weight_decay"] = train.adam.weight_decay;
  tr["clip"] = train.clip;
  tr["ema_decay"] = train.ema_decay;
  tr["lambda_state"] = train.weights.state;
  tr["lambda_vol"] = train.weights.vol;
  tr["lambda_jac"] = train.weights.jac;
  tr["checkpoint_every"] = train.checkpoint_every;
  tr["ma_window"] = train.ma_window;
  tr["seed"] = train.seed;
  tr["distill_substeps"] = train.distill_substeps;
  write_pf(tr, train.pf);

  auto& e = j["eval"];
  e["runs"] = eval.runs;
  e["samples"] = eval.samples;
  e["nfe_list"] = eval.nfe_list;
  e["substeps"] = eval.substeps;
  write_pf(e, eval.pf);
  e["eubo"] = eval.eubo;
  e["sinkhorn"] = eval.sinkhorn;
  e["sinkhorn_samples"] = eval.sinkhorn_samples;
  e["use_ema"] = eval.use_ema;
  e["seed"] = eval.seed;
  e["fb_condition_step"] = eval.fb_condition_step;

  j["output"]["dir"] = output_dir;
  return j;
}

targets::TargetPtr make_target(const TargetSpec& spec) {
  if (spec.kind == "gmm") {
    if (!spec.modes.empty()) return targets::gmm_target(spec.modes, spec.dim);
    Rng rng(spec.seed, 0);
    return targets::random_gmm(spec.n_modes, spec.dim, spec.box_lo, spec.box_hi, spec.mode_scale,
                               rng);
  }
  if (spec.kind == "funnel") return targets::funnel_target(spec.dim);
  if (spec.kind == "manywell") return targets::manywell_target(spec.dim, spec.wells, spec.delta);
  if (spec.kind == "logistic") {
    if (spec.csv.empty()) throw ConfigError("missing required config key 'target.csv'");
    targets::CsvOptions opts;
    opts.standardize = spec.standardize;
    opts.prior_scale = spec.prior_scale;
    opts.intercept = spec.intercept;
    return targets::logistic_posterior(targets::load_csv(spec.csv, opts));
  }
  throw ConfigError("unknown target kind '" + spec.kind + "'");
}

}  // namespace osds::cli
