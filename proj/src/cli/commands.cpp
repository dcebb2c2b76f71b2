#include "osds/cli/commands.hpp"

#include "osds/diagnostics/diagnostics.hpp"
#include "osds/estimators/metrics.hpp"
#include "osds/estimators/sinkhorn.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

namespace osds::cli {

namespace fs = std::filesystem;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string output_path(const std::string& dir) {
  fs::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv("OSDS_OUTPUT_ROOT"); root && *root) p = fs::path(root) / p;
  }
  return p.string();
}

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

controlnet::ControlNet rebuild_net(const Config& c, int dim, const ParameterVector& theta) {
  return controlnet::ControlNet(c.network, dim, theta);
}

MatrixXd finite_rows(const MatrixXd& x, Index limit) {
  MatrixXd out(std::min(limit, x.rows()), x.cols());
  Index k = 0;
  for (Index i = 0; i < x.rows() && k < out.rows(); ++i) {
    if (x.row(i).allFinite()) out.row(k++) = x.row(i);
  }
  out.conservativeResize(k, Eigen::NoChange);
  return out;
}

}  // namespace

dynamics::ControlFn LoadedRun::control(bool use_ema) const {
  return net.frozen(use_ema ? state.ema : state.theta, target);
}

estimators::FlowSampler LoadedRun::sampler(bool use_ema, const dynamics::PfOptions& pf,
                                           int substeps) const {
  estimators::FlowSampler s;
  s.control = control(use_ema);
  s.schedule = schedule;
  s.prior = prior;
  s.target = target;
  s.pf = pf;
  s.substeps = substeps;
  return s;
}

LoadedRun load_run(const std::string& checkpoint_path) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  Config config = Config::from_string(ck.config_json);
  auto target = make_target(config.target);
  Rng layout_rng(config.train.seed, 0);
  auto layout = controlnet::ControlNet::init(config.network, target->dim(), layout_rng);
  trainer::TrainState state = restore_state(ck, layout.params());
  auto net = rebuild_net(config, target->dim(), state.theta);
  return LoadedRun{config,
                   target,
                   targets::GaussianPrior::standard(target->dim(), config.prior_scale),
                   dynamics::NoiseSchedule(config.schedule),
                   std::move(net),
                   std::move(state)};
}

int cmd_train(const std::string& config_path, const std::string& out, std::ostream& log) {
  Config config = Config::load(config_path);
  const fs::path dir = output_path(out.empty() ? config.output_dir : out);
  fs::create_directories(dir);
  const std::string resolved = config.to_json().dump(2);
  open_out(dir / "config.json") << resolved << '\n';

  auto target = make_target(config.target);
  const auto prior = targets::GaussianPrior::standard(target->dim(), config.prior_scale);
  const dynamics::NoiseSchedule schedule(config.schedule);
  Rng init_rng(config.train.seed, 0);
  auto net = controlnet::ControlNet::init(config.network, target->dim(), init_rng);

  std::ofstream metrics = open_out(dir / "metrics.jsonl");
  trainer::TrainHooks hooks;
  hooks.on_iteration = [&](const trainer::IterationLog& e) {
    estimators::write_jsonl(metrics, e.to_json());
  };
  hooks.on_checkpoint = [&](const trainer::TrainState& s, const std::string& tag) {
    std::string name = "checkpoint_" + tag;
    if (tag == "iter") {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "_%06d", s.iteration);
      name += buf;
    }
    save_checkpoint((dir / (name + ".osds")).string(), make_checkpoint(resolved, s));
  };
  auto result = trainer::train(config.train, net, target, prior, schedule, hooks);
  metrics.flush();

  nlohmann::ordered_json summary;
  summary["iterations"] = result.final_state.iteration;
  summary["final_elbo"] = result.log.empty() ? 0.0 : result.log.back().elbo;
  summary["best_ma_elbo"] = result.has_best ? nlohmann::ordered_json(result.best_ma_elbo)
                                            : nlohmann::ordered_json(nullptr);
  summary["nfe_simulation"] = result.nfe_simulation;
  summary["nfe_distillation"] = result.nfe_distillation;
  summary["nan_restarts"] = result.nan_restarts;
  summary["nonfinite_scores"] = net.nonfinite_scores();
  open_out(dir / "train_summary.json") << summary.dump(2) << '\n';
  log << "trained " << result.final_state.iteration << " iterations; outputs in " << dir.string()
      << "\n";
  return 0;
}

int cmd_sample(const std::string& checkpoint_path, int nfe, Index samples, std::uint64_t seed,
               const std::string& out, std::ostream& log) {
  if (nfe < 1 || samples < 1) throw std::invalid_argument("sample: need nfe >= 1 and samples >= 1");
  LoadedRun run = load_run(checkpoint_path);
  const fs::path dir = output_path(out.empty() ? run.config.output_dir : out);
  fs::create_directories(dir);
  const auto& e = run.config.eval;
  auto sampler = run.sampler(e.use_ema, e.pf, e.substeps);
  Rng rng(seed, 7);
  const MatrixXd x0 = run.prior.sample(rng, samples);
  auto df = estimators::df_log_weights(sampler, x0, nfe, rng);
  const std::string run_id = "sample-seed" + std::to_string(seed);

  std::ofstream csv = open_out(dir / "samples.csv");
  for (int j = 0; j < df.samples.cols(); ++j) csv << "x" << (j + 1) << ",";
  csv << "log_weight\n";
  for (Index i = 0; i < df.samples.rows(); ++i) {
    for (Index j = 0; j < df.samples.cols(); ++j) csv << fmt(df.samples(i, j)) << ",";
    csv << fmt(df.log_weights(i)) << "\n";
  }

  auto ws = estimators::WeightSet::from_raw(df.log_weights, estimators::WeightKind::DF, nfe, seed,
                                            run_id);
  auto report = estimators::make_report(ws, run.target->exact_log_z());
  auto line = estimators::to_json(report);
  line["log_weights"] = std::vector<double>(ws.log_weights.data(),
                                            ws.log_weights.data() + ws.log_weights.size());
  std::ofstream jl = open_out(dir / "weights.jsonl");
  estimators::write_jsonl(jl, line);
  log << "wrote " << samples << " samples (nfe=" << nfe << ") to " << dir.string() << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& out, std::ostream& log,
             const EvalOverrides& overrides) {
  LoadedRun run = load_run(checkpoint_path);
  auto e = run.config.eval;
  if (overrides.runs) e.runs = *overrides.runs;
  if (overrides.samples) e.samples = *overrides.samples;
  if (overrides.seed) e.seed = *overrides.seed;
  const fs::path dir = output_path(out.empty() ? run.config.output_dir : out);
  fs::create_directories(dir);

  auto sampler = run.sampler(e.use_ema, e.pf, e.substeps);
  const auto exact = run.target->exact_log_z();
  const bool has_ref = run.target->has_reference_sampler();
  const double fb_cond = e.fb_condition_step > 0.0
                             ? e.fb_condition_step
                             : run.schedule.horizon() / run.config.train.base_steps;

  std::ofstream metrics = open_out(dir / "metrics.jsonl");
  using Key = std::pair<int, int>;  // (nfe, kind)
  std::map<Key, std::map<std::string, std::vector<double>>> acc;

  for (int r = 0; r < e.runs; ++r) {
    const std::string run_id = "run" + std::to_string(r);
    for (int nfe : e.nfe_list) {
      Rng rng(e.seed + static_cast<std::uint64_t>(r), 1000 + static_cast<std::uint64_t>(nfe));
      MatrixXd reference;
      if (has_ref && (e.eubo || e.sinkhorn)) reference = run.target->sample(rng, e.samples);

      // Deterministic flow.
      const MatrixXd x0 = run.prior.sample(rng, e.samples);
      auto df = estimators::df_log_weights(sampler, x0, nfe, rng);
      auto df_ws = estimators::WeightSet::from_raw(df.log_weights, estimators::WeightKind::DF,
                                                   nfe, e.seed + static_cast<std::uint64_t>(r),
                                                   run_id);
      std::optional<double> df_eubo;
      std::optional<double> df_sink;
      if (has_ref && e.eubo) {
        df_eubo = estimators::eubo(estimators::df_forward_log_weights(sampler, reference, nfe, rng));
      }
      if (has_ref && e.sinkhorn) {
        const Index m = std::min(e.sinkhorn_samples, e.samples);
        df_sink = estimators::sinkhorn(finite_rows(df.samples, m), reference.topRows(m)).value;
      }
      auto df_rep = estimators::make_report(df_ws, exact, df_eubo, df_sink);

      // Stochastic sampler with forward-backward weights.
      const auto disc = dynamics::Discretization::uniform(nfe, run.schedule.horizon());
      dynamics::SimulateOptions so;
      so.condition_step = fb_cond;
      so.abort_on_nonfinite = false;
      auto tr = dynamics::simulate_forward(sampler.control, run.schedule, run.prior, disc, rng,
                                           e.samples, so);
      auto fb_ws = estimators::WeightSet::from_raw(estimators::fb_log_weights(tr, *run.target),
                                                   estimators::WeightKind::FB, nfe,
                                                   e.seed + static_cast<std::uint64_t>(r), run_id);
      std::optional<double> fb_eubo;
      std::optional<double> fb_sink;
      if (has_ref && e.eubo) {
        fb_eubo = estimators::eubo(estimators::fb_forward_log_weights(
            sampler.control, run.schedule, run.prior, *run.target, disc, reference, fb_cond, rng));
      }
      if (has_ref && e.sinkhorn) {
        const Index m = std::min(e.sinkhorn_samples, e.samples);
        fb_sink = estimators::sinkhorn(finite_rows(tr.states.back(), m), reference.topRows(m)).value;
      }
      auto fb_rep = estimators::make_report(fb_ws, exact, fb_eubo, fb_sink);

      for (const auto* rep : {&df_rep, &fb_rep}) {
        auto line = estimators::to_json(*rep);
        if (!has_ref) line["sinkhorn_status"] = "unavailable: target has no reference sampler";
        estimators::write_jsonl(metrics, line);
        auto& a = acc[{nfe, static_cast<int>(rep->kind)}];
        a["elbo"].push_back(rep->elbo);
        a["ess"].push_back(rep->ess);
        a["log_z_hat"].push_back(rep->log_z_hat);
        if (rep->eubo) a["eubo"].push_back(*rep->eubo);
        if (rep->delta_log_z) a["delta_log_z"].push_back(*rep->delta_log_z);
        if (rep->sinkhorn) a["sinkhorn"].push_back(*rep->sinkhorn);
      }
    }
  }

  std::ofstream plot = open_out(dir / "metrics_vs_nfe.csv");
  plot << "nfe,weight_kind,metric,mean,sd,n_runs\n";
  for (const auto& [key, metrics_map] : acc) {
    nlohmann::ordered_json line;
    line["summary"] = true;
    line["nfe"] = key.first;
    line["weight_kind"] = estimators::to_string(static_cast<estimators::WeightKind>(key.second));
    for (const char* name : {"elbo", "eubo", "ess", "log_z_hat", "delta_log_z", "sinkhorn"}) {
      auto it = metrics_map.find(name);
      if (it == metrics_map.end() || it->second.empty()) {
        line[std::string(name) + "_mean"] = nullptr;
        line[std::string(name) + "_sd"] = nullptr;
        continue;
      }
      const auto& v = it->second;
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
      line[std::string(name) + "_mean"] = mean;
      line[std::string(name) + "_sd"] = sd;
      plot << key.first << "," << line["weight_kind"].get<std::string>() << "," << name << ","
           << fmt(mean) << "," << fmt(sd) << "," << v.size() << "\n";
    }
    if (!has_ref) line["sinkhorn_status"] = "unavailable: target has no reference sampler";
    estimators::write_jsonl(metrics, line);
  }
  log << "evaluated " << e.runs << " runs x " << e.nfe_list.size() << " NFE budgets; outputs in "
      << dir.string() << "\n";
  return 0;
}

int cmd_diagnose(const std::string& kind, const DiagnoseParams& params, const std::string& out,
                 std::ostream& log) {
  nlohmann::ordered_json report;
  if (kind == "kernel-gap") {
    auto r = diagnostics::kernel_gap(params.beta, params.sigma0_sq);
    log << r.to_text();
    report = r.to_json();
  } else if (kind == "nfe-cost") {
    std::vector<diagnostics::NfeScenario> scenarios;
    if (params.n || params.batch || params.iterations) {
      scenarios.push_back(diagnostics::nfe_savings(params.n.value_or(128), params.batch.value_or(512),
                                                   params.iterations.value_or(10000)));
    } else {
      scenarios = diagnostics::default_nfe_scenarios();
    }
    report = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
      log << "scenario " << (i + 1) << ": " << scenarios[i].to_text();
      report.push_back(scenarios[i].to_json());
    }
  } else {
    throw std::invalid_argument("diagnose: unknown kind '" + kind +
                                "' (expected kernel-gap or nfe-cost)");
  }
  if (!out.empty()) {
    const fs::path dir = output_path(out);
    fs::create_directories(dir);
    open_out(dir / (kind + ".json")) << report.dump(2) << '\n';
  }
  return 0;
}

}  // namespace osds::cli
