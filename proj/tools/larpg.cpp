// Command-line driver: generate or ingest collaborative BA problems, run the
// lazily aggregated reduced preconditioned gradient solver, sweep lazy
// parameters, and run the descent-theory checks.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "larpg/config.hpp"
#include "larpg/metrics.hpp"
#include "larpg/theory.hpp"
#include "larpg/trace_io.hpp"

namespace {

using larpg::Json;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  int threads = 0;
  long long seed = -1;
};

Json effective_config(const CommonOpts& opts) {
  Json cfg = larpg::load_config(opts.config_path);
  for (const auto& ov : opts.overrides) larpg::apply_override(cfg, ov);
  if (opts.seed >= 0) {
    cfg["problem"]["synth"]["seed"] = opts.seed;
    cfg["partition"]["seed"] = opts.seed;
    cfg["noise"]["seed"] = opts.seed;
  }
  return cfg;
}

int resolve_threads(const CommonOpts& opts) {
  if (opts.threads > 0) return opts.threads;
  if (const char* env = std::getenv("LARPG_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << contents;
  if (!out) throw std::runtime_error("write to " + path + " failed");
}

larpg::MetricHooks make_hooks(const larpg::ProblemInstance& instance,
                              const larpg::State& gt) {
  larpg::MetricHooks hooks;
  hooks.ate = [&gt](const larpg::State& s) { return larpg::ate_rmse(s, gt); };
  hooks.reproj = [&instance](const larpg::State& s) {
    return larpg::mean_reproj(instance, s);
  };
  return hooks;
}

Json metrics_json(const Json& cfg, const larpg::RunResult& result,
                  const larpg::ProblemInstance& instance,
                  const larpg::State& gt) {
  Json m;
  m["ate_rmse"] = larpg::ate_rmse(result.final_state, gt);
  m["mean_reproj"] = larpg::mean_reproj(instance, result.final_state);
  m["total_upload_bytes"] = result.trace.back().cum_upload_bytes;
  m["total_broadcast_bytes"] = result.trace.back().cum_broadcast_bytes;
  m["final_f"] = result.final_f;
  m["final_grad_norm"] = result.final_grad_norm;
  m["iterations"] = static_cast<int>(result.trace.size()) - 1;
  return Json{{"config", cfg}, {"metrics", std::move(m)}};
}

struct RunOutputs {
  larpg::RunResult result;
  Json metrics;
};

RunOutputs execute_run(const Json& cfg, int threads) {
  larpg::BuiltProblem problem = larpg::build_problem(cfg);
  larpg::RunConfig rc = larpg::run_config_from_json(cfg);
  rc.num_threads = threads;
  const larpg::MetricHooks hooks =
      make_hooks(problem.instance, problem.ground_truth);
  larpg::RunResult result =
      larpg::run(problem.instance, problem.initial, rc, hooks);
  Json metrics =
      metrics_json(cfg, result, problem.instance, problem.ground_truth);
  return {std::move(result), std::move(metrics)};
}

void write_run_outputs(const Json& cfg, const RunOutputs& out) {
  const std::string trace_path = cfg["output"]["trace_path"].get<std::string>();
  if (!trace_path.empty()) {
    std::ostringstream ss;
    larpg::write_trace(out.result.trace, ss);
    write_text_file(trace_path, ss.str());
  }
  const std::string metrics_path =
      cfg["output"]["metrics_path"].get<std::string>();
  if (!metrics_path.empty())
    write_text_file(metrics_path, out.metrics.dump(2) + "\n");
  const std::string state_path = cfg["output"]["state_path"].get<std::string>();
  if (!state_path.empty())
    write_text_file(state_path,
                    larpg::state_to_json(out.result.final_state).dump() + "\n");
}

int cmd_run(const CommonOpts& opts) {
  const Json cfg = effective_config(opts);
  RunOutputs out = execute_run(cfg, resolve_threads(opts));
  write_run_outputs(cfg, out);
  const auto& m = out.metrics["metrics"];
  std::cout << "final f=" << larpg::format_double(m["final_f"].get<double>())
            << " grad_norm="
            << larpg::format_double(m["final_grad_norm"].get<double>())
            << " uploads_mb="
            << larpg::format_double(
                   m["total_upload_bytes"].get<double>() / 1048576.0)
            << " ate=" << larpg::format_double(m["ate_rmse"].get<double>())
            << " reproj="
            << larpg::format_double(m["mean_reproj"].get<double>()) << "\n";
  return 0;
}

std::string value_token(const std::string& raw) {
  std::string token = raw;
  for (char& c : token)
    if (c == '.' || c == '+') c = 'p';
  return token;
}

int cmd_sweep(const CommonOpts& opts, const std::string& param,
              const std::vector<std::string>& values) {
  static const std::map<std::string, std::string> kParamPaths = {
      {"epsilon", "lazy.epsilon"},
      {"dbar", "lazy.dbar"},
      {"delta_p", "lazy.delta_p"},
      {"gamma", "solver.gamma"}};
  const auto it = kParamPaths.find(param);
  if (it == kParamPaths.end())
    throw std::invalid_argument(
        "sweep parameter must be one of epsilon, dbar, delta_p, gamma");

  const Json base = effective_config(opts);
  const std::string trace_path =
      base["output"]["trace_path"].get<std::string>();
  if (trace_path.empty())
    throw std::invalid_argument("sweep requires output.trace_path");
  const std::filesystem::path tp(trace_path);
  const std::string stem = (tp.parent_path() / tp.stem()).string();

  std::ostringstream summary;
  summary << "value,final_rmse,total_upload_bytes\n";
  for (const std::string& value : values) {
    Json cfg = base;
    larpg::apply_override(cfg, it->second + "=" + value);
    // dbar resizes the epsilon list when a scalar was given
    cfg["output"]["trace_path"] =
        stem + "_" + param + "_" + value_token(value) + tp.extension().string();
    cfg["output"]["metrics_path"] = "";
    cfg["output"]["state_path"] = "";
    RunOutputs out = execute_run(cfg, resolve_threads(opts));
    write_run_outputs(cfg, out);
    summary << value << ','
            << larpg::format_double(
                   out.metrics["metrics"]["ate_rmse"].get<double>())
            << ','
            << out.metrics["metrics"]["total_upload_bytes"]
                   .get<std::uint64_t>()
            << '\n';
    std::cout << param << "=" << value << " rmse="
              << larpg::format_double(
                     out.metrics["metrics"]["ate_rmse"].get<double>())
              << " uploads="
              << out.metrics["metrics"]["total_upload_bytes"]
                     .get<std::uint64_t>()
              << "\n";
  }
  write_text_file(stem + "_sweep_" + param + ".csv", summary.str());
  return 0;
}

int cmd_check(const CommonOpts& opts) {
  const Json cfg = effective_config(opts);
  larpg::BuiltProblem problem = larpg::build_problem(cfg);

  int dim = 3 * problem.instance.num_points();
  for (int i = 0; i < problem.instance.num_agents(); ++i)
    dim += 6 * problem.instance.agent(i).num_poses();
  if (dim > 6000) {
    std::cerr << "check: instance dimension " << dim
              << " exceeds the dense desk-scale guard (6000)\n";
    return 1;
  }

  larpg::RunConfig rc = larpg::run_config_from_json(cfg);
  rc.num_threads = resolve_threads(opts);

  // sigma_p from the dense reduced Hessian at the initial iterate.
  const larpg::AssumptionEstimates est = larpg::estimate_assumptions(
      problem.instance, problem.initial, rc.lambda,
      cfg["check"]["gap_trials"].get<int>(),
      cfg["check"]["gap_radius"].get<double>());

  // Parameters: user-forced gamma/epsilon when set, otherwise constructed
  // inside the certified region.
  double gamma = cfg["check"]["gamma"].is_null()
                     ? 0.5 / est.sigma_p
                     : cfg["check"]["gamma"].get<double>();
  std::vector<double> epsilon =
      cfg["check"]["epsilon"].is_null()
          ? larpg::feasible_uniform_epsilon(gamma, est.sigma_p, rc.lazy.dbar)
          : larpg::parse_epsilon(cfg["check"]["epsilon"], rc.lazy.dbar);

  const larpg::AdmissibleResult adm =
      larpg::admissible_params(gamma, est.sigma_p, epsilon);

  Json report;
  report["sigma_p"] = est.sigma_p;
  report["mu"] = est.mu;
  report["L"] = est.L;
  report["mu_p"] = est.mu_p;
  report["c_g_sample"] = est.c_g;
  report["gamma"] = gamma;
  report["epsilon"] = epsilon;
  if (!adm.accepted()) {
    report["accepted"] = false;
    report["violated"] = adm.rejection->violated;
    std::cout << report.dump(2) << "\n";
    std::cerr << "check: parameters rejected: " << adm.rejection->violated
              << "\n";
    return 1;
  }
  report["accepted"] = true;
  report["beta"] = adm.params->beta;

  rc.gamma = gamma;
  rc.lazy.epsilon = epsilon;
  rc.beta = adm.params->beta;
  larpg::RunResult result = larpg::run(problem.instance, problem.initial, rc);

  std::vector<double> f, wsq;
  for (const auto& rec : result.trace) {
    f.push_back(rec.f);
    wsq.push_back(rec.what_normsq);
  }
  const larpg::DescentCheck descent =
      larpg::check_descent(f, wsq, adm.params->beta);
  report["descent_ok"] = descent.ok;
  report["iterations"] = static_cast<int>(f.size()) - 1;
  if (!descent.ok) {
    report["first_violation_iter"] = descent.first_violation;
    report["worst_violation"] = descent.worst_violation;
  }
  std::cout << report.dump(2) << "\n";
  if (!descent.ok) {
    std::cerr << "check: Lyapunov descent violated at iteration "
              << descent.first_violation << "\n";
    return 1;
  }
  return 0;
}

int cmd_gen(const CommonOpts& opts) {
  const Json cfg = effective_config(opts);
  const std::string path = cfg["problem"]["path"].get<std::string>();
  if (path.empty())
    throw std::invalid_argument("gen writes to problem.path; set it");
  const Json& sp = cfg["problem"]["synth"];

  // Regenerate the flat problem exactly as build_problem would, then export.
  larpg::SynthProblem synth = larpg::synth_generate(
      sp["n_cameras"].get<int>(), sp["n_points"].get<int>(),
      cfg["partition"]["n_agents"].get<int>(),
      sp["observation_density"].get<double>(), sp["noise_px"].get<double>(),
      sp["seed"].get<std::uint64_t>());

  // Flatten back: cameras in (agent, pose) order become BAL camera order.
  larpg::FlatProblem flat;
  const auto& gt = synth.ground_truth;
  std::vector<std::pair<int, int>> slots;
  for (std::size_t i = 0; i < gt.poses.size(); ++i)
    for (std::size_t j = 0; j < gt.poses[i].size(); ++j) {
      flat.cameras.push_back(gt.poses[i][j]);
      flat.intrinsics.push_back(
          synth.instance.agent(static_cast<int>(i)).intrinsics[j]);
      slots.emplace_back(static_cast<int>(i), static_cast<int>(j));
    }
  flat.points = gt.points;
  for (std::size_t i = 0; i < gt.poses.size(); ++i) {
    const auto& agent = synth.instance.agent(static_cast<int>(i));
    int cam_base = 0;
    for (std::size_t a = 0; a < i; ++a)
      cam_base += static_cast<int>(gt.poses[a].size());
    for (const auto& obs : agent.observations) {
      larpg::FlatProblem::Obs o;
      o.camera = cam_base + obs.pose_idx;
      o.point = obs.point_id;
      o.kind = obs.kind;
      o.measurement = obs.measurement;
      o.weight = obs.weight;
      flat.observations.push_back(o);
    }
  }

  std::ostringstream ss;
  larpg::write_bal(larpg::flat_to_bal(flat), ss);
  write_text_file(path, ss.str());
  std::cout << "wrote " << flat.cameras.size() << " cameras, "
            << flat.points.size() << " points, " << flat.observations.size()
            << " observations to " << path << "\n";
  return 0;
}

int cmd_metrics(const CommonOpts& opts, const std::string& state_path) {
  const Json cfg = effective_config(opts);
  larpg::BuiltProblem problem = larpg::build_problem(cfg);
  std::ifstream in(state_path);
  if (!in) throw std::runtime_error("cannot open state file " + state_path);
  const larpg::State state = larpg::state_from_json(Json::parse(in));
  Json m;
  m["ate_rmse"] = larpg::ate_rmse(state, problem.ground_truth);
  m["mean_reproj"] = larpg::mean_reproj(problem.instance, state);
  const std::string metrics_path =
      cfg["output"]["metrics_path"].get<std::string>();
  const std::string text = m.dump(2) + "\n";
  if (!metrics_path.empty()) write_text_file(metrics_path, text);
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LARPG collaborative geometric estimation"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string sweep_param;
  std::string sweep_values;
  std::string state_path;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opts.config_path, "JSON config file");
    cmd->add_option("--override", opts.overrides,
                    "key.path=value override (repeatable)");
    cmd->add_option("--threads", opts.threads,
                    "worker threads (fallback: LARPG_THREADS)");
    cmd->add_option("--seed", opts.seed,
                    "override problem/partition/noise seeds");
  };

  CLI::App* run = app.add_subcommand("run", "run the solver");
  add_common(run);
  CLI::App* sweep =
      app.add_subcommand("sweep", "run once per parameter value");
  add_common(sweep);
  sweep->add_option("--param", sweep_param, "epsilon|dbar|delta_p|gamma")
      ->required();
  sweep->add_option("--values", sweep_values, "comma-separated values")
      ->required();
  CLI::App* check =
      app.add_subcommand("check", "descent-theory checks at desk scale");
  add_common(check);
  CLI::App* gen = app.add_subcommand("gen", "write a synthetic BAL problem");
  add_common(gen);
  CLI::App* metrics =
      app.add_subcommand("metrics", "recompute metrics from a saved state");
  add_common(metrics);
  metrics->add_option("--state", state_path, "state JSON from output.state_path")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(opts);
    if (sweep->parsed()) {
      std::vector<std::string> values;
      std::stringstream ss(sweep_values);
      std::string v;
      while (std::getline(ss, v, ',')) values.push_back(v);
      if (values.empty())
        throw std::invalid_argument("sweep needs at least one value");
      return cmd_sweep(opts, sweep_param, values);
    }
    if (check->parsed()) return cmd_check(opts);
    if (gen->parsed()) return cmd_gen(opts);
    if (metrics->parsed()) return cmd_metrics(opts, state_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
