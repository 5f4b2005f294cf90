#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "larpg/bal_io.hpp"
#include "larpg/problem.hpp"
#include "larpg/runtime.hpp"

namespace larpg {

using Json = nlohmann::ordered_json;

// Default configuration; solver and lazy values mirror the defaults the
// engine is tuned for (gamma 1.0, lambda 1e6, epsilon 10, dbar 10,
// delta_p 0.1).
inline Json default_config() {
  return Json{
      {"problem",
       {{"source", "synth"},
        {"path", ""},
        {"synth",
         {{"n_cameras", 20},
          {"n_points", 200},
          {"observation_density", 0.5},
          {"noise_px", 1.0},
          {"seed", 1}}}}},
      {"partition", {{"n_agents", 3}, {"seed", 7}}},
      {"noise",
       {{"rot_deg", 5.0}, {"pos_m", 0.1}, {"point_m", 0.05}, {"seed", 11}}},
      {"solver", {{"gamma", 1.0}, {"lambda", 1e6}, {"max_iters", 50}}},
      {"lazy",
       {{"delta_p", 0.1},
        {"epsilon", 10.0},
        {"dbar", 10},
        {"m_scaling", "per_agent_observed"}}},
      {"check",
       {{"gamma", nullptr},
        {"epsilon", nullptr},
        {"gap_trials", 100},
        {"gap_radius", 1e-4}}},
      {"output",
       {{"trace_path", ""}, {"metrics_path", ""}, {"state_path", ""}}}};
  }

namespace detail {

inline void check_known_keys(const Json& value, const Json& schema,
                             const std::string& prefix) {
  if (!value.is_object()) return;
  for (const auto& [key, sub] : value.items()) {
    if (!schema.is_object() || !schema.contains(key))
      throw std::invalid_argument("config: unknown key '" + prefix + key +
                                  "'");
    if (sub.is_object() && schema[key].is_object())
      check_known_keys(sub, schema[key], prefix + key + ".");
  }
}

inline void merge_into(Json& base, const Json& overlay) {
  for (const auto& [key, sub] : overlay.items()) {
    if (sub.is_object() && base.contains(key) && base[key].is_object())
      merge_into(base[key], sub);
    else
      base[key] = sub;
  }
}

}  // namespace detail

// Loads a config file on top of the defaults. A metrics file produced by the
// run command (object with "config" and "metrics" keys) is accepted and
// unwrapped, so re-running from an echoed config works directly.
inline Json load_config(const std::string& path) {
  Json cfg = default_config();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    Json user = Json::parse(in);
    if (user.contains("config") && user.contains("metrics"))
      user = user["config"];
    detail::check_known_keys(user, cfg, "");
    detail::merge_into(cfg, user);
  }
  return cfg;
}

// Applies one "dotted.path=value" override; the value is parsed as JSON when
// possible and falls back to a plain string.
inline void apply_override(Json& cfg, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override must look like key.path=value: " +
                                spec);
  const std::string path = spec.substr(0, eq);
  const std::string raw = spec.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const Json::parse_error&) {
    value = raw;
  }

  Json* node = &cfg;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(
        start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw std::invalid_argument("bad override path: " + spec);
    if (!node->is_object() || !node->contains(key))
      throw std::invalid_argument("config: unknown key '" + path + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline double parse_delta_p(const Json& value) {
  if (value.is_string()) {
    const std::string s = value.get<std::string>();
    if (s == "inf" || s == "+inf" || s == "infinity")
      return std::numeric_limits<double>::infinity();
    throw std::invalid_argument("lazy.delta_p: expected a number or \"inf\"");
  }
  return value.get<double>();
}

inline std::vector<double> parse_epsilon(const Json& value, int dbar) {
  std::vector<double> eps;
  if (value.is_array()) {
    eps = value.get<std::vector<double>>();
    if (static_cast<int>(eps.size()) != dbar)
      throw std::invalid_argument("lazy.epsilon list must have dbar entries");
  } else {
    eps.assign(dbar, value.get<double>());
  }
  return eps;
}

inline RunConfig run_config_from_json(const Json& cfg) {
  RunConfig rc;
  rc.gamma = cfg["solver"]["gamma"].get<double>();
  rc.lambda = cfg["solver"]["lambda"].get<double>();
  rc.max_iters = cfg["solver"]["max_iters"].get<int>();
  rc.lazy.dbar = cfg["lazy"]["dbar"].get<int>();
  rc.lazy.delta_p = parse_delta_p(cfg["lazy"]["delta_p"]);
  rc.lazy.epsilon = parse_epsilon(cfg["lazy"]["epsilon"], rc.lazy.dbar);
  const std::string scaling = cfg["lazy"]["m_scaling"].get<std::string>();
  if (scaling == "per_agent_observed")
    rc.lazy.scaling = MScaling::kPerAgentObserved;
  else if (scaling == "global_m")
    rc.lazy.scaling = MScaling::kGlobalM;
  else
    throw std::invalid_argument(
        "lazy.m_scaling must be per_agent_observed or global_m");
  rc.seed = cfg["problem"]["synth"]["seed"].get<std::uint64_t>();
  rc.validate();
  return rc;
}

struct BuiltProblem {
  ProblemInstance instance;
  State ground_truth;
  State initial;
};

// Materializes the problem a config describes: synthetic generation or BAL
// ingestion, random partition, then the configured perturbation of the
// ground truth as the initial iterate.
inline BuiltProblem build_problem(const Json& cfg) {
  const std::string source = cfg["problem"]["source"].get<std::string>();
  const int n_agents = cfg["partition"]["n_agents"].get<int>();

  std::optional<SynthProblem> built;
  if (source == "synth") {
    const Json& sp = cfg["problem"]["synth"];
    built = synth_generate(
        sp["n_cameras"].get<int>(), sp["n_points"].get<int>(), n_agents,
        sp["observation_density"].get<double>(), sp["noise_px"].get<double>(),
        sp["seed"].get<std::uint64_t>());
  } else if (source == "bal") {
    const std::string path = cfg["problem"]["path"].get<std::string>();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open BAL file " + path);
    const BalDataset data = parse_bal(in);
    PartitionedProblem part = partition_random(
        bal_to_flat(data), n_agents,
        cfg["partition"]["seed"].get<std::uint64_t>());
    built = SynthProblem{std::move(part.instance), std::move(part.geometry)};
  } else {
    throw std::invalid_argument("problem.source must be synth or bal");
  }

  const Json& noise = cfg["noise"];
  State initial = perturb_state(
      built->ground_truth, noise["rot_deg"].get<double>(),
      noise["pos_m"].get<double>(), noise["point_m"].get<double>(),
      noise["seed"].get<std::uint64_t>());
  return {std::move(built->instance), std::move(built->ground_truth),
          std::move(initial)};
}

// State serialization for the `metrics` subcommand: quaternions are stored
// scalar-first.
inline Json state_to_json(const State& state) {
  Json agents = Json::array();
  for (const auto& agent_poses : state.poses) {
    Json poses = Json::array();
    for (const Pose& pose : agent_poses) {
      poses.push_back(
          {{"q",
            {pose.rotation.w(), pose.rotation.x(), pose.rotation.y(),
             pose.rotation.z()}},
           {"t",
            {pose.translation.x(), pose.translation.y(),
             pose.translation.z()}}});
    }
    agents.push_back(std::move(poses));
  }
  Json points = Json::array();
  for (const auto& p : state.points)
    points.push_back({p.x(), p.y(), p.z()});
  return Json{{"agents", std::move(agents)}, {"points", std::move(points)}};
}

inline State state_from_json(const Json& j) {
  State state;
  for (const auto& agent : j.at("agents")) {
    std::vector<Pose> poses;
    for (const auto& pj : agent) {
      Pose pose;
      const auto& q = pj.at("q");
      pose.rotation = Eigen::Quaterniond(q[0].get<double>(), q[1].get<double>(),
                                         q[2].get<double>(), q[3].get<double>());
      const auto& t = pj.at("t");
      pose.translation << t[0].get<double>(), t[1].get<double>(),
          t[2].get<double>();
      poses.push_back(pose);
    }
    state.poses.push_back(std::move(poses));
  }
  for (const auto& pj : j.at("points")) {
    Eigen::Vector3d p;
    p << pj[0].get<double>(), pj[1].get<double>(), pj[2].get<double>();
    state.points.push_back(p);
  }
  return state;
}

}  // namespace larpg
