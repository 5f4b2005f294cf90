#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "larpg/geometry.hpp"
#include "larpg/rng.hpp"

namespace larpg {

enum class ObsKind { kReprojection, kPoint3d };

// One weighted factor tying a pose of some agent to a shared map point.
// Reprojection measurements use the first two components of `measurement`
// (pixels); point3d measurements use all three (meters, local frame).
struct Observation {
  int pose_idx = 0;
  int point_id = 0;
  ObsKind kind = ObsKind::kReprojection;
  Eigen::Vector3d measurement = Eigen::Vector3d::Zero();
  double weight = 1.0;
};

struct AgentProblem {
  std::vector<CameraIntrinsics> intrinsics;  // one per pose
  std::vector<Observation> observations;     // sorted by (pose_idx, point_id)
  std::vector<int> observed_blocks;          // L_i: sorted, unique point ids

  int num_poses() const { return static_cast<int>(intrinsics.size()); }
  int num_observed() const { return static_cast<int>(observed_blocks.size()); }

  // Local dense index of a point id within observed_blocks, -1 if absent.
  int local_block(int point_id) const {
    auto it = std::lower_bound(observed_blocks.begin(), observed_blocks.end(),
                               point_id);
    if (it == observed_blocks.end() || *it != point_id) return -1;
    return static_cast<int>(it - observed_blocks.begin());
  }
};

// Per-agent private poses plus the shared point map.
struct State {
  std::vector<std::vector<Pose>> poses;  // [agent][pose]
  std::vector<Eigen::Vector3d> points;

  int num_cameras() const {
    int n = 0;
    for (const auto& p : poses) n += static_cast<int>(p.size());
    return n;
  }
};

// The partitioned estimation problem. Immutable after construction; the
// constructor derives the observed-block sets and enforces that every shared
// block is observed by at least one agent.
class ProblemInstance {
 public:
  ProblemInstance(std::vector<AgentProblem> agents, int num_points)
      : agents_(std::move(agents)), num_points_(num_points) {
    std::vector<char> covered(num_points_, 0);
    for (auto& agent : agents_) {
      std::stable_sort(agent.observations.begin(), agent.observations.end(),
                       [](const Observation& a, const Observation& b) {
                         if (a.pose_idx != b.pose_idx)
                           return a.pose_idx < b.pose_idx;
                         return a.point_id < b.point_id;
                       });
      agent.observed_blocks.clear();
      for (const auto& obs : agent.observations) {
        if (obs.pose_idx < 0 || obs.pose_idx >= agent.num_poses())
          throw std::invalid_argument("observation pose index out of range");
        if (obs.point_id < 0 || obs.point_id >= num_points_)
          throw std::invalid_argument("observation point id out of range");
        if (!(obs.weight > 0.0))
          throw std::invalid_argument("observation weight must be positive");
        agent.observed_blocks.push_back(obs.point_id);
        covered[obs.point_id] = 1;
      }
      std::sort(agent.observed_blocks.begin(), agent.observed_blocks.end());
      agent.observed_blocks.erase(std::unique(agent.observed_blocks.begin(),
                                              agent.observed_blocks.end()),
                                  agent.observed_blocks.end());
    }
    for (int l = 0; l < num_points_; ++l) {
      if (!covered[l])
        throw std::invalid_argument("shared block " + std::to_string(l) +
                                    " is observed by no agent");
    }
  }

  int num_agents() const { return static_cast<int>(agents_.size()); }
  int num_points() const { return num_points_; }
  const AgentProblem& agent(int i) const { return agents_[i]; }

  int num_observations() const {
    int n = 0;
    for (const auto& a : agents_) n += static_cast<int>(a.observations.size());
    return n;
  }

  void check_state(const State& state) const {
    if (static_cast<int>(state.poses.size()) != num_agents() ||
        static_cast<int>(state.points.size()) != num_points_)
      throw std::invalid_argument("state sizes do not match instance");
    for (int i = 0; i < num_agents(); ++i)
      if (static_cast<int>(state.poses[i].size()) != agents_[i].num_poses())
        throw std::invalid_argument("state pose count mismatch for agent " +
                                    std::to_string(i));
  }

 private:
  std::vector<AgentProblem> agents_;
  int num_points_;
};

struct ResidualEval {
  Eigen::Vector3d r = Eigen::Vector3d::Zero();  // first `dim` entries used
  int dim = 0;
  bool valid = false;
};

inline ResidualEval evaluate_residual(const Observation& obs, const Pose& pose,
                                      const CameraIntrinsics& intr,
                                      const Eigen::Vector3d& point) {
  ResidualEval out;
  if (obs.kind == ObsKind::kReprojection) {
    const Projection proj = project(pose, intr, point);
    if (!proj.valid) return out;
    out.r.head<2>() = obs.measurement.head<2>() - proj.pixel;
    out.dim = 2;
    out.valid = true;
  } else {
    out.r = point - (pose.rotation * obs.measurement + pose.translation);
    out.dim = 3;
    out.valid = true;
  }
  return out;
}

// Global cost f = sum_i f_i with f_i = sum w * |r|^2. Summation runs in
// ascending (agent, pose, observation) order so results are reproducible
// bit for bit across runs and thread counts.
inline std::pair<double, std::vector<double>> evaluate_cost(
    const ProblemInstance& instance, const State& state) {
  instance.check_state(state);
  std::vector<double> per_agent(instance.num_agents(), 0.0);
  for (int i = 0; i < instance.num_agents(); ++i) {
    const AgentProblem& agent = instance.agent(i);
    double fi = 0.0;
    for (const Observation& obs : agent.observations) {
      const ResidualEval ev =
          evaluate_residual(obs, state.poses[i][obs.pose_idx],
                            agent.intrinsics[obs.pose_idx],
                            state.points[obs.point_id]);
      if (!ev.valid) continue;
      fi += obs.weight * ev.r.head(ev.dim).squaredNorm();
    }
    per_agent[i] = fi;
  }
  double f = 0.0;
  for (double fi : per_agent) f += fi;
  return {f, std::move(per_agent)};
}

// Unpartitioned problem: one global camera list plus observations that
// reference cameras by global index. The cameras/points stored here double
// as the ground-truth geometry for synthetic and BAL instances.
struct FlatProblem {
  std::vector<Pose> cameras;
  std::vector<CameraIntrinsics> intrinsics;  // one per camera
  std::vector<Eigen::Vector3d> points;

  struct Obs {
    int camera = 0;
    int point = 0;
    ObsKind kind = ObsKind::kReprojection;
    Eigen::Vector3d measurement = Eigen::Vector3d::Zero();
    double weight = 1.0;
  };
  std::vector<Obs> observations;
};

struct PartitionedProblem {
  ProblemInstance instance;
  State geometry;  // the flat cameras/points arranged in instance layout
  std::vector<std::pair<int, int>> camera_slot;  // camera -> (agent, pose_idx)
};

// Assigns cameras to agents uniformly at random under the seed (after dealing
// one camera to each agent so none is empty); observations follow their
// camera. Deterministic for a fixed seed.
inline PartitionedProblem partition_random(const FlatProblem& flat,
                                           int num_agents,
                                           std::uint64_t seed) {
  const int n_cam = static_cast<int>(flat.cameras.size());
  if (num_agents < 1 || num_agents > n_cam)
    throw std::invalid_argument(
        "number of agents must be in [1, number of cameras]");

  Rng rng(Rng::derive_seed(seed, 0x9a7));
  std::vector<int> owner(n_cam, -1);
  std::vector<int> order(n_cam);
  std::iota(order.begin(), order.end(), 0);
  for (int i = n_cam - 1; i > 0; --i)
    std::swap(order[i], order[rng.uniform_int(i + 1)]);
  for (int a = 0; a < num_agents; ++a) owner[order[a]] = a;
  for (int c = num_agents; c < n_cam; ++c)
    owner[order[c]] = static_cast<int>(rng.uniform_int(num_agents));

  std::vector<std::pair<int, int>> slot(n_cam);
  std::vector<AgentProblem> agents(num_agents);
  State geometry;
  geometry.poses.resize(num_agents);
  geometry.points = flat.points;
  for (int c = 0; c < n_cam; ++c) {  // ascending camera id within each agent
    const int a = owner[c];
    slot[c] = {a, static_cast<int>(agents[a].intrinsics.size())};
    agents[a].intrinsics.push_back(flat.intrinsics[c]);
    geometry.poses[a].push_back(flat.cameras[c]);
  }
  for (const auto& o : flat.observations) {
    const auto [a, j] = slot[o.camera];
    agents[a].observations.push_back(
        {j, o.point, o.kind, o.measurement, o.weight});
  }
  return {ProblemInstance(std::move(agents),
                          static_cast<int>(flat.points.size())),
          std::move(geometry), std::move(slot)};
}

// Gaussian perturbation of a state: rotations compose on the right with
// exp of an axis-angle draw, translations and points get iid offsets.
inline State perturb_state(const State& state, double sigma_rot_deg,
                           double sigma_pos_m, double sigma_point_m,
                           std::uint64_t seed) {
  if (sigma_rot_deg < 0 || sigma_pos_m < 0 || sigma_point_m < 0)
    throw std::invalid_argument("perturbation sigmas must be nonnegative");
  const double sigma_rot = sigma_rot_deg * M_PI / 180.0;
  Rng rng(Rng::derive_seed(seed, 0x5eed));
  State out = state;
  for (auto& agent_poses : out.poses) {
    for (Pose& pose : agent_poses) {
      if (sigma_rot > 0) {
        pose.rotation = pose.rotation * quat_exp(sigma_rot * rng.normal3());
        pose.rotation.normalize();
      }
      if (sigma_pos_m > 0) pose.translation += sigma_pos_m * rng.normal3();
    }
  }
  if (sigma_point_m > 0)
    for (auto& p : out.points) p += sigma_point_m * rng.normal3();
  return out;
}

struct SynthProblem {
  ProblemInstance instance;
  State ground_truth;
};

// Cameras on a ring looking at a point cloud in a unit box. Every generated
// observation has positive depth by construction; pixel noise is
// N(0, noise_px^2). Regenerates internally (bounded retries) until every
// point is observed at the requested density.
inline SynthProblem synth_generate(int n_cameras, int n_points, int n_agents,
                                   double observation_density, double noise_px,
                                   std::uint64_t seed) {
  if (n_cameras < 1 || n_points < 1)
    throw std::invalid_argument("need at least one camera and one point");
  if (!(observation_density > 0.0) || observation_density > 1.0)
    throw std::invalid_argument("observation density must be in (0, 1]");

  constexpr int kMaxAttempts = 32;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng(Rng::derive_seed(seed, 0x100 + attempt));
    FlatProblem flat;
    flat.points.reserve(n_points);
    for (int p = 0; p < n_points; ++p) {
      Eigen::Vector3d pt;
      pt << rng.uniform() - 0.5, rng.uniform() - 0.5, rng.uniform() - 0.5;
      flat.points.push_back(pt);
    }

    const double radius = 4.0;
    CameraIntrinsics intr;
    intr.fx = intr.fy = 500.0;
    for (int c = 0; c < n_cameras; ++c) {
      const double ang = 2.0 * M_PI * c / n_cameras;
      Eigen::Vector3d pos(radius * std::cos(ang), radius * std::sin(ang),
                          0.4 * (rng.uniform() - 0.5));
      // look-at frame: camera +z axis toward the box center
      const Eigen::Vector3d fwd = (-pos).normalized();
      Eigen::Vector3d up_hint = Eigen::Vector3d::UnitZ();
      Eigen::Vector3d right = up_hint.cross(fwd).normalized();
      Eigen::Vector3d down = fwd.cross(right);
      Eigen::Matrix3d R;  // world -> camera, rows are camera axes
      R.row(0) = right;
      R.row(1) = down;
      R.row(2) = fwd;
      Pose pose;
      pose.rotation = Eigen::Quaterniond(R).normalized();
      pose.translation = -(R * pos);
      flat.cameras.push_back(pose);
      flat.intrinsics.push_back(intr);
    }

    std::vector<char> covered(n_points, 0);
    bool depth_ok = true;
    for (int c = 0; c < n_cameras && depth_ok; ++c) {
      for (int p = 0; p < n_points; ++p) {
        if (observation_density < 1.0 && !rng.bernoulli(observation_density))
          continue;
        const Projection proj =
            project(flat.cameras[c], flat.intrinsics[c], flat.points[p]);
        if (!proj.valid) {
          depth_ok = false;
          break;
        }
        FlatProblem::Obs obs;
        obs.camera = c;
        obs.point = p;
        obs.measurement.head<2>() =
            proj.pixel + (noise_px > 0 ? (noise_px * rng.normal2()).eval()
                                       : Eigen::Vector2d::Zero().eval());
        flat.observations.push_back(obs);
        covered[p] = 1;
      }
    }
    if (!depth_ok) continue;
    if (!std::all_of(covered.begin(), covered.end(), [](char c) { return c; }))
      continue;

    PartitionedProblem part =
        partition_random(flat, n_agents, Rng::derive_seed(seed, 0x200));
    return {std::move(part.instance), std::move(part.geometry)};
  }
  throw std::runtime_error(
      "synth_generate: could not cover every point at the requested density");
}

}  // namespace larpg
