#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SVD>

#include "larpg/problem.hpp"

namespace larpg {

struct MetricsReport {
  double ate_rmse = 0.0;
  double mean_reproj = 0.0;
  std::uint64_t total_upload_bytes = 0;
  std::uint64_t total_broadcast_bytes = 0;
};

struct Sim3 {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return scale * (rotation * p) + translation;
  }
};

// Least-squares similarity transform minimizing sum |gt - (s R est + t)|^2
// (Umeyama's closed form via SVD of the cross-covariance).
inline Sim3 umeyama_sim3(const std::vector<Eigen::Vector3d>& est,
                         const std::vector<Eigen::Vector3d>& gt) {
  const std::size_t n = est.size();
  if (n != gt.size() || n < 3)
    throw std::invalid_argument("umeyama_sim3: need >= 3 matched points");

  Eigen::Vector3d mean_est = Eigen::Vector3d::Zero();
  Eigen::Vector3d mean_gt = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mean_est += est[i];
    mean_gt += gt[i];
  }
  mean_est /= static_cast<double>(n);
  mean_gt /= static_cast<double>(n);

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  double var_est = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d de = est[i] - mean_est;
    cov += (gt[i] - mean_gt) * de.transpose();
    var_est += de.squaredNorm();
  }
  cov /= static_cast<double>(n);
  var_est /= static_cast<double>(n);

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d d = svd.singularValues();
  // Rotation is only determined when the cloud spans >= 2 directions.
  if (!(var_est > 0.0) || d[1] <= 1e-12 * std::max(1.0, d[0]))
    throw std::invalid_argument(
        "umeyama_sim3: degenerate (collinear or coincident) configuration");

  Eigen::Vector3d s = Eigen::Vector3d::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0)
    s[2] = -1.0;

  Sim3 out;
  out.rotation =
      svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  out.scale = d.dot(s) / var_est;
  out.translation = mean_gt - out.scale * (out.rotation * mean_est);
  return out;
}

// RMSE of camera positions after Sim(3) alignment of the estimated centers
// onto the ground-truth centers.
inline double ate_rmse(const std::vector<Eigen::Vector3d>& est,
                       const std::vector<Eigen::Vector3d>& gt) {
  const Sim3 align = umeyama_sim3(est, gt);
  double sq = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i)
    sq += (gt[i] - align.apply(est[i])).squaredNorm();
  return std::sqrt(sq / static_cast<double>(est.size()));
}

inline std::vector<Eigen::Vector3d> camera_centers(const State& state) {
  std::vector<Eigen::Vector3d> centers;
  centers.reserve(state.num_cameras());
  for (const auto& agent_poses : state.poses)
    for (const Pose& pose : agent_poses) centers.push_back(pose.center());
  return centers;
}

inline double ate_rmse(const State& est, const State& gt) {
  return ate_rmse(camera_centers(est), camera_centers(gt));
}

// Mean over valid reprojection observations of |q - pi(T, y)|, unweighted
// and unsquared. Point3d factors are not pixel errors and are excluded.
inline double mean_reproj(const ProblemInstance& instance, const State& state) {
  double sum = 0.0;
  std::int64_t count = 0;
  for (int i = 0; i < instance.num_agents(); ++i) {
    const AgentProblem& agent = instance.agent(i);
    for (const Observation& obs : agent.observations) {
      if (obs.kind != ObsKind::kReprojection) continue;
      const Projection proj =
          project(state.poses[i][obs.pose_idx], agent.intrinsics[obs.pose_idx],
                  state.points[obs.point_id]);
      if (!proj.valid) continue;
      sum += (obs.measurement.head<2>() - proj.pixel).norm();
      ++count;
    }
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace larpg
