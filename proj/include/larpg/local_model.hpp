#pragma once

#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "larpg/problem.hpp"

namespace larpg {

// One agent's linearization at the current iterate. A is block-diagonal over
// the agent's poses (6x6 per pose), B carries one 3x3 block per observed
// point, and C holds one 6x3 coupling block per (pose, observed point) pair
// that appears in an observation. All blocks follow the convention
//   m(u, v) = f + <g, (u,v)> + 1/2 <(u,v), M (u,v)>,
// i.e. g is the exact gradient of f and M accumulates 2*w*J^T J plus the
// lambda damping on the A and B diagonals.
struct LocalBlocks {
  double lambda = 0.0;
  double f_value = 0.0;  // weighted cost at the linearization point

  std::vector<Matrix6d> A;                      // per pose
  std::vector<Eigen::LLT<Matrix6d>> A_llt;      // factorization cache
  std::vector<Vector6d> g_x;                    // per pose
  std::vector<Eigen::Matrix3d> B;               // per observed block (local)
  std::vector<Eigen::Vector3d> g_y;             // per observed block (local)

  struct CouplingBlock {
    int pose = 0;
    int local = 0;  // index into the agent's observed_blocks
    Matrix63 C = Matrix63::Zero();
  };
  std::vector<CouplingBlock> couplings;      // sorted by (pose, local)
  std::vector<std::vector<int>> by_local;    // local -> coupling idx, pose asc
  std::vector<std::vector<int>> by_pose;     // pose -> coupling idx, local asc

  int num_poses() const { return static_cast<int>(A.size()); }
  int num_blocks() const { return static_cast<int>(B.size()); }
};

// Reduced gradient w_i, one 3-vector per observed block.
struct ReducedGradient {
  std::vector<Eigen::Vector3d> blocks;
};

// Diagonal blocks S_{i,l} of the reduced Hessian, keyed by observed block.
struct JacobiBlocks {
  std::vector<Eigen::Matrix3d> blocks;
};

// Builds the quadratic model of one agent's cost. Invalid projections are
// skipped (zero residual, zero Jacobian); poses without observations get the
// pure damping block lambda*I.
inline LocalBlocks linearize(const ProblemInstance& instance, int agent_id,
                             const State& state, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  instance.check_state(state);
  const AgentProblem& agent = instance.agent(agent_id);
  const std::vector<Pose>& poses = state.poses[agent_id];

  LocalBlocks lb;
  lb.lambda = lambda;
  lb.A.assign(agent.num_poses(), lambda * Matrix6d::Identity());
  lb.g_x.assign(agent.num_poses(), Vector6d::Zero());
  lb.B.assign(agent.num_observed(), lambda * Eigen::Matrix3d::Identity());
  lb.g_y.assign(agent.num_observed(), Eigen::Vector3d::Zero());
  lb.by_local.resize(agent.num_observed());
  lb.by_pose.resize(agent.num_poses());

  // Observations are sorted by (pose, point), so equal (pose, local) pairs
  // are consecutive and couplings can be accumulated in order.
  for (const Observation& obs : agent.observations) {
    const Pose& pose = poses[obs.pose_idx];
    const CameraIntrinsics& intr = agent.intrinsics[obs.pose_idx];
    const Eigen::Vector3d& point = state.points[obs.point_id];
    const int local = agent.local_block(obs.point_id);

    Matrix36 jx = Matrix36::Zero();
    Eigen::Matrix3d jy = Eigen::Matrix3d::Zero();
    Eigen::Vector3d r = Eigen::Vector3d::Zero();
    int dim = 0;
    if (obs.kind == ObsKind::kReprojection) {
      const Projection proj = project(pose, intr, point);
      if (!proj.valid) continue;
      r.head<2>() = obs.measurement.head<2>() - proj.pixel;
      lb.f_value += obs.weight * r.head<2>().squaredNorm();
      const ProjectionJacobians J = project_jacobians(pose, intr, point);
      jx.topRows<2>() = J.j_pose;
      jy.topRows<2>() = J.j_point;
      dim = 2;
    } else {
      const Eigen::Matrix3d R = pose.rotation.toRotationMatrix();
      r = point - (R * obs.measurement + pose.translation);
      lb.f_value += obs.weight * r.squaredNorm();
      jx.leftCols<3>() = R * hat(obs.measurement);
      jx.rightCols<3>() = -R;
      jy.setIdentity();
      dim = 3;
    }

    const double s = 2.0 * obs.weight;
    const auto jx_d = jx.topRows(dim);
    const auto jy_d = jy.topRows(dim);
    const auto r_d = r.head(dim);
    lb.A[obs.pose_idx].noalias() += s * jx_d.transpose() * jx_d;
    lb.g_x[obs.pose_idx].noalias() += s * jx_d.transpose() * r_d;
    lb.B[local].noalias() += s * jy_d.transpose() * jy_d;
    lb.g_y[local].noalias() += s * jy_d.transpose() * r_d;

    if (!lb.couplings.empty() && lb.couplings.back().pose == obs.pose_idx &&
        lb.couplings.back().local == local) {
      lb.couplings.back().C.noalias() += s * jx_d.transpose() * jy_d;
    } else {
      LocalBlocks::CouplingBlock cb;
      cb.pose = obs.pose_idx;
      cb.local = local;
      cb.C = s * jx_d.transpose() * jy_d;
      lb.couplings.push_back(cb);
    }
  }

  for (int e = 0; e < static_cast<int>(lb.couplings.size()); ++e) {
    lb.by_local[lb.couplings[e].local].push_back(e);
    lb.by_pose[lb.couplings[e].pose].push_back(e);
  }
  lb.A_llt.reserve(lb.A.size());
  for (const Matrix6d& a : lb.A) lb.A_llt.emplace_back(a);
  return lb;
}

// w_{i,l} = g_{iy,l} - sum_j C_{j,l}^T A_j^{-1} g_{ix,j}, exploiting the
// per-pose block-diagonal structure of A_i.
inline ReducedGradient reduced_gradient(const LocalBlocks& lb) {
  std::vector<Vector6d> ainv_gx(lb.num_poses());
  for (int j = 0; j < lb.num_poses(); ++j)
    ainv_gx[j] = lb.A_llt[j].solve(lb.g_x[j]);

  ReducedGradient out;
  out.blocks.resize(lb.num_blocks());
  for (int l = 0; l < lb.num_blocks(); ++l) {
    Eigen::Vector3d w = lb.g_y[l];
    for (int e : lb.by_local[l])
      w.noalias() -= lb.couplings[e].C.transpose() * ainv_gx[lb.couplings[e].pose];
    out.blocks[l] = w;
  }
  return out;
}

// S_{i,l} = B_{i,l} - sum_j C_{j,l}^T A_j^{-1} C_{j,l}.
inline JacobiBlocks jacobi_blocks(const LocalBlocks& lb) {
  JacobiBlocks out;
  out.blocks.resize(lb.num_blocks());
  for (int l = 0; l < lb.num_blocks(); ++l) {
    Eigen::Matrix3d s = lb.B[l];
    for (int e : lb.by_local[l]) {
      const Matrix63& c = lb.couplings[e].C;
      s.noalias() -= c.transpose() * lb.A_llt[lb.couplings[e].pose].solve(c);
    }
    out.blocks[l] = 0.5 * (s + s.transpose());
  }
  return out;
}

// Eliminated private update u_j = -A_j^{-1} (sum_l C_{j,l} v_l + g_{x,j}).
// `v_local` provides one 3-vector per observed block, in local order.
inline std::vector<PoseTangent> private_update(
    const LocalBlocks& lb, const std::vector<Eigen::Vector3d>& v_local) {
  if (static_cast<int>(v_local.size()) != lb.num_blocks())
    throw std::invalid_argument("private_update: v size mismatch");
  std::vector<PoseTangent> out(lb.num_poses());
  for (int j = 0; j < lb.num_poses(); ++j) {
    Vector6d rhs = lb.g_x[j];
    for (int e : lb.by_pose[j])
      rhs.noalias() += lb.couplings[e].C * v_local[lb.couplings[e].local];
    out[j] = PoseTangent::from_vector((-lb.A_llt[j].solve(rhs)).eval());
  }
  return out;
}

// Full reduced Hessian S_i = B_i - C_i^T A_i^{-1} C_i over 3*|L_i| dims.
// Used by tests and the theory module only; guarded to desk scale.
inline Eigen::MatrixXd dense_reduced_hessian(const LocalBlocks& lb) {
  constexpr int kMaxBlocks = 2000;
  if (lb.num_blocks() > kMaxBlocks)
    throw std::invalid_argument(
        "dense_reduced_hessian: instance exceeds the dense-storage guard");
  const int n = 3 * lb.num_blocks();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
  for (int l = 0; l < lb.num_blocks(); ++l)
    s.block<3, 3>(3 * l, 3 * l) = lb.B[l];
  for (int j = 0; j < lb.num_poses(); ++j) {
    for (int e2 : lb.by_pose[j]) {
      const auto& c2 = lb.couplings[e2];
      const Matrix63 ainv_c2 = lb.A_llt[j].solve(c2.C);
      for (int e1 : lb.by_pose[j]) {
        const auto& c1 = lb.couplings[e1];
        s.block<3, 3>(3 * c1.local, 3 * c2.local).noalias() -=
            c1.C.transpose() * ainv_c2;
      }
    }
  }
  return 0.5 * (s + s.transpose());
}

}  // namespace larpg
