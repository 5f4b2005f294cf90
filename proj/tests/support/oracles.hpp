// Test-only oracles, kept independent of the implementation paths they
// check: numerical matrix exponential for the retraction, finite-difference
// gradients, dense quadratic-model assembly, and a monolithic (no-messaging)
// reference of the full iteration.
#pragma once

#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "larpg/local_model.hpp"
#include "larpg/problem.hpp"
#include "larpg/rng.hpp"

namespace larpg::testing {

// exp of a 4x4 twist via scaling and squaring with a long Taylor series.
inline Eigen::Matrix4d expm_se3(const PoseTangent& xi) {
  Eigen::Matrix4d twist = Eigen::Matrix4d::Zero();
  twist.topLeftCorner<3, 3>() = hat(xi.omega);
  twist.topRightCorner<3, 1>() = xi.vee;
  int squarings = 0;
  double scale = twist.norm();
  while (scale > 0.25) {
    scale *= 0.5;
    ++squarings;
  }
  const Eigen::Matrix4d a = twist / std::pow(2.0, squarings);
  Eigen::Matrix4d result = Eigen::Matrix4d::Identity();
  Eigen::Matrix4d term = Eigen::Matrix4d::Identity();
  for (int k = 1; k <= 20; ++k) {
    term = (term * a / k).eval();
    result += term;
  }
  for (int s = 0; s < squarings; ++s) result = (result * result).eval();
  return result;
}

inline Eigen::Matrix4d pose_matrix(const Pose& pose) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = pose.rotation.toRotationMatrix();
  m.topRightCorner<3, 1>() = pose.translation;
  return m;
}

inline Pose random_pose(Rng& rng, double rot_scale = 1.0,
                        double trans_scale = 1.0) {
  Pose pose;
  pose.rotation = quat_exp(rot_scale * rng.normal3());
  pose.rotation.normalize();
  pose.translation = trans_scale * rng.normal3();
  return pose;
}

// Central finite difference of a scalar function along one tangent basis
// direction of a pose.
template <typename F>
double fd_pose(const F& f, const Pose& pose, int coord, double h) {
  Vector6d e = Vector6d::Zero();
  e[coord] = h;
  const double fp = f(se3_retract(pose, PoseTangent::from_vector(e)));
  e[coord] = -h;
  const double fm = f(se3_retract(pose, PoseTangent::from_vector(e)));
  return (fp - fm) / (2.0 * h);
}

// Dense per-agent model pieces assembled directly from LocalBlocks, used to
// cross-check the sparse elimination routines.
struct DenseAgentModel {
  Eigen::MatrixXd a;   // 6n x 6n
  Eigen::MatrixXd b;   // 3L x 3L
  Eigen::MatrixXd c;   // 6n x 3L
  Eigen::VectorXd gx;  // 6n
  Eigen::VectorXd gy;  // 3L
};

inline DenseAgentModel dense_agent_model(const LocalBlocks& lb) {
  const int np = 6 * lb.num_poses();
  const int nl = 3 * lb.num_blocks();
  DenseAgentModel m;
  m.a = Eigen::MatrixXd::Zero(np, np);
  m.b = Eigen::MatrixXd::Zero(nl, nl);
  m.c = Eigen::MatrixXd::Zero(np, nl);
  m.gx = Eigen::VectorXd::Zero(np);
  m.gy = Eigen::VectorXd::Zero(nl);
  for (int j = 0; j < lb.num_poses(); ++j) {
    m.a.block<6, 6>(6 * j, 6 * j) = lb.A[j];
    m.gx.segment<6>(6 * j) = lb.g_x[j];
  }
  for (int l = 0; l < lb.num_blocks(); ++l) {
    m.b.block<3, 3>(3 * l, 3 * l) = lb.B[l];
    m.gy.segment<3>(3 * l) = lb.g_y[l];
  }
  for (const auto& cb : lb.couplings)
    m.c.block<6, 3>(6 * cb.pose, 3 * cb.local) += cb.C;
  return m;
}

// Quadratic model value m_i(u, v) for one agent, assembled densely.
inline double dense_model_value(const LocalBlocks& lb,
                                const Eigen::VectorXd& u,
                                const Eigen::VectorXd& v) {
  const DenseAgentModel m = dense_agent_model(lb);
  const double lin = m.gx.dot(u) + m.gy.dot(v);
  const double quad = u.dot(m.a * u) + 2.0 * u.dot(m.c * v) + v.dot(m.b * v);
  return lb.f_value + lin + 0.5 * quad;
}

// Closed-form reduced model h_i(v) for one agent via dense algebra.
inline double dense_reduced_value(const LocalBlocks& lb,
                                  const Eigen::VectorXd& v) {
  const DenseAgentModel m = dense_agent_model(lb);
  const Eigen::MatrixXd a_inv = m.a.inverse();
  const Eigen::VectorXd w = m.gy - m.c.transpose() * (a_inv * m.gx);
  const Eigen::MatrixXd s = m.b - m.c.transpose() * a_inv * m.c;
  return lb.f_value - 0.5 * m.gx.dot(a_inv * m.gx) + w.dot(v) +
         0.5 * v.dot(s * v);
}

// A small random BA fixture: poses near the synthetic ring with every point
// in front of every camera.
inline SynthProblem small_fixture(std::uint64_t seed, int n_cameras = 6,
                                  int n_points = 30, int n_agents = 3,
                                  double density = 1.0, double noise_px = 1.0) {
  return synth_generate(n_cameras, n_points, n_agents, density, noise_px,
                        seed);
}

// Monolithic reference of one LARPG run with full communication: same math,
// same summation orders, no caches, no triggers, no messages. Used to check
// that the lazy machinery at epsilon = 0, delta_p = 0 is bit-exact.
struct ReferenceResult {
  std::vector<State> states;  // state at the start of every iteration + final
  std::vector<double> costs;
};

inline ReferenceResult reference_full_comm_run(const ProblemInstance& instance,
                                               const State& init, double gamma,
                                               double lambda, int iters) {
  ReferenceResult out;
  State state = init;
  for (int k = 0; k < iters; ++k) {
    out.states.push_back(state);
    std::vector<LocalBlocks> blocks(instance.num_agents());
    double f = 0.0;
    for (int i = 0; i < instance.num_agents(); ++i) {
      blocks[i] = linearize(instance, i, state, lambda);
      f += blocks[i].f_value;
    }
    out.costs.push_back(f);

    // fresh block-Jacobi preconditioner
    std::vector<Eigen::Matrix3d> sum(instance.num_points(),
                                     Eigen::Matrix3d::Zero());
    for (int i = 0; i < instance.num_agents(); ++i) {
      const JacobiBlocks jb = jacobi_blocks(blocks[i]);
      const auto& observed = instance.agent(i).observed_blocks;
      for (std::size_t l = 0; l < observed.size(); ++l)
        sum[observed[l]] += jb.blocks[l];
    }
    std::vector<Eigen::Matrix3d> precond(instance.num_points());
    for (int l = 0; l < instance.num_points(); ++l) {
      Eigen::LLT<Eigen::Matrix3d> llt(sum[l]);
      precond[l] = llt.solve(Eigen::Matrix3d::Identity());
    }

    // fresh reduced gradient
    std::vector<Eigen::Vector3d> w(instance.num_points(),
                                   Eigen::Vector3d::Zero());
    for (int i = 0; i < instance.num_agents(); ++i) {
      const ReducedGradient rg = reduced_gradient(blocks[i]);
      const auto& observed = instance.agent(i).observed_blocks;
      for (std::size_t l = 0; l < observed.size(); ++l)
        w[observed[l]] += rg.blocks[l];
    }

    std::vector<Eigen::Vector3d> v(instance.num_points());
    for (int l = 0; l < instance.num_points(); ++l)
      v[l] = -gamma * (precond[l] * w[l]);

    for (int i = 0; i < instance.num_agents(); ++i) {
      const auto& observed = instance.agent(i).observed_blocks;
      std::vector<Eigen::Vector3d> v_local(observed.size());
      for (std::size_t idx = 0; idx < observed.size(); ++idx)
        v_local[idx] = v[observed[idx]];
      const auto u = private_update(blocks[i], v_local);
      for (std::size_t j = 0; j < u.size(); ++j)
        state.poses[i][j] = se3_retract(state.poses[i][j], u[j]);
    }
    for (int l = 0; l < instance.num_points(); ++l) state.points[l] += v[l];
  }
  out.states.push_back(state);
  return out;
}

inline bool states_bitwise_equal(const State& a, const State& b) {
  if (a.points.size() != b.points.size() || a.poses.size() != b.poses.size())
    return false;
  for (std::size_t l = 0; l < a.points.size(); ++l)
    if (a.points[l] != b.points[l]) return false;
  for (std::size_t i = 0; i < a.poses.size(); ++i) {
    if (a.poses[i].size() != b.poses[i].size()) return false;
    for (std::size_t j = 0; j < a.poses[i].size(); ++j) {
      if (a.poses[i][j].rotation.coeffs() != b.poses[i][j].rotation.coeffs())
        return false;
      if (a.poses[i][j].translation != b.poses[i][j].translation) return false;
    }
  }
  return true;
}

}  // namespace larpg::testing
