#include "larpg/local_model.hpp"

#include <gtest/gtest.h>

#include "support/oracles.hpp"

namespace larpg {
namespace {

using testing::dense_agent_model;
using testing::dense_model_value;
using testing::dense_reduced_value;
using testing::small_fixture;

State perturbed_fixture_state(const SynthProblem& synth, std::uint64_t seed) {
  return perturb_state(synth.ground_truth, 2.0, 0.05, 0.02, seed);
}

TEST(Linearize, UnobservedPoseIsPureDamping) {
  // agent with two poses, second pose has no observations
  CameraIntrinsics intr;
  intr.fx = intr.fy = 100.0;
  AgentProblem agent;
  agent.intrinsics = {intr, intr};
  Observation obs;
  obs.pose_idx = 0;
  obs.point_id = 0;
  obs.measurement << 1.0, 2.0, 0.0;
  agent.observations = {obs};
  ProblemInstance instance({agent}, 1);
  State state;
  state.poses = {{Pose{}, Pose{}}};
  state.points = {Eigen::Vector3d(0.0, 0.0, 2.0)};

  const double lambda = 10.0;
  const LocalBlocks lb = linearize(instance, 0, state, lambda);
  EXPECT_EQ(lb.A[1], (lambda * Matrix6d::Identity()).eval());
  EXPECT_EQ(lb.g_x[1], Vector6d::Zero().eval());
}

TEST(Linearize, RejectsNonPositiveLambda) {
  const SynthProblem synth = small_fixture(1);
  EXPECT_THROW(linearize(synth.instance, 0, synth.ground_truth, 0.0),
               std::invalid_argument);
}

TEST(Linearize, GradientMatchesFiniteDifferences) {
  const SynthProblem synth = small_fixture(61, 4, 12, 2);
  const State state = perturbed_fixture_state(synth, 5);
  const double h = 1e-6;

  for (int i = 0; i < synth.instance.num_agents(); ++i) {
    const LocalBlocks lb = linearize(synth.instance, i, state, 1.0);
    const auto cost_at = [&](const State& s) {
      return evaluate_cost(synth.instance, s).second[i];
    };

    // pose gradient
    for (int j = 0; j < lb.num_poses(); ++j) {
      Vector6d fd;
      for (int c = 0; c < 6; ++c) {
        Vector6d e = Vector6d::Zero();
        e[c] = h;
        State sp = state;
        sp.poses[i][j] =
            se3_retract(state.poses[i][j], PoseTangent::from_vector(e));
        e[c] = -h;
        State sm = state;
        sm.poses[i][j] =
            se3_retract(state.poses[i][j], PoseTangent::from_vector(e));
        fd[c] = (cost_at(sp) - cost_at(sm)) / (2.0 * h);
      }
      EXPECT_LT((lb.g_x[j] - fd).norm() / std::max(1.0, lb.g_x[j].norm()),
                1e-5);
    }
    // point gradient
    const auto& observed = synth.instance.agent(i).observed_blocks;
    for (std::size_t k = 0; k < observed.size(); ++k) {
      Eigen::Vector3d fd;
      for (int c = 0; c < 3; ++c) {
        State sp = state;
        sp.points[observed[k]][c] += h;
        State sm = state;
        sm.points[observed[k]][c] -= h;
        fd[c] = (cost_at(sp) - cost_at(sm)) / (2.0 * h);
      }
      EXPECT_LT((lb.g_y[k] - fd).norm() / std::max(1.0, lb.g_y[k].norm()),
                1e-5);
    }
  }
}

TEST(Linearize, QuadraticModelMatchesWeightedLeastSquares) {
  // m(u, v) - f must equal sum w |r - J delta|^2 - sum w |r|^2 plus the
  // damping lambda/2 |delta|^2, given the 2wJ^T J block convention.
  const SynthProblem synth = small_fixture(67, 3, 8, 1);
  const State state = perturbed_fixture_state(synth, 7);
  const double lambda = 5.0;
  const LocalBlocks lb = linearize(synth.instance, 0, state, lambda);
  const testing::DenseAgentModel m = dense_agent_model(lb);

  Rng rng(71);
  const Eigen::VectorXd u = 1e-3 * rng.normal_vector(m.gx.size());
  const Eigen::VectorXd v = 1e-3 * rng.normal_vector(m.gy.size());

  double expected = lambda / 2.0 * (u.squaredNorm() + v.squaredNorm());
  const AgentProblem& agent = synth.instance.agent(0);
  for (const Observation& obs : agent.observations) {
    const Pose& pose = state.poses[0][obs.pose_idx];
    const auto& intr = agent.intrinsics[obs.pose_idx];
    const Eigen::Vector3d& point = state.points[obs.point_id];
    const Projection proj = project(pose, intr, point);
    ASSERT_TRUE(proj.valid);
    const Eigen::Vector2d r = obs.measurement.head<2>() - proj.pixel;
    const ProjectionJacobians J = project_jacobians(pose, intr, point);
    const int local = agent.local_block(obs.point_id);
    const Eigen::Vector2d lin = r + J.j_pose * u.segment<6>(6 * obs.pose_idx) +
                                J.j_point * v.segment<3>(3 * local);
    expected += obs.weight * lin.squaredNorm();
  }
  const double model = dense_model_value(lb, u, v);
  EXPECT_NEAR(model, expected, 1e-9 * std::max(1.0, std::abs(expected)));
}

TEST(ReducedGradientOp, ZeroPoseGradientPassesThrough) {
  const SynthProblem synth = small_fixture(73, 3, 10, 1);
  LocalBlocks lb = linearize(synth.instance, 0, synth.ground_truth, 1.0);
  for (auto& g : lb.g_x) g.setZero();
  const ReducedGradient rg = reduced_gradient(lb);
  for (int l = 0; l < lb.num_blocks(); ++l) EXPECT_EQ(rg.blocks[l], lb.g_y[l]);
}

TEST(ReducedGradientOp, MatchesDenseElimination) {
  const SynthProblem synth = small_fixture(79, 3, 10, 1);
  const State state = perturbed_fixture_state(synth, 11);
  const LocalBlocks lb = linearize(synth.instance, 0, state, 100.0);
  const ReducedGradient rg = reduced_gradient(lb);
  const testing::DenseAgentModel m = dense_agent_model(lb);
  const Eigen::VectorXd w_dense = m.gy - m.c.transpose() * m.a.inverse() * m.gx;
  for (int l = 0; l < lb.num_blocks(); ++l)
    EXPECT_LT((rg.blocks[l] - w_dense.segment<3>(3 * l)).norm(),
              1e-10 * std::max(1.0, w_dense.norm()));
}

TEST(ReducedGradientOp, SingleObservationScalarOracle) {
  CameraIntrinsics intr;
  intr.fx = intr.fy = 80.0;
  AgentProblem agent;
  agent.intrinsics = {intr};
  Observation obs;
  obs.measurement << 3.0, -2.0, 0.0;
  obs.weight = 1.5;
  agent.observations = {obs};
  ProblemInstance instance({agent}, 1);
  State state;
  state.poses = {{Pose{}}};
  state.points = {Eigen::Vector3d(0.05, -0.02, 1.5)};

  const double lambda = 7.0;
  const LocalBlocks lb = linearize(instance, 0, state, lambda);
  const ReducedGradient rg = reduced_gradient(lb);

  const ProjectionJacobians J =
      project_jacobians(Pose{}, intr, state.points[0]);
  const Eigen::Vector2d r =
      obs.measurement.head<2>() - project(Pose{}, intr, state.points[0]).pixel;
  const double s = 2.0 * obs.weight;
  const Matrix6d a =
      lambda * Matrix6d::Identity() + s * J.j_pose.transpose() * J.j_pose;
  const Eigen::Vector3d expected =
      s * J.j_point.transpose() * r -
      (s * J.j_pose.transpose() * J.j_point).transpose() *
          a.ldlt().solve(s * J.j_pose.transpose() * r);
  EXPECT_LT((rg.blocks[0] - expected).norm(), 1e-10);
}

TEST(JacobiBlocksOp, MatchesDenseSchurDiagonal) {
  const SynthProblem synth = small_fixture(83, 3, 10, 1);
  const State state = perturbed_fixture_state(synth, 13);
  const LocalBlocks lb = linearize(synth.instance, 0, state, 100.0);
  const JacobiBlocks jb = jacobi_blocks(lb);
  const testing::DenseAgentModel m = dense_agent_model(lb);
  const Eigen::MatrixXd s_dense = m.b - m.c.transpose() * m.a.inverse() * m.c;
  for (int l = 0; l < lb.num_blocks(); ++l)
    EXPECT_LT((jb.blocks[l] - s_dense.block<3, 3>(3 * l, 3 * l)).norm(),
              1e-10 * std::max(1.0, s_dense.norm()));
}

TEST(JacobiBlocksOp, SymmetricOutput) {
  const SynthProblem synth = small_fixture(89, 4, 14, 2);
  const State state = perturbed_fixture_state(synth, 17);
  for (int i = 0; i < 2; ++i) {
    const JacobiBlocks jb =
        jacobi_blocks(linearize(synth.instance, i, state, 1.0));
    for (const auto& s : jb.blocks)
      EXPECT_LT((s - s.transpose()).norm(), 1e-12);
  }
}

TEST(JacobiBlocksOp, LargeLambdaKillsElimination) {
  const SynthProblem synth = small_fixture(97, 3, 10, 1);
  const State state = perturbed_fixture_state(synth, 19);
  const LocalBlocks lb = linearize(synth.instance, 0, state, 1e12);
  const JacobiBlocks jb = jacobi_blocks(lb);
  for (int l = 0; l < lb.num_blocks(); ++l)
    EXPECT_LT((jb.blocks[l] - lb.B[l]).norm() / lb.B[l].norm(), 1e-4);
}

TEST(JacobiBlocksOp, KeyedExactlyByObservedBlocks) {
  const SynthProblem synth = small_fixture(101, 10, 40, 3, 0.5);
  const State state = synth.ground_truth;
  for (int i = 0; i < synth.instance.num_agents(); ++i) {
    const LocalBlocks lb = linearize(synth.instance, i, state, 1.0);
    const JacobiBlocks jb = jacobi_blocks(lb);
    const ReducedGradient rg = reduced_gradient(lb);
    EXPECT_EQ(static_cast<int>(jb.blocks.size()),
              synth.instance.agent(i).num_observed());
    EXPECT_EQ(static_cast<int>(rg.blocks.size()),
              synth.instance.agent(i).num_observed());
  }
}

TEST(PrivateUpdate, StationaryAtZero) {
  const SynthProblem synth = small_fixture(103, 3, 10, 1);
  LocalBlocks lb = linearize(synth.instance, 0, synth.ground_truth, 1.0);
  for (auto& g : lb.g_x) g.setZero();
  const std::vector<Eigen::Vector3d> v(lb.num_blocks(),
                                       Eigen::Vector3d::Zero());
  for (const PoseTangent& u : private_update(lb, v))
    EXPECT_EQ(u.as_vector(), Vector6d::Zero().eval());
}

TEST(PrivateUpdate, ModelGradientVanishesAtMinimizer) {
  const SynthProblem synth = small_fixture(107, 3, 10, 1);
  const State state = perturbed_fixture_state(synth, 23);
  const LocalBlocks lb = linearize(synth.instance, 0, state, 50.0);
  const testing::DenseAgentModel m = dense_agent_model(lb);

  Rng rng(109);
  for (int t = 0; t < 20; ++t) {
    std::vector<Eigen::Vector3d> v(lb.num_blocks());
    Eigen::VectorXd v_stacked(3 * lb.num_blocks());
    for (int l = 0; l < lb.num_blocks(); ++l) {
      v[l] = 0.01 * rng.normal3();
      v_stacked.segment<3>(3 * l) = v[l];
    }
    const std::vector<PoseTangent> u = private_update(lb, v);
    Eigen::VectorXd u_stacked(6 * lb.num_poses());
    for (int j = 0; j < lb.num_poses(); ++j)
      u_stacked.segment<6>(6 * j) = u[j].as_vector();
    // gradient of the model in u: g_x + A u + C v
    const Eigen::VectorXd grad = m.gx + m.a * u_stacked + m.c * v_stacked;
    EXPECT_LT(grad.norm() / std::max(1.0, m.gx.norm()), 1e-9);
  }
}

TEST(PrivateUpdate, Lemma1Identity) {
  // m(u*(v), v) equals the closed-form reduced model h(v)
  const SynthProblem synth = small_fixture(113, 4, 12, 2);
  const State state = perturbed_fixture_state(synth, 29);
  Rng rng(127);
  for (int i = 0; i < synth.instance.num_agents(); ++i) {
    const LocalBlocks lb = linearize(synth.instance, i, state, 20.0);
    for (int t = 0; t < 100; ++t) {
      std::vector<Eigen::Vector3d> v(lb.num_blocks());
      Eigen::VectorXd v_stacked(3 * lb.num_blocks());
      for (int l = 0; l < lb.num_blocks(); ++l) {
        v[l] = 0.05 * rng.normal3();
        v_stacked.segment<3>(3 * l) = v[l];
      }
      const std::vector<PoseTangent> u = private_update(lb, v);
      Eigen::VectorXd u_stacked(6 * lb.num_poses());
      for (int j = 0; j < lb.num_poses(); ++j)
        u_stacked.segment<6>(6 * j) = u[j].as_vector();

      const double lhs = dense_model_value(lb, u_stacked, v_stacked);
      const double rhs = dense_reduced_value(lb, v_stacked);
      EXPECT_LT(std::abs(lhs - rhs) / std::max(1.0, std::abs(rhs)), 1e-9);
    }
  }
}

TEST(DenseReducedHessianOp, DiagonalEqualsJacobiBlocks) {
  const SynthProblem synth = small_fixture(131, 3, 10, 1);
  const State state = perturbed_fixture_state(synth, 31);
  const LocalBlocks lb = linearize(synth.instance, 0, state, 10.0);
  const Eigen::MatrixXd s = dense_reduced_hessian(lb);
  const JacobiBlocks jb = jacobi_blocks(lb);
  for (int l = 0; l < lb.num_blocks(); ++l)
    EXPECT_LT((s.block<3, 3>(3 * l, 3 * l) - jb.blocks[l]).norm(), 1e-10);
}

TEST(DenseReducedHessianOp, SymmetricPositiveSemiDefinite) {
  const SynthProblem synth = small_fixture(137, 4, 12, 2);
  const State state = perturbed_fixture_state(synth, 37);
  for (int i = 0; i < 2; ++i) {
    const Eigen::MatrixXd s =
        dense_reduced_hessian(linearize(synth.instance, i, state, 1.0));
    EXPECT_LT((s - s.transpose()).norm(), 1e-10);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s,
                                                       Eigen::EigenvaluesOnly);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-9);
  }
}

TEST(DenseReducedHessianOp, MatchesFullDenseSchur) {
  const SynthProblem synth = small_fixture(139, 3, 10, 1);
  const State state = perturbed_fixture_state(synth, 41);
  const LocalBlocks lb = linearize(synth.instance, 0, state, 100.0);
  const testing::DenseAgentModel m = dense_agent_model(lb);
  const Eigen::MatrixXd expected = m.b - m.c.transpose() * m.a.inverse() * m.c;
  EXPECT_LT((dense_reduced_hessian(lb) - expected).norm(),
            1e-10 * std::max(1.0, expected.norm()));
}

}  // namespace
}  // namespace larpg
