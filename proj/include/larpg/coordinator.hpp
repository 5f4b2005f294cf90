#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "larpg/geometry.hpp"

namespace larpg {

// Block-Jacobi preconditioner: one 3x3 SPD matrix per shared block,
// P_l = (sum_i D_hat_{i,l})^{-1}.
struct Preconditioner {
  std::vector<Eigen::Matrix3d> blocks;
};

struct SharedStep {
  std::vector<Eigen::Vector3d> v;  // per shared block
  double gradsq = 0.0;             // |w_hat|^2_P, broadcast into the history
};

// One agent's D_hat contribution: values indexed like `blocks`.
struct AgentDhat {
  const std::vector<int>* blocks = nullptr;           // L_i, sorted point ids
  const std::vector<Eigen::Matrix3d>* values = nullptr;
};

namespace detail {

inline Eigen::Matrix3d invert_spd_block(const Eigen::Matrix3d& sum, int block) {
  Eigen::LLT<Eigen::Matrix3d> llt(sum);
  bool ok = llt.info() == Eigen::Success;
  if (ok) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(sum,
                                                       Eigen::EigenvaluesOnly);
    ok = eig.eigenvalues().minCoeff() >= 1e-12;
  }
  if (!ok) {
    const Eigen::Matrix3d jittered =
        sum + (1e-9 * sum.trace() / 3.0) * Eigen::Matrix3d::Identity();
    Eigen::LLT<Eigen::Matrix3d> retry(jittered);
    if (retry.info() != Eigen::Success)
      throw std::runtime_error(
          "aggregate_precond: block " + std::to_string(block) +
          " is not positive definite even after jitter");
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(jittered,
                                                       Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < 1e-12)
      throw std::runtime_error(
          "aggregate_precond: block " + std::to_string(block) +
          " stays near-singular after jitter");
    return retry.solve(Eigen::Matrix3d::Identity());
  }
  return llt.solve(Eigen::Matrix3d::Identity());
}

}  // namespace detail

// Sums the per-agent lazy Jacobi blocks in ascending agent order and inverts
// each 3x3 block. Near-singular blocks get one jitter retry; a block covered
// by no agent is impossible by problem construction.
inline Preconditioner aggregate_precond(const std::vector<AgentDhat>& agents,
                                        int num_points) {
  std::vector<Eigen::Matrix3d> sum(num_points, Eigen::Matrix3d::Zero());
  std::vector<char> covered(num_points, 0);
  for (const AgentDhat& agent : agents) {
    for (std::size_t k = 0; k < agent.blocks->size(); ++k) {
      const int l = (*agent.blocks)[k];
      sum[l] += (*agent.values)[k];
      covered[l] = 1;
    }
  }
  Preconditioner out;
  out.blocks.resize(num_points);
  for (int l = 0; l < num_points; ++l) {
    if (!covered[l])
      throw std::logic_error("aggregate_precond: block " + std::to_string(l) +
                             " covered by no agent");
    out.blocks[l] = detail::invert_spd_block(sum[l], l);
  }
  return out;
}

// v_l = -gamma P_l w_hat_l; gradsq accumulates |w_hat|^2_P in block order.
inline SharedStep compute_step(const std::vector<Eigen::Vector3d>& what,
                               const Preconditioner& precond, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
  if (what.size() != precond.blocks.size())
    throw std::invalid_argument("compute_step: block count mismatch");
  SharedStep out;
  out.v.resize(what.size());
  for (std::size_t l = 0; l < what.size(); ++l) {
    const Eigen::Vector3d pw = precond.blocks[l] * what[l];
    out.v[l] = -gamma * pw;
    out.gradsq += what[l].dot(pw);
  }
  return out;
}

// Retraction on the shared variable; vector addition for Euclidean blocks.
inline void apply_shared_step(std::vector<Eigen::Vector3d>& y,
                              const std::vector<Eigen::Vector3d>& v) {
  if (y.size() != v.size())
    throw std::invalid_argument("apply_shared_step: block count mismatch");
  for (std::size_t l = 0; l < y.size(); ++l) y[l] += v[l];
}

}  // namespace larpg
