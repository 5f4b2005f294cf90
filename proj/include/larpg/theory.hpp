#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "larpg/coordinator.hpp"
#include "larpg/lazy_comm.hpp"
#include "larpg/local_model.hpp"
#include "larpg/problem.hpp"

namespace larpg {

// Parameters satisfying the descent-lemma chain:
//   0 < gamma < 1/sigma_p
//   beta_1 = (gamma - sigma_p gamma^2) / 2
//   beta_d < beta_{d-1} - gamma epsilon_{d-1} / 2   (d = 2..dbar)
//   beta_dbar > gamma epsilon_dbar / 2
struct DescentParams {
  double gamma = 0.0;
  double sigma_p = 0.0;
  std::vector<double> beta;
  std::vector<double> epsilon;
};

struct ParamRejection {
  std::string violated;  // the inequality that failed, human readable
};

struct AdmissibleResult {
  std::optional<DescentParams> params;
  std::optional<ParamRejection> rejection;

  bool accepted() const { return params.has_value(); }
};

// Sampled estimates of the analysis constants.
struct AssumptionEstimates {
  double mu = 0.0;       // min eigenvalue of the assembled M
  double L = 0.0;        // max eigenvalue of the assembled M
  double mu_p = 0.0;     // min eigenvalue over preconditioner blocks
  double sigma_p = 0.0;  // |S P|_P
  double c_g = 0.0;      // sampled pullback-gap lower bound
};

// V = f + sum_d beta_d * hist[d]; history entries missing at early
// iterations contribute zero.
inline double lyapunov(double f, const GradNormHistory& hist,
                       const std::vector<double>& beta) {
  double v = f;
  const int depth = std::min<int>(static_cast<int>(beta.size()), hist.size());
  for (int d = 1; d <= depth; ++d) v += beta[d - 1] * hist.at(d);
  return v;
}

// Builds the beta sequence for given (gamma, sigma_p, epsilon), spreading the
// feasibility margin evenly so every inequality is strict, or reports the
// first inequality the chain violates.
inline AdmissibleResult admissible_params(double gamma, double sigma_p,
                                          const std::vector<double>& epsilon) {
  AdmissibleResult out;
  for (double e : epsilon)
    if (e < 0.0) {
      out.rejection = {"epsilon_d >= 0"};
      return out;
    }
  const int dbar = static_cast<int>(epsilon.size());
  if (dbar < 1) {
    out.rejection = {"dbar >= 1"};
    return out;
  }
  if (!(gamma > 0.0) || !(gamma < 1.0 / sigma_p)) {
    out.rejection = {"0 < gamma < 1/sigma_p"};
    return out;
  }
  const double beta1 = (gamma - sigma_p * gamma * gamma) / 2.0;

  // Zero-slack chain: beta0_d = beta1 - gamma/2 * sum_{j<d} epsilon_j.
  double tail = beta1;
  for (int d = 2; d <= dbar; ++d) tail -= gamma * epsilon[d - 2] / 2.0;
  const double margin = tail - gamma * epsilon[dbar - 1] / 2.0;
  if (!(margin > 0.0)) {
    out.rejection = {dbar == 1
                         ? "epsilon_1 < 1 - sigma_p * gamma"
                         : "beta_dbar > gamma * epsilon_dbar / 2"};
    return out;
  }

  const double slack = margin / dbar;
  DescentParams params;
  params.gamma = gamma;
  params.sigma_p = sigma_p;
  params.epsilon = epsilon;
  params.beta.resize(dbar);
  params.beta[0] = beta1;
  for (int d = 2; d <= dbar; ++d)
    params.beta[d - 1] =
        params.beta[d - 2] - gamma * epsilon[d - 2] / 2.0 - slack;

  // Re-check the full chain independently of the construction.
  if (!(params.beta[dbar - 1] > gamma * epsilon[dbar - 1] / 2.0)) {
    out.rejection = {"beta_dbar > gamma * epsilon_dbar / 2"};
    return out;
  }
  for (int d = 2; d <= dbar; ++d)
    if (!(params.beta[d - 1] <
          params.beta[d - 2] - gamma * epsilon[d - 2] / 2.0)) {
      out.rejection = {"beta_d < beta_{d-1} - gamma * epsilon_{d-1} / 2"};
      return out;
    }
  out.params = std::move(params);
  return out;
}

// Largest epsilon (uniform over d) that admissible_params accepts at this
// gamma, scaled by `fraction` for strictness headroom.
inline std::vector<double> feasible_uniform_epsilon(double gamma,
                                                    double sigma_p, int dbar,
                                                    double fraction = 0.5) {
  const double bound = (1.0 - sigma_p * gamma) / dbar;
  return std::vector<double>(dbar, std::max(0.0, fraction * bound));
}

// |S P|_P, computed as the spectral norm of P^{1/2} S P^{1/2}. P is the
// block-diagonal preconditioner; S is the dense aggregated reduced Hessian.
inline double estimate_sigma_p(const Eigen::MatrixXd& s_dense,
                               const Preconditioner& precond) {
  constexpr int kMaxDim = 6000;
  const int n = static_cast<int>(s_dense.rows());
  if (n > kMaxDim)
    throw std::invalid_argument("estimate_sigma_p: beyond the dense guard");
  if (n != 3 * static_cast<int>(precond.blocks.size()) || s_dense.cols() != n)
    throw std::invalid_argument("estimate_sigma_p: dimension mismatch");

  Eigen::MatrixXd conj = s_dense;
  std::vector<Eigen::Matrix3d> sqrts(precond.blocks.size());
  for (std::size_t l = 0; l < precond.blocks.size(); ++l) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(precond.blocks[l]);
    sqrts[l] = eig.operatorSqrt();
  }
  for (std::size_t l = 0; l < precond.blocks.size(); ++l)
    conj.middleRows<3>(3 * l) = sqrts[l] * conj.middleRows<3>(3 * l);
  for (std::size_t l = 0; l < precond.blocks.size(); ++l)
    conj.middleCols<3>(3 * l) = conj.middleCols<3>(3 * l) * sqrts[l];
  conj = 0.5 * (conj + conj.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(conj,
                                                     Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

struct DescentCheck {
  std::vector<double> v;      // Lyapunov value per iteration
  std::vector<double> diffs;  // v[k+1] - v[k]
  bool ok = true;
  int first_violation = -1;
  double worst_violation = 0.0;
};

// Verifies V^{k+1} <= V^k (with relative slack 1e-10) over a recorded run.
// `f` has one entry per iteration including the final state; `what_normsq`
// entries beyond the last executed iteration are ignored.
inline DescentCheck check_descent(const std::vector<double>& f,
                                  const std::vector<double>& what_normsq,
                                  const std::vector<double>& beta) {
  DescentCheck out;
  const int n = static_cast<int>(f.size());
  const int dbar = static_cast<int>(beta.size());
  out.v.resize(n);
  for (int k = 0; k < n; ++k) {
    double v = f[k];
    for (int d = 1; d <= dbar && k - d >= 0; ++d)
      v += beta[d - 1] * what_normsq[k - d];
    out.v[k] = v;
  }
  out.diffs.resize(n > 0 ? n - 1 : 0);
  for (int k = 0; k + 1 < n; ++k) {
    out.diffs[k] = out.v[k + 1] - out.v[k];
    const double slack = 1e-10 * std::max(1.0, std::abs(out.v[k]));
    if (out.diffs[k] > slack) {
      out.ok = false;
      if (out.first_violation < 0) out.first_violation = k;
      out.worst_violation = std::max(out.worst_violation, out.diffs[k]);
    }
  }
  return out;
}

namespace detail {

// Applies a stacked tangent (all agents' pose tangents, then all points)
// through the retraction.
inline State retract_all(const ProblemInstance& instance, const State& state,
                         const Eigen::VectorXd& tangent) {
  State out = state;
  int off = 0;
  for (int i = 0; i < instance.num_agents(); ++i)
    for (auto& pose : out.poses[i]) {
      pose = se3_retract(
          pose, PoseTangent::from_vector(tangent.segment<6>(off)));
      off += 6;
    }
  for (auto& p : out.points) {
    p += tangent.segment<3>(off);
    off += 3;
  }
  return out;
}

inline Eigen::VectorXd stacked_gradient(const ProblemInstance& instance,
                                        const State& state) {
  // Gradients come out of linearize; lambda only shifts the quadratic term.
  int dim = 3 * instance.num_points();
  for (int i = 0; i < instance.num_agents(); ++i)
    dim += 6 * instance.agent(i).num_poses();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
  int off = 0;
  std::vector<LocalBlocks> blocks(instance.num_agents());
  for (int i = 0; i < instance.num_agents(); ++i) {
    blocks[i] = linearize(instance, i, state, 1.0);
    for (const Vector6d& gx : blocks[i].g_x) {
      g.segment<6>(off) = gx;
      off += 6;
    }
  }
  for (int i = 0; i < instance.num_agents(); ++i) {
    const auto& observed = instance.agent(i).observed_blocks;
    for (std::size_t k = 0; k < observed.size(); ++k)
      g.segment<3>(off + 3 * observed[k]) += blocks[i].g_y[k];
  }
  return g;
}

}  // namespace detail

// Diagnostic lower bound on the pullback smoothness constant c_g:
// max over sampled tangents of 2 |f(Retr(xi)) - f - <g, xi>| / |xi|^2.
inline double sample_pullback_gap(const ProblemInstance& instance,
                                  const State& state, int trials,
                                  double radius, std::uint64_t seed = 1234) {
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  if (!(radius > 0.0)) throw std::invalid_argument("radius must be positive");
  const double f0 = evaluate_cost(instance, state).first;
  const Eigen::VectorXd g = detail::stacked_gradient(instance, state);
  Rng rng(Rng::derive_seed(seed, 0xc6));
  double best = 0.0;
  for (int t = 0; t < trials; ++t) {
    Eigen::VectorXd dir = rng.normal_vector(g.size());
    const double norm = dir.norm();
    if (norm == 0.0) continue;
    dir *= radius / norm;
    const double f1 =
        evaluate_cost(instance, detail::retract_all(instance, state, dir))
            .first;
    const double gap = std::abs(f1 - f0 - g.dot(dir));
    best = std::max(best, 2.0 * gap / dir.squaredNorm());
  }
  return best;
}

// Dense A1-A3 constants at one iterate; desk scale only.
inline AssumptionEstimates estimate_assumptions(const ProblemInstance& instance,
                                                const State& state,
                                                double lambda,
                                                int gap_trials = 100,
                                                double gap_radius = 1e-4) {
  int pose_dim = 0;
  for (int i = 0; i < instance.num_agents(); ++i)
    pose_dim += 6 * instance.agent(i).num_poses();
  const int dim = pose_dim + 3 * instance.num_points();
  constexpr int kMaxDim = 6000;
  if (dim > kMaxDim)
    throw std::invalid_argument(
        "estimate_assumptions: beyond the dense guard");

  // Assemble the arrowhead M = [A C; C^T B] over all agents.
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::MatrixXd s_dense =
      Eigen::MatrixXd::Zero(3 * instance.num_points(), 3 * instance.num_points());
  std::vector<AgentDhat> contributions;
  std::vector<std::vector<Eigen::Matrix3d>> dhat(instance.num_agents());

  int pose_off = 0;
  for (int i = 0; i < instance.num_agents(); ++i) {
    const LocalBlocks lb = linearize(instance, i, state, lambda);
    const auto& observed = instance.agent(i).observed_blocks;
    for (int j = 0; j < lb.num_poses(); ++j)
      m.block<6, 6>(pose_off + 6 * j, pose_off + 6 * j) = lb.A[j];
    for (int l = 0; l < lb.num_blocks(); ++l) {
      const int gl = pose_dim + 3 * observed[l];
      m.block<3, 3>(gl, gl) += lb.B[l];
    }
    for (const auto& cb : lb.couplings) {
      const int row = pose_off + 6 * cb.pose;
      const int col = pose_dim + 3 * observed[cb.local];
      m.block<6, 3>(row, col) += cb.C;
      m.block<3, 6>(col, row) += cb.C.transpose();
    }
    const Eigen::MatrixXd si = dense_reduced_hessian(lb);
    for (int a = 0; a < lb.num_blocks(); ++a)
      for (int b = 0; b < lb.num_blocks(); ++b)
        s_dense.block<3, 3>(3 * observed[a], 3 * observed[b]) +=
            si.block<3, 3>(3 * a, 3 * b);
    const JacobiBlocks jb = jacobi_blocks(lb);
    dhat[i] = jb.blocks;
    pose_off += 6 * lb.num_poses();
  }
  for (int i = 0; i < instance.num_agents(); ++i)
    contributions.push_back({&instance.agent(i).observed_blocks, &dhat[i]});
  const Preconditioner precond =
      aggregate_precond(contributions, instance.num_points());

  AssumptionEstimates est;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m, Eigen::EigenvaluesOnly);
  est.mu = eig.eigenvalues().minCoeff();
  est.L = eig.eigenvalues().maxCoeff();
  est.mu_p = std::numeric_limits<double>::infinity();
  for (const auto& p : precond.blocks) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> pe(p,
                                                      Eigen::EigenvaluesOnly);
    est.mu_p = std::min(est.mu_p, pe.eigenvalues().minCoeff());
  }
  est.sigma_p = estimate_sigma_p(s_dense, precond);
  est.c_g = sample_pullback_gap(instance, state, gap_trials, gap_radius);
  return est;
}

}  // namespace larpg
