#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <thread>
#include <variant>
#include <vector>

#include "larpg/coordinator.hpp"
#include "larpg/lazy_comm.hpp"
#include "larpg/local_model.hpp"
#include "larpg/problem.hpp"

namespace larpg {

// Wire messages of the simulated network. Uplink carries per-block payloads
// with a 4-byte block index; symmetric 3x3 blocks travel as 6 unique reals.
struct PrecondUpload {
  int agent = 0;
  int block = 0;
};
struct GradUpload {
  int agent = 0;
  int block = 0;
};
struct PrecondDelta {
  int block = 0;
};
struct StepBroadcast {
  int num_blocks = 0;
};

using Message =
    std::variant<PrecondUpload, GradUpload, PrecondDelta, StepBroadcast>;

// 8-byte little-endian reals, 4-byte block indices.
inline std::uint64_t byte_account(const Message& message) {
  struct Visitor {
    std::uint64_t operator()(const PrecondUpload&) const { return 4 + 6 * 8; }
    std::uint64_t operator()(const GradUpload&) const { return 4 + 3 * 8; }
    std::uint64_t operator()(const PrecondDelta&) const { return 4 + 6 * 8; }
    std::uint64_t operator()(const StepBroadcast& m) const {
      return static_cast<std::uint64_t>(m.num_blocks) * (4 + 3 * 8) + 8;
    }
  };
  return std::visit(Visitor{}, message);
}

struct RunConfig {
  double gamma = 1.0;
  double lambda = 1e6;
  LazyConfig lazy;
  int max_iters = 50;
  std::uint64_t seed = 0;
  int num_threads = 1;
  std::vector<double> beta;  // Lyapunov weights; empty disables the column

  void validate() const {
    if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
    if (max_iters < 1) throw std::invalid_argument("max_iters must be >= 1");
    lazy.validate();
    if (!beta.empty() && static_cast<int>(beta.size()) != lazy.dbar)
      throw std::invalid_argument("beta must have dbar entries");
  }
};

// One row of the run trace. Row k describes the state at the start of
// iteration k plus the communication that happened during it; the final row
// (iter == max_iters) reports the terminal state and carries no uploads.
struct IterationRecord {
  int iter = 0;
  double f = 0.0;
  double grad_norm = 0.0;    // full Riemannian gradient norm (diagnostic)
  double what_normsq = std::numeric_limits<double>::quiet_NaN();
  double lyapunov = std::numeric_limits<double>::quiet_NaN();
  std::vector<int> s_uploads;  // per agent
  std::vector<int> w_uploads;  // per agent
  std::uint64_t cum_upload_bytes = 0;
  std::uint64_t cum_broadcast_bytes = 0;
  double ate = std::numeric_limits<double>::quiet_NaN();
  double reproj = std::numeric_limits<double>::quiet_NaN();
  double v_norm = 0.0;  // shared step norm
  double u_norm = 0.0;  // stacked private step norm
  double wall_time_s = 0.0;
};

using IterationTrace = std::vector<IterationRecord>;

// Optional per-iteration metric hooks (ATE / reprojection against a ground
// truth); wired up by the driver so the runtime stays independent of dataio.
struct MetricHooks {
  std::function<double(const State&)> ate;
  std::function<double(const State&)> reproj;
};

struct RunResult {
  IterationTrace trace;
  State final_state;
  double final_f = 0.0;
  double final_grad_norm = 0.0;
  // Exposed for coherence checks and tests.
  std::vector<BlockCache> agent_caches;
  std::vector<BlockCache> server_caches;
  std::vector<GradNormHistory> agent_histories;
  GradNormHistory server_history{0};
};

namespace detail {

template <typename Fn>
void parallel_over_agents(int num_agents, int num_threads, Fn&& fn) {
  if (num_threads <= 1 || num_agents <= 1) {
    for (int i = 0; i < num_agents; ++i) fn(i);
    return;
  }
  const int workers = std::min(num_threads, num_agents);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&, t]() {
      for (int i = t; i < num_agents; i += workers) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

inline double gradient_norm(const std::vector<LocalBlocks>& blocks,
                            const ProblemInstance& instance) {
  // g_y blocks of different agents touching the same point must be summed
  // before taking the norm.
  std::vector<Eigen::Vector3d> gy(instance.num_points(),
                                  Eigen::Vector3d::Zero());
  double sq = 0.0;
  for (int i = 0; i < instance.num_agents(); ++i) {
    for (const Vector6d& g : blocks[i].g_x) sq += g.squaredNorm();
    const auto& observed = instance.agent(i).observed_blocks;
    for (std::size_t k = 0; k < observed.size(); ++k)
      gy[observed[k]] += blocks[i].g_y[k];
  }
  for (const auto& g : gy) sq += g.squaredNorm();
  return std::sqrt(sq);
}

}  // namespace detail

// Executes Algorithm LARPG on the simulated bulk-synchronous network.
// Stage 1: linearize, lazy preconditioner uploads, aggregation, P deltas.
// Stage 2: lazy reduced-gradient uploads, aggregation of w_hat.
// Stage 3: shared step broadcast, private elimination, retraction.
// Deterministic for a fixed seed and independent of num_threads.
inline RunResult run(const ProblemInstance& instance, const State& init_state,
                     const RunConfig& cfg, const MetricHooks& hooks = {}) {
  cfg.validate();
  instance.check_state(init_state);
  const int num_agents = instance.num_agents();
  const int num_points = instance.num_points();
  const bool with_lyapunov = !cfg.beta.empty();

  State state = init_state;
  RunResult result;
  result.agent_caches.assign(num_agents, BlockCache(0));
  result.server_caches.assign(num_agents, BlockCache(0));
  result.agent_histories.assign(num_agents, GradNormHistory(cfg.lazy.dbar));
  result.server_history = GradNormHistory(cfg.lazy.dbar);
  for (int i = 0; i < num_agents; ++i) {
    const int n = instance.agent(i).num_observed();
    result.agent_caches[i] = BlockCache(n);
    result.server_caches[i] = BlockCache(n);
  }

  // Agent-side mirror of the preconditioner blocks it needs for triggering,
  // kept in sync through the PrecondDelta broadcasts.
  std::vector<std::vector<Eigen::Matrix3d>> p_mirror(num_agents);
  for (int i = 0; i < num_agents; ++i)
    p_mirror[i].assign(instance.agent(i).num_observed(),
                       Eigen::Matrix3d::Zero());

  std::uint64_t cum_upload = 0;
  std::uint64_t cum_broadcast = 0;

  std::vector<LocalBlocks> blocks(num_agents);
  std::vector<JacobiBlocks> jacobi(num_agents);
  std::vector<ReducedGradient> reduced(num_agents);
  std::vector<PrecondUploadSet> s_uploads(num_agents);
  std::vector<GradUploadSet> w_uploads(num_agents);
  std::vector<std::vector<Eigen::Matrix3d>> dhat(num_agents);
  std::vector<std::vector<Eigen::Vector3d>> bases(num_agents);

  auto observed_bases = [&](int i) {
    const auto& observed = instance.agent(i).observed_blocks;
    std::vector<Eigen::Vector3d> b(observed.size());
    for (std::size_t k = 0; k < observed.size(); ++k)
      b[k] = state.points[observed[k]];
    return b;
  };

  for (int k = 0; k < cfg.max_iters; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    IterationRecord rec;
    rec.iter = k;
    rec.s_uploads.assign(num_agents, 0);
    rec.w_uploads.assign(num_agents, 0);

    // ---- Stage 1: linearization and lazy preconditioner communication ----
    detail::parallel_over_agents(num_agents, cfg.num_threads, [&](int i) {
      blocks[i] = linearize(instance, i, state, cfg.lambda);
      jacobi[i] = jacobi_blocks(blocks[i]);
      bases[i] = observed_bases(i);
      PrecondUploadSet ups;
      const BlockCache& cache = result.agent_caches[i];
      for (int l = 0; l < instance.agent(i).num_observed(); ++l) {
        const Eigen::Matrix3d& s_new = jacobi[i].blocks[l];
        bool upload = !cache.entries[l].has_S;
        if (!upload) {
          const Eigen::Matrix3d s_tilde =
              approx_precond_block(cache.entries[l], bases[i][l]);
          upload = precond_trigger(s_new, s_tilde, cfg.lazy.delta_p);
        }
        if (upload) ups.push_back({l, s_new});
      }
      s_uploads[i] = std::move(ups);
      // agent-side cache commit mirrors the server's
      dhat[i] = assemble_dhat(s_uploads[i], result.agent_caches[i], bases[i], k);
    });

    std::vector<char> p_changed(num_points, k == 0 ? 1 : 0);
    for (int i = 0; i < num_agents; ++i) {
      rec.s_uploads[i] = static_cast<int>(s_uploads[i].size());
      const auto& observed = instance.agent(i).observed_blocks;
      for (const auto& up : s_uploads[i]) {
        cum_upload += byte_account(PrecondUpload{i, observed[up.local]});
        p_changed[observed[up.local]] = 1;
      }
      // server-side assembly must agree with the agent's commit exactly
      const auto server_dhat =
          assemble_dhat(s_uploads[i], result.server_caches[i], bases[i], k);
      for (std::size_t l = 0; l < server_dhat.size(); ++l)
        if (server_dhat[l] != dhat[i][l])
          throw std::logic_error("run: server/agent D_hat mismatch");
    }

    std::vector<AgentDhat> contributions(num_agents);
    for (int i = 0; i < num_agents; ++i)
      contributions[i] = {&instance.agent(i).observed_blocks, &dhat[i]};
    const Preconditioner precond = aggregate_precond(contributions, num_points);

    for (int l = 0; l < num_points; ++l)
      if (p_changed[l]) cum_broadcast += byte_account(PrecondDelta{l});
    detail::parallel_over_agents(num_agents, cfg.num_threads, [&](int i) {
      const auto& observed = instance.agent(i).observed_blocks;
      for (std::size_t idx = 0; idx < observed.size(); ++idx)
        if (p_changed[observed[idx]])
          p_mirror[i][idx] = precond.blocks[observed[idx]];
    });

    // ---- Stage 2: lazy reduced-gradient communication ----
    detail::parallel_over_agents(num_agents, cfg.num_threads, [&](int i) {
      reduced[i] = reduced_gradient(blocks[i]);
      const int m_scale = cfg.lazy.scaling == MScaling::kPerAgentObserved
                              ? instance.agent(i).num_observed()
                              : num_points;
      GradUploadSet ups;
      const BlockCache& cache = result.agent_caches[i];
      for (int l = 0; l < instance.agent(i).num_observed(); ++l) {
        const Eigen::Vector3d& w_new = reduced[i].blocks[l];
        bool upload = !cache.entries[l].has_w;
        if (!upload) {
          const Eigen::Vector3d w_tilde =
              approx_grad_block(cache.entries[l], bases[i][l]);
          upload = grad_trigger(w_new, w_tilde, p_mirror[i][l],
                                result.agent_histories[i], cfg.lazy, m_scale,
                                num_agents);
        }
        if (upload) ups.push_back({l, w_new});
      }
      w_uploads[i] = std::move(ups);
    });

    std::vector<Eigen::Vector3d> what(num_points, Eigen::Vector3d::Zero());
    for (int i = 0; i < num_agents; ++i) {
      rec.w_uploads[i] = static_cast<int>(w_uploads[i].size());
      const auto& observed = instance.agent(i).observed_blocks;
      for (const auto& up : w_uploads[i])
        cum_upload += byte_account(GradUpload{i, observed[up.local]});
      const auto what_i =
          assemble_what_agent(w_uploads[i], result.server_caches[i], bases[i], k);
      // keep the agent's own cache in lockstep
      assemble_what_agent(w_uploads[i], result.agent_caches[i], bases[i], k);
      for (std::size_t idx = 0; idx < observed.size(); ++idx)
        what[observed[idx]] += what_i[idx];
    }

    // ---- Stage 3: shared step, private elimination, retraction ----
    const SharedStep step = compute_step(what, precond, cfg.gamma);
    cum_broadcast += byte_account(StepBroadcast{num_points});

    rec.f = 0.0;
    for (int i = 0; i < num_agents; ++i) rec.f += blocks[i].f_value;
    rec.grad_norm = detail::gradient_norm(blocks, instance);
    rec.what_normsq = step.gradsq;
    if (with_lyapunov) {
      double v = rec.f;
      const int depth = std::min(cfg.lazy.dbar, result.server_history.size());
      for (int d = 1; d <= depth; ++d)
        v += cfg.beta[d - 1] * result.server_history.at(d);
      rec.lyapunov = v;
    }
    if (hooks.ate) rec.ate = hooks.ate(state);
    if (hooks.reproj) rec.reproj = hooks.reproj(state);

    std::vector<double> u_sq_agent(num_agents, 0.0);
    detail::parallel_over_agents(num_agents, cfg.num_threads, [&](int i) {
      const auto& observed = instance.agent(i).observed_blocks;
      std::vector<Eigen::Vector3d> v_local(observed.size());
      for (std::size_t idx = 0; idx < observed.size(); ++idx)
        v_local[idx] = step.v[observed[idx]];
      const std::vector<PoseTangent> u = private_update(blocks[i], v_local);
      double sq = 0.0;
      for (std::size_t j = 0; j < u.size(); ++j) {
        state.poses[i][j] = se3_retract(state.poses[i][j], u[j]);
        sq += u[j].as_vector().squaredNorm();
      }
      u_sq_agent[i] = sq;
    });
    double u_sq = 0.0;
    for (double sq : u_sq_agent) u_sq += sq;
    rec.u_norm = std::sqrt(u_sq);

    apply_shared_step(state.points, step.v);

    double v_sq = 0.0;
    for (const auto& v : step.v) v_sq += v.squaredNorm();
    rec.v_norm = std::sqrt(v_sq);

    result.server_history.push(step.gradsq);
    for (auto& h : result.agent_histories) h.push(step.gradsq);

    rec.cum_upload_bytes = cum_upload;
    rec.cum_broadcast_bytes = cum_broadcast;
    rec.wall_time_s = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
    result.trace.push_back(std::move(rec));
  }

  // Final-state row: metrics only, no communication.
  {
    detail::parallel_over_agents(num_agents, cfg.num_threads, [&](int i) {
      blocks[i] = linearize(instance, i, state, cfg.lambda);
    });
    IterationRecord rec;
    rec.iter = cfg.max_iters;
    rec.s_uploads.assign(num_agents, 0);
    rec.w_uploads.assign(num_agents, 0);
    rec.f = 0.0;
    for (int i = 0; i < num_agents; ++i) rec.f += blocks[i].f_value;
    rec.grad_norm = detail::gradient_norm(blocks, instance);
    if (with_lyapunov) {
      double v = rec.f;
      const int depth = std::min(cfg.lazy.dbar, result.server_history.size());
      for (int d = 1; d <= depth; ++d)
        v += cfg.beta[d - 1] * result.server_history.at(d);
      rec.lyapunov = v;
    }
    if (hooks.ate) rec.ate = hooks.ate(state);
    if (hooks.reproj) rec.reproj = hooks.reproj(state);
    rec.cum_upload_bytes = cum_upload;
    rec.cum_broadcast_bytes = cum_broadcast;
    result.final_f = rec.f;
    result.final_grad_norm = rec.grad_norm;
    result.trace.push_back(std::move(rec));
  }

  result.final_state = std::move(state);
  return result;
}

}  // namespace larpg
