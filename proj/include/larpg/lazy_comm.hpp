#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "larpg/geometry.hpp"

namespace larpg {

// Per (agent, block) record of the last uploaded preconditioner block and
// reduced-gradient block. Agent and server each hold one copy; the two stay
// identical because triggering decisions use only shared information.
struct CacheEntry {
  bool has_S = false;
  Eigen::Matrix3d last_S = Eigen::Matrix3d::Zero();
  int last_S_iter = -1;
  bool has_w = false;
  Eigen::Vector3d last_w = Eigen::Vector3d::Zero();
  int last_w_iter = -1;
  Eigen::Vector3d base_point = Eigen::Vector3d::Zero();  // y_l at upload time
};

struct BlockCache {
  std::vector<CacheEntry> entries;  // indexed by the agent's local block

  explicit BlockCache(int num_blocks = 0) : entries(num_blocks) {}
};

inline bool operator==(const CacheEntry& a, const CacheEntry& b) {
  return a.has_S == b.has_S && a.has_w == b.has_w &&
         a.last_S_iter == b.last_S_iter && a.last_w_iter == b.last_w_iter &&
         (!a.has_S || a.last_S == b.last_S) &&
         (!a.has_w || a.last_w == b.last_w);
}

// Ring buffer of the last dbar values of |w_hat^{k-d}|^2_{P^{k-d}}.
// Index 1 is the most recent completed iteration.
class GradNormHistory {
 public:
  explicit GradNormHistory(int capacity = 0) : capacity_(capacity) {}

  void push(double value) {
    if (capacity_ == 0) return;
    if (static_cast<int>(values_.size()) == capacity_) {
      values_[head_] = value;
      head_ = (head_ + 1) % capacity_;
    } else {
      values_.insert(values_.begin() + head_, value);
      ++head_;
      if (head_ == capacity_) head_ = 0;
    }
  }

  int size() const { return static_cast<int>(values_.size()); }
  int capacity() const { return capacity_; }

  // d = 1 .. size(), most recent first.
  double at(int d) const {
    const int n = size();
    if (d < 1 || d > n) throw std::out_of_range("GradNormHistory::at");
    return values_[(head_ - d + n) % n];
  }

  bool operator==(const GradNormHistory& other) const {
    if (size() != other.size()) return false;
    for (int d = 1; d <= size(); ++d)
      if (at(d) != other.at(d)) return false;
    return true;
  }

 private:
  int capacity_ = 0;
  int head_ = 0;
  std::vector<double> values_;
};

enum class MScaling {
  kPerAgentObserved,  // m in the trigger denominator is |L_i|
  kGlobalM,           // m is the global number of shared blocks
};

struct LazyConfig {
  double delta_p = 0.1;  // may be +infinity: freeze after the first upload
  std::vector<double> epsilon = std::vector<double>(10, 10.0);
  int dbar = 10;
  MScaling scaling = MScaling::kPerAgentObserved;

  void validate() const {
    if (delta_p < 0.0) throw std::invalid_argument("delta_p must be >= 0");
    if (dbar < 1) throw std::invalid_argument("dbar must be >= 1");
    if (static_cast<int>(epsilon.size()) != dbar)
      throw std::invalid_argument("epsilon must have dbar entries");
    for (double e : epsilon)
      if (e < 0.0) throw std::invalid_argument("epsilon entries must be >= 0");
  }
};

// Transported stale preconditioner block. For Euclidean shared blocks the
// transporter is the identity, so this returns the cached value unchanged;
// the conjugation seam is kept for future manifold-valued blocks.
inline Eigen::Matrix3d approx_precond_block(const CacheEntry& entry,
                                            const Eigen::Vector3d& current) {
  if (!entry.has_S)
    throw std::logic_error("approx_precond_block: no cached value");
  return transporter_conjugate(entry.base_point, current, entry.last_S);
}

inline Eigen::Vector3d approx_grad_block(const CacheEntry& entry,
                                         const Eigen::Vector3d& current) {
  if (!entry.has_w)
    throw std::logic_error("approx_grad_block: no cached value");
  return transporter_apply(entry.base_point, current, entry.last_w);
}

// Upload rule for a preconditioner block:
// |S - S_tilde|_F > delta_p * |S|_F (strict). delta_p = +inf never fires.
inline bool precond_trigger(const Eigen::Matrix3d& s_new,
                            const Eigen::Matrix3d& s_tilde, double delta_p) {
  if (std::isinf(delta_p)) return false;
  return (s_new - s_tilde).norm() > delta_p * s_new.norm();
}

// Upload rule for a reduced-gradient block:
// |w_tilde - w|^2_{P_l} > 1/(m_scale N^2) * sum_d epsilon_d hist[d] (strict).
// With empty history the threshold is zero, so any changed block uploads.
inline bool grad_trigger(const Eigen::Vector3d& w_new,
                         const Eigen::Vector3d& w_tilde,
                         const Eigen::Matrix3d& p_block,
                         const GradNormHistory& hist, const LazyConfig& cfg,
                         int m_scale, int num_agents) {
  const Eigen::Vector3d diff = w_tilde - w_new;
  const double lhs = diff.dot(p_block * diff);
  double rhs = 0.0;
  const int depth = std::min(cfg.dbar, hist.size());
  for (int d = 1; d <= depth; ++d) rhs += cfg.epsilon[d - 1] * hist.at(d);
  rhs /= static_cast<double>(m_scale) * num_agents * num_agents;
  return lhs > rhs;
}

// Uploaded value for one block this iteration, in the agent's local indexing.
template <typename Value>
struct BlockUpload {
  int local = 0;
  Value value;
};

using PrecondUploadSet = std::vector<BlockUpload<Eigen::Matrix3d>>;
using GradUploadSet = std::vector<BlockUpload<Eigen::Vector3d>>;

// Merges this iteration's uploads with cached approximations into the
// per-agent D_hat blocks, and commits uploads to the cache. Every block must
// have either an upload or a cache entry; anything else is a protocol bug.
inline std::vector<Eigen::Matrix3d> assemble_dhat(
    const PrecondUploadSet& uploads, BlockCache& cache,
    const std::vector<Eigen::Vector3d>& bases, int iter) {
  std::vector<Eigen::Matrix3d> dhat(cache.entries.size());
  std::size_t u = 0;
  for (std::size_t l = 0; l < cache.entries.size(); ++l) {
    CacheEntry& entry = cache.entries[l];
    if (u < uploads.size() && uploads[u].local == static_cast<int>(l)) {
      dhat[l] = uploads[u].value;
      entry.has_S = true;
      entry.last_S = uploads[u].value;
      entry.last_S_iter = iter;
      entry.base_point = bases[l];
      ++u;
    } else {
      if (!entry.has_S)
        throw std::logic_error(
            "assemble_dhat: block has neither upload nor cache entry");
      dhat[l] = approx_precond_block(entry, bases[l]);
    }
  }
  if (u != uploads.size())
    throw std::logic_error("assemble_dhat: upload set not sorted by block");
  return dhat;
}

inline std::vector<Eigen::Vector3d> assemble_what_agent(
    const GradUploadSet& uploads, BlockCache& cache,
    const std::vector<Eigen::Vector3d>& bases, int iter) {
  std::vector<Eigen::Vector3d> what(cache.entries.size());
  std::size_t u = 0;
  for (std::size_t l = 0; l < cache.entries.size(); ++l) {
    CacheEntry& entry = cache.entries[l];
    if (u < uploads.size() && uploads[u].local == static_cast<int>(l)) {
      what[l] = uploads[u].value;
      entry.has_w = true;
      entry.last_w = uploads[u].value;
      entry.last_w_iter = iter;
      entry.base_point = bases[l];
      ++u;
    } else {
      if (!entry.has_w)
        throw std::logic_error(
            "assemble_what: block has neither upload nor cache entry");
      what[l] = approx_grad_block(entry, bases[l]);
    }
  }
  if (u != uploads.size())
    throw std::logic_error("assemble_what: upload set not sorted by block");
  return what;
}

}  // namespace larpg
