#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rwbsde/walk.hpp"

namespace rwbsde {

/// Brownian motion on a fine grid i * dt, generated lazily in blocks from the
/// counter RNG keyed on (seed, sample, fine index). Extending the path never
/// changes values that were already produced.
class BrownianPath {
 public:
  BrownianPath(double fine_step, std::uint64_t seed, std::uint64_t sample);

  double fine_step() const { return dt_; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t sample() const { return sample_; }

  /// Makes B available at fine indices 0..index.
  void ensure(std::size_t index);
  double at(std::size_t index) {
    ensure(index);
    return values_[index];
  }
  std::size_t generated() const { return values_.size(); }
  std::span<const double> values() const { return values_; }

  /// Re-targets the buffer to a new sample without releasing memory.
  void reset(std::uint64_t seed, std::uint64_t sample);

 private:
  double dt_;
  double sqrt_dt_;
  std::uint64_t seed_;
  std::uint64_t sample_;
  std::vector<double> values_;
};

/// Exit-time embedding of the walk with step sqrt(h) into a Brownian path.
struct Embedding {
  /// First fine index at or after tau_1..tau_n.
  std::vector<std::size_t> tau_index;
  std::vector<double> tau;
  Signs eps;
  /// Snapped B_{tau_k}, k = 0..n (B_{tau_0} = 0).
  std::vector<double> b_at_tau;
};

inline constexpr int kBridgeRefineDepth = 10;
inline constexpr int kMaxBridgeRefineDepth = 20;

/// tau_k = first time with |B - B_{tau_{k-1}}| >= sqrt(h); the crossing level
/// is snapped to B_{tau_{k-1}} +- sqrt(h). With refine_depth = 0 the crossing
/// is only detected at fine grid points, which delays tau by O(sqrt(dt)) per
/// step. With refine_depth = D > 0, fine intervals that may hide a crossing
/// are bisected D times by Brownian-bridge midpoints (keyed on the fine index,
/// so every n sees the same refined path) and the last level uses the exact
/// bridge crossing probability; tau is then resolved to dt / 2^D and fine
/// grid values are untouched. Throws Error{RareEvent} if tau_n is not found
/// before `horizon_cap`.
Embedding embed_walk(BrownianPath& path, const WalkGrid& grid, double horizon_cap,
                     int refine_depth = kBridgeRefineDepth);

struct CoupledSample {
  WalkGrid grid;
  int fine_factor = 0;
  double fine_step = 0.0;
  /// B on the fine grid from 0 up to max(T, tau_n).
  std::vector<double> fine_brownian;
  std::vector<double> tau;
  Signs eps;
  /// B at t_0..t_n.
  std::vector<double> bw_at_t;
  /// Snapped B at tau_0..tau_n.
  std::vector<double> bw_at_tau;
  /// Fine-Euler X on the same increments (left empty here; see euler_fine).
  std::vector<double> x_fine;
};

/// Fine step h / M. Throws Error{Config} when M < 16 or horizon_cap < 4 T.
CoupledSample sample_coupled(const WalkGrid& grid, int fine_factor, std::uint64_t seed,
                             double horizon_cap, std::uint64_t sample = 0);

struct EmbeddingStatRow {
  int n = 0;
  double h = 0.0;
  int k = 0;
  std::string statistic;
  double estimate = 0.0;
  double std_error = 0.0;
};

struct EmbeddingStats {
  std::vector<EmbeddingStatRow> rows;
  double p_norm = 2.0;
  std::size_t samples = 0;
  /// Least-squares slope of log ||sup_t |B^n_t - B_t|||_p against log h.
  double slope_norm_of_sup = 0.0;
  /// Same for sup_t ||B^n_t - B_t||_p.
  double slope_sup_of_norm = 0.0;
};

struct EmbeddingStatsConfig {
  std::vector<int> steps;
  double horizon = 1.0;
  std::size_t samples = 10000;
  double p_norm = 2.0;
  int fine_factor = 256;
  std::uint64_t seed = 1;
  double horizon_cap_factor = 8.0;
  int refine_depth = kBridgeRefineDepth;
  unsigned threads = 0;
};

/// Monte Carlo embedding statistics. One fine path (step h_min / M) per sample
/// drives every n in the list.
EmbeddingStats embedding_error_stats(const EmbeddingStatsConfig& cfg);

/// Columns n,h,k,statistic,estimate,std_error.
void write_embedding_csv(std::ostream& os, const EmbeddingStats& stats);

}  // namespace rwbsde
