#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

#include <json.hpp>

#include "rwbsde/problems.hpp"
#include "rwbsde/walk.hpp"

namespace rwbsde {

struct FixedPointOptions {
  double tol = 1e-12;
  int max_iter = 100;
};

struct StepStates {
  double up;
  double down;
};

/// Children x + h b(t_{m+1}, x) +- sqrt(h) sigma(t_{m+1}, x) of state x at level m.
StepStates one_step_states(const ProblemSpec& p, const WalkGrid& grid, int m, double x);

struct ImplicitStep {
  double value = 0.0;
  double z = 0.0;
  int iterations = 0;
  double residual = 0.0;
};

/// Fixed point y = h f(t_{m+1}, x, y, z) + (u_up + u_down) / 2 with
/// z = (u_up - u_down) / (2 sqrt h). Throws Error{Config} when h L_f >= 1 and
/// Error{Convergence} when max_iter is exhausted.
ImplicitStep implicit_step(const ProblemSpec& p, const WalkGrid& grid, int m, double x, double u_up,
                           double u_down, const FixedPointOptions& opts = {});

enum class Backend { PathTree, SpatialGrid };

const char* to_string(Backend backend) noexcept;

struct XGrid {
  double x_min = -8.0;
  double x_max = 8.0;
  int points = 4001;
};

struct SolveDiagnostics {
  /// Per level m = 0..n-1: largest fixed-point iteration count.
  std::vector<int> iterations;
  /// Per level m = 0..n-1: largest |delta y| at exit.
  std::vector<double> residuals;
  /// Grid backend: children that fell outside the grid (linear extrapolation).
  std::size_t truncated_children = 0;
};

/// Monotone piecewise-cubic Hermite interpolant on a uniform grid with
/// Fritsch-Carlson slopes; linear extrapolation outside.
class MonotoneCubic {
 public:
  MonotoneCubic() = default;
  MonotoneCubic(double x_min, double dx, std::vector<double> values);

  double operator()(double x) const;
  bool outside(double x) const { return x < x_min_ || x > x_max_; }
  double x_min() const { return x_min_; }
  double x_max() const { return x_max_; }
  const std::vector<double>& values() const { return values_; }

 private:
  double x_min_ = 0.0;
  double x_max_ = 0.0;
  double dx_ = 1.0;
  std::vector<double> values_;
  std::vector<double> slopes_;
};

/// The solved u^n field. Path-tree levels hold 2^m nodes indexed by the sign
/// prefix (epsilon_1 is the most significant bit, 1 = up); spatial-grid levels
/// hold a uniform x-grid. Immutable once built.
class DiscreteSolution {
 public:
  const WalkGrid& grid() const { return grid_; }
  Backend backend() const { return backend_; }
  const ProblemSpec& problem() const { return *problem_; }
  const SolveDiagnostics& diagnostics() const { return diagnostics_; }
  double start_value() const { return x0_; }

  // Path-tree access.
  std::size_t node_count(int m) const;
  double node_state(int m, std::size_t node) const;
  double node_value(int m, std::size_t node) const;
  /// Node at level m carrying state x exactly; throws Error{StateLookup}.
  std::size_t find_node(int m, double x) const;

  // Spatial-grid access.
  const XGrid& xgrid() const { return xgrid_; }
  const MonotoneCubic& level_interpolant(int m) const { return levels_.at(m); }

  /// u^n(t_m, x). Grid backend: sets *truncated (if given) when x is off-grid.
  double value(int m, double x, bool* truncated = nullptr) const;

 private:
  friend DiscreteSolution solve_tree(const ProblemSpec&, const WalkGrid&, double, const FixedPointOptions&, int);
  friend DiscreteSolution solve_grid(const ProblemSpec&, const WalkGrid&, const XGrid&, const FixedPointOptions&,
                                     std::optional<std::pair<double, double>>);
  DiscreteSolution(std::shared_ptr<const ProblemSpec> problem, WalkGrid grid, Backend backend)
      : problem_(std::move(problem)), grid_(grid), backend_(backend) {}

  std::shared_ptr<const ProblemSpec> problem_;
  WalkGrid grid_;
  Backend backend_;
  double x0_ = 0.0;
  SolveDiagnostics diagnostics_;
  // tree
  std::vector<std::vector<double>> states_;
  std::vector<std::vector<double>> values_;
  std::vector<std::vector<std::pair<double, std::size_t>>> index_;
  // grid
  XGrid xgrid_;
  std::vector<MonotoneCubic> levels_;
};

inline constexpr int kDefaultTreeCap = 22;

/// Exact backward sweep over the non-recombining tree of reachable states
/// from (0, x0). Throws Error{Capacity} when n > tree_cap.
DiscreteSolution solve_tree(const ProblemSpec& p, const WalkGrid& grid, double x0 = 0.0,
                            const FixedPointOptions& opts = {}, int tree_cap = kDefaultTreeCap);

/// Backward sweep on a uniform x-grid with monotone cubic interpolation of
/// the children. States in `coverage` (default: the middle half of the grid)
/// whose children land more than one cell outside the grid raise
/// Error{Domain}; other off-grid children are extrapolated and counted.
DiscreteSolution solve_grid(const ProblemSpec& p, const WalkGrid& grid, const XGrid& xgrid,
                            const FixedPointOptions& opts = {},
                            std::optional<std::pair<double, double>> coverage = std::nullopt);

/// Y^n = u^n(t_k, x).
double y_at(const DiscreteSolution& sol, int k, double x);
/// Z^n = (u^n(t_{k+1}, x_up) - u^n(t_{k+1}, x_down)) / (2 sqrt h), k < n.
double z_at(const DiscreteSolution& sol, int k, double x);

/// Largest residual of the defining backward relation over all stored states,
/// recomputed from the stored field.
double defining_relation_residual(const DiscreteSolution& sol);

enum class ZhatMode { Exact, MonteCarlo };

struct ZhatEstimate {
  double value = 0.0;
  /// Monte Carlo standard error (0 in exact mode).
  double std_error = 0.0;
  std::size_t paths = 0;
  /// E_k[D_{k+1} g(X_T)] part.
  double terminal_part = 0.0;
  /// E_k[h sum f N] part (before the sigma factor).
  double generator_part = 0.0;
};

struct ZhatOptions {
  ZhatMode mode = ZhatMode::Exact;
  std::size_t samples = 4096;
  std::uint64_t seed = 1;
  std::uint64_t stream = 0;
  int tree_cap = kDefaultTreeCap;
};

/// Weight-based representation of Z^n at (t_k, x), Y^n and Z^n read from
/// `sol`. Exact mode averages over all 2^(n-k) continuations; Monte Carlo mode
/// samples epsilon_{k+2..n} and evaluates both values of epsilon_{k+1}.
ZhatEstimate zhat_at(const DiscreteSolution& sol, int k, double x, const ZhatOptions& opts = {});

/// Y^n and Z^n on every path, by direct conditional averaging over all 2^n
/// sign sequences. Tables are indexed [k][path], where bit j-1 of the path
/// index is set when epsilon_j = +1. Z has levels 0..n-1, Y levels 0..n.
struct BruteForceTables {
  int n = 0;
  std::vector<std::vector<double>> y;
  std::vector<std::vector<double>> z;
  std::vector<std::vector<double>> x;
};

inline constexpr int kBruteForceCap = 12;

BruteForceTables brute_force_solution(const ProblemSpec& p, const WalkGrid& grid, double x0 = 0.0,
                                      const FixedPointOptions& opts = {});

/// Rows `m,key,x,u,z` (key = node index for the tree, grid index otherwise;
/// z empty on the last level).
void write_solution_csv(std::ostream& os, const DiscreteSolution& sol);
nlohmann::json diagnostics_json(const DiscreteSolution& sol);

}  // namespace rwbsde
