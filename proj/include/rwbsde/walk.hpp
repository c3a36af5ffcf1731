#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <set>
#include <span>
#include <vector>

#include "rwbsde/problems.hpp"

namespace rwbsde {

/// Equidistant grid t_k = k T / n, k = 0..n.
class WalkGrid {
 public:
  WalkGrid(int steps, double horizon);

  int steps() const { return n_; }
  double horizon() const { return horizon_; }
  double h() const { return h_; }
  double sqrt_h() const { return sqrt_h_; }
  /// Computed as k T / n (never accumulated); time(n) is T itself.
  double time(int k) const { return k == n_ ? horizon_ : static_cast<double>(k) * horizon_ / static_cast<double>(n_); }

 private:
  int n_;
  double horizon_;
  double h_;
  double sqrt_h_;
};

/// Rademacher signs; entry j - 1 holds epsilon_j.
using Signs = std::vector<std::int8_t>;

struct WalkPath {
  WalkGrid grid;
  Signs eps;
  /// X^n at t_0..t_n; entries before start_index repeat the start value.
  std::vector<double> xwalk;
  int start_index = 0;
  double start_value = 0.0;
};

/// n i.i.d. signs keyed on (seed, sample, step).
Signs rademacher_path(const WalkGrid& grid, std::uint64_t seed, std::uint64_t sample = 0);

/// B^n at t_0..t_n for the given signs.
std::vector<double> scaled_walk(const WalkGrid& grid, std::span<const std::int8_t> eps);

/// One step of the discretized forward equation into level j:
/// x + h b(t_j, x) + sqrt(h) sigma(t_j, x) eps. Every code path that moves a
/// state one level forward goes through this so that tree nodes and walk
/// states agree bit for bit.
double step_state(const ProblemSpec& p, const WalkGrid& grid, int j, double x, int eps);

/// X^n from (k0, x) to t_n. Throws Error{Numeric} naming the step when a
/// coefficient is not finite.
WalkPath forward_walk(const ProblemSpec& p, const WalkGrid& grid, std::span<const std::int8_t> eps,
                      int start_index, double x);

/// Writes rows `k,eps_k,x_k` (eps_0 reported as 0).
void write_walk_csv(std::ostream& os, const WalkPath& path);

/// A real functional F(epsilon_1..epsilon_n) together with the indices it
/// may depend on.
class PathFunctional {
 public:
  using Fn = std::function<double(std::span<const std::int8_t>)>;

  PathFunctional(int n, Fn fn, std::set<int> depends_on);

  double operator()(std::span<const std::int8_t> eps) const;
  int size() const { return n_; }
  const std::set<int>& depends_on() const { return depends_; }

 private:
  int n_;
  Fn fn_;
  std::set<int> depends_;
};

/// F = epsilon_m.
PathFunctional sign_functional(int n, int m);
/// F = B^n_{t_k}.
PathFunctional walk_functional(const WalkGrid& grid, int k);
/// F = X^n_{t_m} started from (0, x0).
PathFunctional state_functional(const ProblemSpec& p, const WalkGrid& grid, double x0, int m);
/// a F + b G.
PathFunctional linear_combination(double a, const PathFunctional& f, double b, const PathFunctional& g);

/// T_{m,+} / T_{m,-}: freezes coordinate m to `sign`.
PathFunctional shift(const PathFunctional& f, int m, int sign);

/// D^n_m F = (T_{m,+} F - T_{m,-} F) / (2 sqrt h).
PathFunctional discrete_malliavin(const PathFunctional& f, int m, const WalkGrid& grid);

/// Variational walk nabla X^{n,t_k,x}_{t_m}, m = k..n (index m - k), driven by
/// `eps`. Requires b_x and sigma_x.
std::vector<double> variational_walk(const ProblemSpec& p, const WalkGrid& grid,
                                     std::span<const std::int8_t> eps, int k, double x);

/// phi_x^{(k,l)}: the theta-integral of phi_x(t_l, .) between T_{k,-} and
/// T_{k,+} of X^n_{t_{l-1}} (8-point Gauss-Legendre).
double malliavin_quotient(const CoefficientFn& phi_x, double t, double x_minus, double x_plus);

/// D^n_k X^n_{t_m} for m = k..n (index m - k) along `path`, which must start
/// at level 0. Requires b_x and sigma_x.
std::vector<double> malliavin_walk(const ProblemSpec& p, const WalkPath& path, int k);

/// Discrete Malliavin weight N^{n,t_k}_{t_l} along `path` (started at level 0).
/// Throws Error{Domain} when k >= l and Error{Ellipticity} when sigma drops
/// below delta at an evaluation point.
double discrete_weight(const ProblemSpec& p, const WalkPath& path, int k, int l);

}  // namespace rwbsde
