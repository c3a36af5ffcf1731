#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rwbsde/problems.hpp"
#include "rwbsde/skorohod.hpp"

namespace rwbsde {

/// Euler-Maruyama path of X and of the variational process nabla X on a
/// fine grid, driven by given Brownian values.
struct FinePath {
  double fine_step = 0.0;
  double start_time = 0.0;
  std::vector<double> x;
  std::vector<double> grad;
  /// Increments B_{i+1} - B_i used for step i.
  std::vector<double> increments;
  /// Set when nabla X left (0, inf) somewhere.
  bool gradient_nonpositive = false;

  std::size_t steps() const { return increments.size(); }
  double time(std::size_t i) const { return start_time + static_cast<double>(i) * fine_step; }
};

/// Euler scheme for X and nabla X over `steps` fine steps. `brownian` holds B
/// at the fine nodes (at least steps + 1 values). nabla X is filled when b_x
/// and sigma_x are available, otherwise left at 1. Throws Error{Numeric} with
/// the step index on non-finite values.
FinePath euler_fine(const ProblemSpec& p, std::span<const double> brownian, double fine_step,
                    std::size_t steps, double x0, double start_time = 0.0);

/// Same, on the increments of a coupled sample over [0, T].
FinePath euler_fine(const ProblemSpec& p, const CoupledSample& sample, double x0);

/// N^t_s = (s - t)^{-1} sum_{t <= r_i < s} nabla X_{r_i} / (sigma(r_i, X_{r_i}) nabla X_t) dB_i
/// (left-point Ito sum). t and s must lie on the fine grid; t >= s throws
/// Error{Domain}.
double malliavin_weight(const ProblemSpec& p, const FinePath& path, double t, double s);

enum class ZRepresentation {
  /// g(X_T) N^t_T + int f N^t_s ds
  Weight,
  /// g'(X_T) nabla X_T + int f N^t_s ds (needs g')
  Gradient,
};

const char* to_string(ZRepresentation mode) noexcept;

struct ZEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
  /// Sample means of the terminal and generator contributions (before the
  /// sigma(t,x) factor).
  double terminal_part = 0.0;
  double generator_part = 0.0;
  ZRepresentation mode = ZRepresentation::Weight;
};

struct ZEstimatorOptions {
  std::size_t samples = 100000;
  std::uint64_t seed = 1;
  int steps = 256;
  ZRepresentation mode = ZRepresentation::Weight;
  unsigned threads = 1;
};

/// Monte Carlo estimate of Z_t at X_t = x from the weight representation.
/// Y_s, Z_s inside f come from reference_solution; a missing reference with a
/// nonzero generator throws Error{Capability}.
ZEstimate z_weight_estimator(const ProblemSpec& p, double t, double x, const ZEstimatorOptions& opts);

struct PdeGridSpec {
  int time_steps = 512;
  int space_points = 2001;
  double x_min = -8.0;
  double x_max = 8.0;
  double theta = 0.5;
  double picard_tol = 1e-10;
  int picard_max_iter = 50;
  /// Also solve on the half grid and report a Richardson error estimate.
  bool richardson = true;
  /// Richardson estimates above this add an accuracy warning.
  double accuracy_tol = 1e-4;
};

/// Theta-scheme solution of u_t + sigma^2/2 u_xx + b u_x + f(t,x,u,sigma u_x) = 0,
/// u(T,.) = g, with linear-extrapolation boundaries.
class PdeReference {
 public:
  const PdeGridSpec& spec() const { return spec_; }
  double dx() const { return dx_; }
  double dt() const { return dt_; }
  double horizon() const { return horizon_; }
  double node(int i) const { return spec_.x_min + dx_ * i; }

  /// Time level j (t_j = j dt), j = 0..time_steps.
  std::span<const double> level(int j) const;
  /// u and u_x by linear interpolation in t and cubic Hermite in x;
  /// outside [x_min, x_max] linear extrapolation is used.
  double u(double t, double x) const;
  double ux(double t, double x) const;

  double richardson_estimate() const { return richardson_estimate_; }
  double max_residual() const { return max_residual_; }
  int max_picard_iterations() const { return max_picard_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// Rows t,x,u,u_x.
  void write_csv(std::ostream& os, int time_stride = 1, int space_stride = 1) const;

 private:
  friend PdeReference pde_reference_solver(const ProblemSpec&, const PdeGridSpec&);
  PdeGridSpec spec_;
  double horizon_ = 1.0;
  double dx_ = 0.0;
  double dt_ = 0.0;
  std::vector<double> u_;   // (time_steps + 1) * space_points
  std::vector<double> ux_;  // central differences
  double richardson_estimate_ = 0.0;
  double max_residual_ = 0.0;
  int max_picard_ = 0;
  std::vector<std::string> warnings_;

  double interp(const std::vector<double>& field, double t, double x) const;
};

/// Throws Error{Convergence} when the Picard iteration on f stalls and
/// Error{Config} for unusable grids.
PdeReference pde_reference_solver(const ProblemSpec& p, const PdeGridSpec& spec);

}  // namespace rwbsde
