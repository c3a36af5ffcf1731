#pragma once

#include <span>
#include <vector>

namespace rwbsde {

struct SlopeRow {
  double h;
  double error;
  double se;
};

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  /// Indices (into the input) of the rows that entered the fit.
  std::vector<int> used;
  /// Rows dropped because error <= 0, non-finite, or se >= 25% of the error.
  std::vector<int> excluded;
};

/// Weighted least squares of log(error) on log(h) with weights (error/se)^2
/// (the delta-method variance of log error). The 95% interval is the normal
/// approximation. Rows with se == 0 get the largest finite weight present, or
/// all rows are weighted equally when every se is zero; the interval then
/// comes from the residual variance. Throws Error{InsufficientData} with fewer
/// than 3 usable rows.
SlopeFit fit_slope(std::span<const SlopeRow> rows);

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
double ks_statistic(std::vector<double> a, std::vector<double> b);
/// Asymptotic p-value of the two-sample KS statistic.
double ks_p_value(double statistic, std::size_t na, std::size_t nb);

}  // namespace rwbsde
