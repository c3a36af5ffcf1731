#include "rwbsde/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rwbsde/errors.hpp"

namespace rwbsde {

SlopeFit fit_slope(std::span<const SlopeRow> rows) {
  SlopeFit fit;
  std::vector<double> lx, ly, rel;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const SlopeRow& r = rows[i];
    const bool usable = r.h > 0.0 && r.error > 0.0 && std::isfinite(r.error) && std::isfinite(r.se) && r.se >= 0.0 &&
                        r.se < 0.25 * r.error;
    if (!usable) {
      fit.excluded.push_back(static_cast<int>(i));
      continue;
    }
    fit.used.push_back(static_cast<int>(i));
    lx.push_back(std::log(r.h));
    ly.push_back(std::log(r.error));
    rel.push_back(r.se / r.error);
  }
  if (lx.size() < 3) throw Error(ErrorKind::InsufficientData, "slope fit needs at least 3 usable rows");

  const std::size_t m = lx.size();
  double min_rel = std::numeric_limits<double>::infinity();
  for (double r : rel)
    if (r > 0.0) min_rel = std::min(min_rel, r);
  const bool known_weights = std::isfinite(min_rel);
  std::vector<double> w(m, 1.0);
  if (known_weights)
    for (std::size_t i = 0; i < m; ++i) {
      const double r = rel[i] > 0.0 ? rel[i] : min_rel;
      w[i] = 1.0 / (r * r);
    }

  double sw = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < m; ++i) {
    sw += w[i];
    sx += w[i] * lx[i];
    sy += w[i] * ly[i];
  }
  const double mx = sx / sw, my = sy / sw;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < m; ++i) {
    sxx += w[i] * (lx[i] - mx) * (lx[i] - mx);
    sxy += w[i] * (lx[i] - mx) * (ly[i] - my);
  }
  const auto [lo, hi] = std::minmax_element(lx.begin(), lx.end());
  if (!(*hi > *lo) || !(sxx > 0.0)) throw Error(ErrorKind::InsufficientData, "slope fit needs at least two distinct h");
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double var;
  if (known_weights) {
    var = 1.0 / sxx;
  } else {
    double rss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double e = ly[i] - fit.intercept - fit.slope * lx[i];
      rss += w[i] * e * e;
    }
    var = rss / static_cast<double>(m - 2) / sxx;
  }
  fit.slope_se = std::sqrt(var);
  fit.ci_low = fit.slope - 1.959963984540054 * fit.slope_se;
  fit.ci_high = fit.slope + 1.959963984540054 * fit.slope_se;
  return fit;
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw Error(ErrorKind::InsufficientData, "KS test needs nonempty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

double ks_p_value(double statistic, std::size_t na, std::size_t nb) {
  const double ne = static_cast<double>(na) * static_cast<double>(nb) / static_cast<double>(na + nb);
  const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * statistic;
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0, sign = 1.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += sign * term;
    if (term < 1e-12) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

}  // namespace rwbsde
