#include <doctest.h>

#include <cmath>
#include <vector>

#include "rwbsde/errors.hpp"
#include "rwbsde/rng.hpp"
#include "rwbsde/stats.hpp"

using namespace rwbsde;

namespace {

std::vector<SlopeRow> power_law(double c, double slope, double rel) {
  std::vector<SlopeRow> rows;
  for (int n : {8, 16, 32, 64, 128}) {
    const double h = 1.0 / n, e = c * std::pow(h, slope);
    rows.push_back({h, e, rel * e});
  }
  return rows;
}

}  // namespace

TEST_CASE("exact power laws give exact slopes") {
  for (double slope : {1.0, 0.5, 0.25}) {
    const SlopeFit f = fit_slope(power_law(3.0, slope, 0.01));
    CHECK(f.slope == doctest::Approx(slope).epsilon(1e-12));
    CHECK(f.intercept == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(f.ci_low < slope);
    CHECK(f.ci_high > slope);
    CHECK(f.used.size() == 5);
    CHECK(f.excluded.empty());
  }
}

TEST_CASE("the 95% interval covers the true slope") {
  const double rel = 0.05;
  int covered = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<SlopeRow> rows = power_law(2.0, 0.5, rel);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].error *= std::exp(rel * rng::normal(17, trial, i));
    for (auto& r : rows) r.se = rel * r.error;
    const SlopeFit f = fit_slope(rows);
    covered += f.ci_low <= 0.5 && 0.5 <= f.ci_high;
  }
  CHECK(covered >= 90);
}

TEST_CASE("unusable rows are excluded") {
  std::vector<SlopeRow> rows = power_law(1.0, 1.0, 0.01);
  rows[1].error = 0.0;
  rows[3].se = 0.5 * rows[3].error;
  const SlopeFit f = fit_slope(rows);
  CHECK(f.excluded == std::vector<int>{1, 3});
  CHECK(f.used == std::vector<int>{0, 2, 4});
  CHECK(f.slope == doctest::Approx(1.0).epsilon(1e-12));

  rows[0].error = std::nan("");
  try {
    fit_slope(rows);
    FAIL("expected insufficient data");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InsufficientData);
  }
  std::vector<SlopeRow> same{{0.1, 1.0, 0.01}, {0.1, 2.0, 0.01}, {0.1, 3.0, 0.01}};
  CHECK_THROWS_AS(fit_slope(same), Error);
}

TEST_CASE("zero standard errors") {
  // all zero: unweighted fit with a residual-based interval
  std::vector<SlopeRow> rows = power_law(1.0, 0.5, 0.0);
  rows[2].error *= 1.1;
  const SlopeFit f = fit_slope(rows);
  CHECK(f.slope_se > 0.0);
  CHECK(f.ci_low < f.slope);

  const SlopeFit exact = fit_slope(power_law(1.0, 0.5, 0.0));
  CHECK(exact.slope == doctest::Approx(0.5).epsilon(1e-12));

  // a single zero se takes the largest finite weight
  std::vector<SlopeRow> mixed = power_law(1.0, 0.5, 0.02);
  mixed[0].se = 0.0;
  CHECK(fit_slope(mixed).slope == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("two-sample Kolmogorov-Smirnov") {
  CHECK(ks_statistic({1, 2, 3}, {2.5}) == doctest::Approx(2.0 / 3.0));
  CHECK(ks_statistic({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(ks_statistic({1, 2}, {5, 6}) == 1.0);
  CHECK(ks_p_value(0.0, 100, 100) == 1.0);
  CHECK(ks_p_value(1.0, 1000, 1000) < 1e-10);
  // Kolmogorov distribution: P(K > 1.358) = 0.05
  const std::size_t n = 1000000;
  const double ne = n / 2.0;
  const double d = 1.358 / (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne));
  CHECK(ks_p_value(d, n, n) == doctest::Approx(0.05).epsilon(0.01));
  CHECK_THROWS_AS(ks_statistic({}, {1.0}), Error);
}
