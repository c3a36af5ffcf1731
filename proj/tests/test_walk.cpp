#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "rwbsde/errors.hpp"
#include "rwbsde/problems.hpp"
#include "rwbsde/walk.hpp"
#include "support.hpp"

using namespace rwbsde;
using testing::signs_of;

TEST_CASE("grid times are computed, not accumulated") {
  const WalkGrid g(3, 0.7);
  CHECK(g.time(3) == 0.7);
  CHECK(g.h() == 0.7 / 3);
  for (int n : {1, 7, 10, 96, 1000}) CHECK(WalkGrid(n, 1.3).time(n) == 1.3);
  CHECK_THROWS_AS(WalkGrid(0, 1.0), Error);
  CHECK_THROWS_AS(WalkGrid(4, 0.0), Error);
}

TEST_CASE("scaled walk on the all-up path") {
  const WalkGrid g(4, 1.0);
  const Signs up{1, 1, 1, 1};
  const auto b = scaled_walk(g, up);
  const std::vector<double> expect{0.0, 0.5, 1.0, 1.5, 2.0};
  CHECK(b == expect);
}

TEST_CASE("antithetic signs mirror the walk") {
  const WalkGrid g(16, 1.0);
  Signs e = rademacher_path(g, 9, 3);
  Signs m(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) m[i] = static_cast<std::int8_t>(-e[i]);
  const auto a = scaled_walk(g, e), b = scaled_walk(g, m);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == -b[k]);
  CHECK(rademacher_path(g, 9, 3) == e);
}

TEST_CASE("exhaustive moments of the walk") {
  for (int n = 1; n <= 12; ++n) {
    const WalkGrid g(n, 1.0);
    double m1 = 0.0, m2 = 0.0;
    const std::uint64_t paths = 1ULL << n;
    for (std::uint64_t w = 0; w < paths; ++w) {
      const double bt = scaled_walk(g, signs_of(w, n)).back();
      m1 += bt;
      m2 += bt * bt;
    }
    CHECK(std::abs(m1 / paths) < 1e-12);
    CHECK(std::abs(m2 / paths - 1.0) < 1e-12);
  }
}

TEST_CASE("forward walk examples") {
  const WalkGrid g(4, 1.0);
  const Signs e{1, -1, -1, 1};
  const WalkPath bm = forward_walk(testing::affine_problem(0.0, 1.0), g, e, 0, 0.0);
  CHECK(bm.xwalk == scaled_walk(g, e));

  const WalkPath drift = forward_walk(testing::affine_problem(1.0, 0.0), g, e, 0, 0.0);
  const std::vector<double> expect{0.0, 0.25, 0.5, 0.75, 1.0};
  CHECK(drift.xwalk == expect);

  const ProblemSpec sine = builtin_problem("sine-coeffs");
  const WalkGrid g2(2, 1.0);
  const WalkPath w = forward_walk(sine, g2, Signs{1, -1}, 0, 0.0);
  const double r = std::sqrt(0.5);
  const double x1 = 0.0 + 0.5 * 0.1 * std::sin(0.0) + r * (1.0 + 0.25 * std::cos(0.0));
  const double x2 = x1 + 0.5 * 0.1 * std::sin(x1) - r * (1.0 + 0.25 * std::cos(x1));
  CHECK(w.xwalk[1] == doctest::Approx(x1).epsilon(1e-15));
  CHECK(w.xwalk[2] == doctest::Approx(x2).epsilon(1e-15));

  // conditional start
  const WalkPath tail = forward_walk(sine, g, e, 2, 0.3);
  CHECK(tail.xwalk[2] == 0.3);
  CHECK(tail.xwalk[3] == step_state(sine, g, 3, 0.3, e[2]));

  // recursion holds exactly at each step
  for (int j = 1; j <= 4; ++j) {
    const double prev = tail.xwalk[j - 1];
    if (j <= 2) continue;
    CHECK(tail.xwalk[j] == (prev + g.h() * sine.drift(g.time(j), prev)) + g.sqrt_h() * sine.diffusion(g.time(j), prev) * e[j - 1]);
  }
}

TEST_CASE("non-finite coefficients name the step") {
  ProblemSpec p = testing::affine_problem(0.0, 1.0);
  p.drift = [](double, double x) { return x > 0.6 ? std::numeric_limits<double>::quiet_NaN() : 0.0; };
  try {
    forward_walk(p, WalkGrid(4, 1.0), Signs{1, 1, 1, 1}, 0, 0.0);
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numeric);
    CHECK(std::string(e.what()).find("step 3") != std::string::npos);
  }
}

TEST_CASE("shift operators") {
  const WalkGrid g(4, 1.0);
  const PathFunctional e2 = sign_functional(4, 2);
  const PathFunctional bt = walk_functional(g, 4);
  const PathFunctional e1 = sign_functional(4, 1);
  for (std::uint64_t w = 0; w < 16; ++w) {
    const Signs s = signs_of(w, 4);
    CHECK(shift(e2, 2, 1)(s) == 1.0);
    CHECK(shift(e1, 2, 1)(s) == e1(s));
    CHECK(shift(e1, 2, -1)(s) == e1(s));
    CHECK(shift(bt, 2, 1)(s) - shift(bt, 2, -1)(s) == 1.0);
    CHECK(shift(shift(bt, 3, 1), 3, 1)(s) == shift(bt, 3, 1)(s));
  }
  CHECK(shift(e2, 2, 1).depends_on().count(2) == 0);
  CHECK_THROWS_AS(shift(e2, 5, 1), Error);
  CHECK_THROWS_AS(shift(e2, 0, 1), Error);
}

TEST_CASE("discrete Malliavin derivative") {
  const int n = 5;
  const WalkGrid g(n, 1.0);
  const PathFunctional bt = walk_functional(g, n);
  const PathFunctional prod(n, [](std::span<const std::int8_t> e) { return double(e[0] * e[1]); }, {1, 2});
  const PathFunctional e3 = sign_functional(n, 3);
  const PathFunctional mix = linear_combination(2.0, prod, -0.5, e3);
  for (std::uint64_t w = 0; w < (1U << n); ++w) {
    const Signs s = signs_of(w, n);
    for (int m = 1; m <= n; ++m) CHECK(discrete_malliavin(bt, m, g)(s) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(discrete_malliavin(prod, 1, g)(s) == doctest::Approx(s[1] / g.sqrt_h()).epsilon(1e-15));
    CHECK(discrete_malliavin(e3, 4, g)(s) == 0.0);
    for (int m = 1; m <= n; ++m)
      CHECK(discrete_malliavin(mix, m, g)(s) ==
            doctest::Approx(2.0 * discrete_malliavin(prod, m, g)(s) - 0.5 * discrete_malliavin(e3, m, g)(s)));
  }
  CHECK_THROWS_AS(discrete_malliavin(bt, n + 1, g), Error);
}

TEST_CASE("variational walk") {
  const WalkGrid g(6, 1.0);
  const Signs e{1, -1, 1, 1, -1, -1};
  for (double v : variational_walk(testing::affine_problem(0.3, 0.7), g, e, 0, 0.2)) CHECK(v == 1.0);

  const double s0 = 0.4;
  const auto grad = variational_walk(testing::linear_sigma_problem(s0), g, e, 2, 1.5);
  double prod = 1.0;
  CHECK(grad[0] == 1.0);
  for (int m = 3; m <= 6; ++m) {
    prod *= 1.0 + s0 * g.sqrt_h() * e[m - 1];
    CHECK(grad[m - 2] == doctest::Approx(prod).epsilon(1e-14));
  }

  // finite-difference oracle on state-dependent coefficients
  for (const ProblemSpec& p : {builtin_problem("sine-coeffs"), testing::wavy_problem()}) {
    const WalkGrid gg(10, 1.0);
    const Signs ee = rademacher_path(gg, 4, 0);
    const double x = 0.37, d = 1e-4;
    const auto gr = variational_walk(p, gg, ee, 3, x);
    const WalkPath up = forward_walk(p, gg, ee, 3, x + d), dn = forward_walk(p, gg, ee, 3, x - d);
    for (int m = 3; m <= 10; ++m) CHECK(gr[m - 3] == doctest::Approx((up.xwalk[m] - dn.xwalk[m]) / (2 * d)).epsilon(1e-7));
  }

  ProblemSpec none = testing::affine_problem(0.0, 1.0);
  none.drift_x = nullptr;
  try {
    variational_walk(none, g, e, 0, 0.0);
    FAIL("expected a capability error");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::Capability);
  }
}

TEST_CASE("Malliavin walk examples") {
  const WalkGrid g(5, 1.0);
  const Signs e{1, 1, -1, 1, -1};
  const WalkPath path = forward_walk(testing::affine_problem(0.0, 0.8), g, e, 0, 0.0);
  for (double v : malliavin_walk(testing::affine_problem(0.0, 0.8), path, 2)) CHECK(v == 0.8);

  const ProblemSpec sine = builtin_problem("sine-coeffs");
  const WalkGrid g2(2, 1.0);
  const WalkPath p2 = forward_walk(sine, g2, Signs{-1, 1}, 0, 0.25);
  CHECK(malliavin_walk(sine, p2, 1)[0] == sine.diffusion(g2.time(1), 0.25));
  CHECK_THROWS_AS(malliavin_walk(sine, p2, 0), Error);
  CHECK_THROWS_AS(malliavin_walk(sine, p2, 3), Error);
}

TEST_CASE("Malliavin walk is the discrete derivative of the walk on every path") {
  for (const ProblemSpec& p : {builtin_problem("sine-coeffs"), testing::wavy_problem()}) {
    for (int n : {2, 5, 8}) {
      const WalkGrid g(n, 1.0);
      const double x0 = 0.4;
      double worst = 0.0;
      for (int m = 0; m <= n; ++m) {
        const PathFunctional xm = state_functional(p, g, x0, m);
        for (int k = 1; k <= m; ++k) {
          const PathFunctional dx = discrete_malliavin(xm, k, g);
          for (std::uint64_t w = 0; w < (1U << n); ++w) {
            const Signs s = signs_of(w, n);
            const WalkPath path = forward_walk(p, g, s, 0, x0);
            const double rec = malliavin_walk(p, path, k)[m - k];
            worst = std::max(worst, std::abs(rec - dx(s)));
          }
        }
      }
      CAPTURE(p.name);
      CAPTURE(n);
      // 8-point Gauss-Legendre quotients: exact to rounding for the registry
      // coefficients, ~1e-10 for the sharper Gaussian bump of the wavy problem
      CHECK(worst < (p.name == "wavy" ? 1e-9 : 1e-12));
    }
  }
}

TEST_CASE("discrete weight reduces to the increment for constant coefficients") {
  const double s0 = 0.7;
  const ProblemSpec p = testing::affine_problem(0.2, s0);
  const WalkGrid g(8, 1.0);
  const Signs e = rademacher_path(g, 2, 5);
  const WalkPath path = forward_walk(p, g, e, 0, 0.0);
  const auto b = scaled_walk(g, e);
  for (int k = 0; k < 8; ++k)
    for (int l = k + 1; l <= 8; ++l)
      CHECK(discrete_weight(p, path, k, l) == doctest::Approx((b[l] - b[k]) / (s0 * (g.time(l) - g.time(k)))));
  CHECK_THROWS_AS(discrete_weight(p, path, 3, 3), Error);
}

TEST_CASE("conditional mean of the discrete weight vanishes and its norm is bounded") {
  for (const ProblemSpec& p : {builtin_problem("sine-coeffs"), testing::wavy_problem()}) {
    const int n = 8;
    const WalkGrid g(n, 1.0);
    const std::uint64_t paths = 1ULL << n;
    // kappa-hat over the whole enumeration: sup |nabla X| / inf sigma
    double grad_max = 0.0, inv_sigma_max = 0.0;
    for (std::uint64_t w = 0; w < paths; ++w) {
      const Signs s = signs_of(w, n);
      const WalkPath path = forward_walk(p, g, s, 0, 0.1);
      for (int k = 0; k < n; ++k)
        for (double v : variational_walk(p, g, s, k, path.xwalk[k])) grad_max = std::max(grad_max, std::abs(v));
      for (int m = 1; m <= n; ++m) inv_sigma_max = std::max(inv_sigma_max, 1.0 / p.diffusion(g.time(m), path.xwalk[m - 1]));
    }
    for (int k = 0; k < n; ++k) {
      for (std::uint64_t pre = 0; pre < (1ULL << k); ++pre) {
        for (int l = k + 1; l <= n; ++l) {
          double mean = 0.0, sq = 0.0;
          const std::uint64_t tails = 1ULL << (n - k);
          for (std::uint64_t t = 0; t < tails; ++t) {
            const WalkPath path = forward_walk(p, g, signs_of(pre | (t << k), n), 0, 0.1);
            const double w = discrete_weight(p, path, k, l);
            mean += w;
            sq += w * w;
          }
          CHECK(std::abs(mean / tails) < 1e-12);
          CHECK(std::sqrt(sq / tails) * std::sqrt(g.time(l) - g.time(k)) <= grad_max * inv_sigma_max * (1 + 1e-12));
        }
      }
    }
  }
}

TEST_CASE("discrete weight rejects degenerate diffusion") {
  ProblemSpec p = testing::linear_sigma_problem(1.0);
  p.delta = 0.5;
  const WalkGrid g(4, 1.0);
  const WalkPath path = forward_walk(p, g, Signs{1, 1, 1, 1}, 0, 0.1);
  try {
    discrete_weight(p, path, 0, 2);
    FAIL("expected an ellipticity error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Ellipticity);
  }
}

TEST_CASE("variational and Malliavin walks approach each other") {
  // E max_m |nabla X_{t_m} - D_{k+1} X_{t_m} / sigma(t_{k+1}, X_{t_k})|^2 at k = n/2 by enumeration.
  const ProblemSpec p = testing::wavy_problem();
  double prev = 1e300;
  for (int n : {4, 8, 12}) {
    const WalkGrid g(n, 1.0);
    const int k = n / 2;
    double acc = 0.0;
    const std::uint64_t paths = 1ULL << n;
    for (std::uint64_t w = 0; w < paths; ++w) {
      const Signs s = signs_of(w, n);
      const WalkPath path = forward_walk(p, g, s, 0, 0.2);
      const auto grad = variational_walk(p, g, s, k, path.xwalk[k]);
      const auto dm = malliavin_walk(p, path, k + 1);
      const double sig = p.diffusion(g.time(k + 1), path.xwalk[k]);
      double worst = 0.0;
      for (int m = k + 1; m <= n; ++m) worst = std::max(worst, std::abs(grad[m - k] - dm[m - k - 1] / sig));
      acc += worst * worst;
    }
    const double est = acc / paths;
    CAPTURE(n);
    CHECK(est <= prev);
    prev = est;
  }
}

TEST_CASE("walk CSV export") {
  const WalkGrid g(3, 1.0);
  std::ostringstream os;
  write_walk_csv(os, forward_walk(testing::affine_problem(0.0, 1.0), g, Signs{1, -1, 1}, 0, 0.0));
  const std::string s = os.str();
  CHECK(s.rfind("k,eps,x\n", 0) == 0);
  CHECK(std::count(s.begin(), s.end(), '\n') == 5);
}
