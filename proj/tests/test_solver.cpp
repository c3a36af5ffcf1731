#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rwbsde/errors.hpp"
#include "rwbsde/problems.hpp"
#include "rwbsde/solver.hpp"
#include "support.hpp"

using namespace rwbsde;
using testing::signs_of;

namespace {

// Tree node index of a sign prefix: epsilon_1 is the most significant bit.
std::size_t node_of(const Signs& e, int k) {
  std::size_t i = 0;
  for (int j = 0; j < k; ++j) i = 2 * i + (e[j] > 0 ? 1 : 0);
  return i;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Numeric;
}

}  // namespace

TEST_CASE("one-step children") {
  const WalkGrid g(4, 1.0);
  const StepStates c = one_step_states(testing::affine_problem(0.0, 1.0), g, 0, 0.0);
  CHECK(c.up == 0.5);
  CHECK(c.down == -0.5);
  const StepStates d = one_step_states(testing::affine_problem(1.0, 2.0), g, 2, 1.0);
  CHECK(d.up == 1.0 + 0.25 + 1.0);
  CHECK(d.down == 1.0 + 0.25 - 1.0);
  CHECK(kind_of([&] { one_step_states(testing::affine_problem(0.0, 1.0), g, 4, 0.0); }) == ErrorKind::Domain);
}

TEST_CASE("implicit step examples") {
  const WalkGrid g(4, 1.0);
  const ImplicitStep s = implicit_step(testing::affine_problem(0.0, 1.0), g, 0, 0.0, 0.5, -0.5);
  CHECK(s.value == 0.0);
  CHECK(s.z == 1.0);

  const ProblemSpec bond = builtin_problem("discounted-bond", {{"r", 0.5}});
  const ImplicitStep b = implicit_step(bond, g, 1, 0.0, 1.0, 1.0);
  CHECK(b.value == doctest::Approx(1.0 / (1.0 + 0.5 * 0.25)).epsilon(1e-13));
  CHECK(b.z == 0.0);
  CHECK(b.residual < 1e-12);

  ProblemSpec stiff = bond;
  stiff.lipschitz_f = 8.0;
  CHECK(kind_of([&] { implicit_step(stiff, g, 0, 0.0, 1.0, 1.0); }) == ErrorKind::Config);

  ProblemSpec slow = builtin_problem("discounted-bond", {{"r", 3.9}});
  CHECK(kind_of([&] { implicit_step(slow, g, 0, 0.0, 1.0, 1.0, {1e-12, 3}); }) == ErrorKind::Convergence);
}

TEST_CASE("path tree on Brownian problems") {
  const WalkGrid g(2, 1.0);
  const DiscreteSolution id = solve_tree(builtin_problem("brownian-identity"), g);
  CHECK(id.node_count(2) == 4);
  CHECK(y_at(id, 0, 0.0) == 0.0);
  CHECK(z_at(id, 0, 0.0) == doctest::Approx(1.0).epsilon(1e-15));

  const DiscreteSolution sq = solve_tree(builtin_problem("brownian-square"), g);
  CHECK(y_at(sq, 0, 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(y_at(sq, 1, std::sqrt(0.5)) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(z_at(sq, 0, 0.0) == doctest::Approx(0.0).epsilon(1e-15));

  // u^n(t_m, x) = x^2 + T - t_m exactly on every node
  const WalkGrid g8(8, 1.0);
  const DiscreteSolution s8 = solve_tree(builtin_problem("brownian-square"), g8);
  for (int m = 0; m < 8; ++m)
    for (std::size_t i = 0; i < s8.node_count(m); ++i) {
      const double x = s8.node_state(m, i);
      CHECK(s8.node_value(m, i) == doctest::Approx(x * x + 1.0 - g8.time(m)).epsilon(1e-13));
      CHECK(z_at(s8, m, x) == doctest::Approx(2.0 * x).epsilon(1e-12));
    }
}

TEST_CASE("discounted bond discounts once per step") {
  for (int n : {1, 4, 10}) {
    const WalkGrid g(n, 1.0);
    const DiscreteSolution s = solve_tree(builtin_problem("discounted-bond", {{"r", 0.05}}), g);
    CHECK(y_at(s, 0, 0.0) == doctest::Approx(std::pow(1.0 + 0.05 / n, -n)).epsilon(1e-13));
    CHECK(std::abs(z_at(s, 0, 0.0)) < 1e-13);
  }
}

TEST_CASE("tree capacity and lookup") {
  const WalkGrid g(23, 1.0);
  CHECK(kind_of([&] { solve_tree(builtin_problem("brownian-identity"), g); }) == ErrorKind::Capacity);
  CHECK(kind_of([&] { solve_tree(builtin_problem("brownian-identity"), WalkGrid(6, 1.0), 0.0, {}, 5); }) ==
        ErrorKind::Capacity);
  const DiscreteSolution s = solve_tree(builtin_problem("brownian-identity"), WalkGrid(4, 1.0));
  CHECK(kind_of([&] { y_at(s, 2, 0.1); }) == ErrorKind::StateLookup);
  CHECK(kind_of([&] { z_at(s, 4, 0.0); }) == ErrorKind::Domain);
}

TEST_CASE("tree nodes coincide with walk states") {
  const ProblemSpec p = builtin_problem("sine-coeffs");
  const WalkGrid g(10, 1.0);
  const DiscreteSolution s = solve_tree(p, g, 0.3);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Signs e = rademacher_path(g, seed);
    const WalkPath w = forward_walk(p, g, e, 0, 0.3);
    for (int k = 0; k <= 10; ++k) {
      CHECK(s.find_node(k, w.xwalk[k]) == node_of(e, k));
      CHECK(s.node_state(k, node_of(e, k)) == w.xwalk[k]);
    }
  }
}

TEST_CASE("tree agrees with brute-force conditional averaging") {
  std::vector<ProblemSpec> problems;
  for (const auto& name : builtin_problem_names()) problems.push_back(builtin_problem(name));
  problems.push_back(testing::wavy_problem());
  for (const ProblemSpec& p : problems) {
    for (int n = 1; n <= 6; ++n) {
      CAPTURE(p.name);
      CAPTURE(n);
      const WalkGrid g(n, p.horizon);
      const DiscreteSolution s = solve_tree(p, g, 0.2);
      const BruteForceTables bf = brute_force_solution(p, g, 0.2);
      double worst = 0.0;
      for (std::uint64_t w = 0; w < (1ULL << n); ++w) {
        const Signs e = signs_of(w, n);
        for (int k = 0; k <= n; ++k) {
          const std::size_t i = node_of(e, k);
          CHECK(s.node_state(k, i) == bf.x[k][w]);
          worst = std::max(worst, std::abs(s.node_value(k, i) - bf.y[k][w]));
          if (k < n) worst = std::max(worst, std::abs(z_at(s, k, bf.x[k][w]) - bf.z[k][w]));
        }
      }
      CHECK(worst < 1e-12);
    }
  }
  CHECK(kind_of([] { brute_force_solution(testing::wavy_problem(), WalkGrid(13, 1.0)); }) == ErrorKind::Capacity);
}

TEST_CASE("z equals the conditional mean of the discrete derivative of g when f = 0") {
  const ProblemSpec p = builtin_problem("exp-diffusion");
  const int n = 8;
  const WalkGrid g(n, 1.0);
  const DiscreteSolution s = solve_tree(p, g);
  const PathFunctional gx(n, [&](std::span<const std::int8_t> e) {
    return p.terminal(forward_walk(p, g, e, 0, 0.0).xwalk[n]);
  }, {1, 2, 3, 4, 5, 6, 7, 8});
  for (int k = 0; k < n; ++k) {
    const PathFunctional d = discrete_malliavin(gx, k + 1, g);
    for (std::uint64_t pre = 0; pre < (1ULL << k); ++pre) {
      double mean = 0.0;
      const std::uint64_t tails = 1ULL << (n - k);
      for (std::uint64_t t = 0; t < tails; ++t) mean += d(signs_of(pre | (t << k), n));
      mean /= static_cast<double>(tails);
      const Signs e = signs_of(pre, n);
      const double x = forward_walk(p, g, e, 0, 0.0).xwalk[k];
      CHECK(z_at(s, k, x) == doctest::Approx(mean).epsilon(1e-12));
    }
  }
}

TEST_CASE("defining relation residual stays at the fixed-point tolerance") {
  for (const char* name : {"sine-coeffs", "discounted-bond", "lipschitz-call"}) {
    const DiscreteSolution s = solve_tree(builtin_problem(name), WalkGrid(12, 1.0));
    CHECK(defining_relation_residual(s) < 1e-11);
  }
  const DiscreteSolution gsol = solve_grid(builtin_problem("sine-coeffs"), WalkGrid(12, 1.0), XGrid{-8, 8, 801});
  CHECK(defining_relation_residual(gsol) < 1e-11);
}

TEST_CASE("comparison principle") {
  ProblemSpec lo = testing::wavy_problem();
  ProblemSpec hi = lo;
  hi.terminal = [](double x) { return std::cos(x) + 0.1 * x + 0.05 * (1.0 + std::sin(3 * x)); };
  const WalkGrid g(10, 1.0);
  const DiscreteSolution a = solve_tree(lo, g), b = solve_tree(hi, g);
  for (int m = 0; m <= 10; ++m)
    for (std::size_t i = 0; i < a.node_count(m); ++i) CHECK(a.node_value(m, i) <= b.node_value(m, i));
}

TEST_CASE("spatial grid reproduces quadratic and linear solutions") {
  const WalkGrid g(64, 1.0);
  const DiscreteSolution sq = solve_grid(builtin_problem("brownian-square"), g, XGrid{});
  CHECK(std::abs(y_at(sq, 0, 0.0) - 1.0) < 1e-6);
  CHECK(std::abs(y_at(sq, 32, 0.5) - 0.75) < 1e-6);
  CHECK(std::abs(z_at(sq, 10, 0.3) - 0.6) < 1e-6);

  const DiscreteSolution id = solve_grid(builtin_problem("brownian-identity"), g, XGrid{});
  for (double x : {-1.0, 0.0, 0.37}) {
    CHECK(y_at(id, 0, x) == doctest::Approx(x).epsilon(1e-12));
    CHECK(z_at(id, 0, x) == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("spatial grid agrees with the tree and improves with refinement") {
  const ProblemSpec p = builtin_problem("sine-coeffs");
  const WalkGrid g(10, 1.0);
  const DiscreteSolution tree = solve_tree(p, g, 0.0);
  const double exact = y_at(tree, 0, 0.0);
  const DiscreteSolution fine = solve_grid(p, g, XGrid{-8, 8, 8001});
  CHECK(std::abs(y_at(fine, 0, 0.0) - exact) < 1e-6);
  double prev = 1e300;
  for (int points : {101, 401, 1601}) {
    const double err = std::abs(y_at(solve_grid(p, g, XGrid{-8, 8, points}), 0, 0.0) - exact);
    CAPTURE(points);
    CHECK(err < prev);
    prev = err;
  }
  // linear g is exact on the grid too
  const DiscreteSolution lin = solve_grid(testing::affine_problem(0.2, 1.0), g, XGrid{-6, 6, 401});
  CHECK(y_at(lin, 0, 0.5) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("spatial grid domain and truncation") {
  const WalkGrid g(4, 1.0);
  CHECK(kind_of([&] { solve_grid(builtin_problem("brownian-square"), g, XGrid{-0.3, 0.3, 7}); }) ==
        ErrorKind::Domain);
  CHECK(kind_of([&] { solve_grid(builtin_problem("brownian-square"), g, XGrid{1, 0, 7}); }) == ErrorKind::Config);
  const DiscreteSolution s = solve_grid(builtin_problem("brownian-identity"), g, XGrid{-4, 4, 81});
  CHECK(s.diagnostics().truncated_children > 0);
  bool truncated = false;
  y_at(s, 0, 0.0);
  s.value(1, 5.0, &truncated);
  CHECK(truncated);
  s.value(1, 0.0, &truncated);
  CHECK_FALSE(truncated);
  CHECK(kind_of([&] { s.node_count(0); }) == ErrorKind::Capability);
}

TEST_CASE("monotone cubic interpolant") {
  const MonotoneCubic lin(0.0, 0.5, {1.0, 2.0, 3.0, 4.0});
  CHECK(lin(0.7) == doctest::Approx(2.4));
  CHECK(lin(-1.0) == doctest::Approx(-1.0));
  CHECK(lin(2.5) == doctest::Approx(6.0));
  CHECK(lin(1.0) == 3.0);

  // monotone data stays monotone and inside the data range between nodes
  const MonotoneCubic step(0.0, 1.0, {0.0, 0.0, 0.1, 1.0, 1.0, 1.0});
  double prev = -1.0;
  for (int i = 0; i <= 500; ++i) {
    const double v = step(i * 0.01);
    CHECK(v >= prev - 1e-15);
    CHECK(v <= 1.0 + 1e-15);
    prev = v;
  }
  CHECK_THROWS_AS(MonotoneCubic(0.0, 1.0, {1.0}), Error);
}

TEST_CASE("Zhat coincides with Z when f = 0") {
  for (const char* name : {"brownian-square", "exp-diffusion", "lipschitz-call"}) {
    const ProblemSpec p = builtin_problem(name);
    const WalkGrid g(10, 1.0);
    const DiscreteSolution s = solve_tree(p, g);
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const WalkPath w = forward_walk(p, g, rademacher_path(g, seed), 0, 0.0);
      for (int k : {0, 3, 8}) {
        const ZhatEstimate e = zhat_at(s, k, w.xwalk[k]);
        CHECK(e.value == doctest::Approx(z_at(s, k, w.xwalk[k])).epsilon(1e-12));
        CHECK(e.generator_part == 0.0);
        CHECK(e.std_error == 0.0);
        CHECK(e.paths == (std::size_t{2} << (10 - k - 1)));
      }
    }
  }
}

TEST_CASE("Zhat for the discounted bond vanishes") {
  const ProblemSpec p = builtin_problem("discounted-bond");
  const WalkGrid g(8, 1.0);
  const DiscreteSolution s = solve_tree(p, g);
  CHECK(std::abs(zhat_at(s, 0, 0.0).value) < 1e-13);
  CHECK(std::abs(zhat_at(s, 3, s.node_state(3, 5)).value) < 1e-13);
}

TEST_CASE("Monte Carlo Zhat is consistent with the exact average") {
  const ProblemSpec p = builtin_problem("sine-coeffs");
  const WalkGrid g(12, 1.0);
  const DiscreteSolution s = solve_tree(p, g);
  const double x = s.node_state(2, 1);
  const ZhatEstimate exact = zhat_at(s, 2, x);
  ZhatOptions mc;
  mc.mode = ZhatMode::MonteCarlo;
  mc.samples = 4000;
  mc.seed = 5;
  const ZhatEstimate est = zhat_at(s, 2, x, mc);
  CHECK(est.std_error > 0.0);
  CHECK(std::abs(est.value - exact.value) < 4.0 * est.std_error);
  CHECK(exact.generator_part != 0.0);
  // weight representation differs from the direct difference quotient by O(h)
  CHECK(std::abs(exact.value - z_at(s, 2, x)) < 0.05);
}

TEST_CASE("Zhat errors") {
  const WalkGrid g(6, 1.0);
  const DiscreteSolution s = solve_tree(builtin_problem("sine-coeffs"), g);
  CHECK(kind_of([&] { zhat_at(s, 5, s.node_state(5, 0)); }) == ErrorKind::Domain);
  ZhatOptions small;
  small.tree_cap = 4;
  CHECK(kind_of([&] { zhat_at(s, 0, 0.0, small); }) == ErrorKind::Capacity);
  ProblemSpec bare = testing::wavy_problem();
  bare.drift_x = nullptr;
  const DiscreteSolution sb = solve_tree(bare, g);
  CHECK(kind_of([&] { zhat_at(sb, 0, 0.0); }) == ErrorKind::Capability);
}

TEST_CASE("solution CSV and diagnostics") {
  const DiscreteSolution s = solve_tree(builtin_problem("brownian-identity"), WalkGrid(3, 1.0));
  std::ostringstream os;
  write_solution_csv(os, s);
  const std::string text = os.str();
  CHECK(text.rfind("m,key,x,u,z\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 1 + 2 + 4 + 8);
  const auto d = diagnostics_json(s);
  CHECK(d["backend"] == "path-tree");
  CHECK(d["iterations"].size() == 3);
  CHECK(d["defining_relation_residual"].get<double>() < 1e-12);
}
