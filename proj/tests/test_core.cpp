#include <doctest.h>

#include <atomic>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "rwbsde/errors.hpp"
#include "rwbsde/parallel.hpp"
#include "rwbsde/quadrature.hpp"
#include "rwbsde/rng.hpp"

using namespace rwbsde;

TEST_CASE("counter rng is a pure function of its key") {
  CHECK(rng::counter_hash(1, 2, 3) == rng::counter_hash(1, 2, 3));
  CHECK(rng::counter_hash(1, 2, 3) != rng::counter_hash(1, 2, 4));
  CHECK(rng::counter_hash(1, 2, 3) != rng::counter_hash(1, 3, 3));
  CHECK(rng::counter_hash(1, 2, 3) != rng::counter_hash(2, 2, 3));
  CHECK(rng::normal(7, 1, 10) == rng::normal_pair(7, 1, 5).first);
  CHECK(rng::normal(7, 1, 11) == rng::normal_pair(7, 1, 5).second);
}

TEST_CASE("uniforms stay inside the open unit interval and signs are fair") {
  const int N = 100000;
  double sum = 0.0;
  long long signs = 0;
  for (int i = 0; i < N; ++i) {
    const double u = rng::uniform(3, 0, i);
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    signs += rng::sign(3, 1, i);
  }
  CHECK(std::abs(sum / N - 0.5) < 3.0 * std::sqrt(1.0 / 12.0 / N));
  CHECK(std::abs(static_cast<double>(signs) / N) < 3.0 / std::sqrt(N));
}

TEST_CASE("normals have unit variance and zero skew") {
  const int N = 200000;
  double m1 = 0, m2 = 0, m3 = 0, m4 = 0;
  for (int i = 0; i < N; ++i) {
    const double z = rng::normal(11, 4, i);
    m1 += z;
    m2 += z * z;
    m3 += z * z * z;
    m4 += z * z * z * z;
  }
  m1 /= N;
  m2 /= N;
  m3 /= N;
  m4 /= N;
  CHECK(std::abs(m1) < 3.0 / std::sqrt(N));
  CHECK(std::abs(m2 - 1.0) < 3.0 * std::sqrt(2.0 / N));
  CHECK(std::abs(m3) < 3.0 * std::sqrt(15.0 / N));
  CHECK(std::abs(m4 - 3.0) < 3.0 * std::sqrt(96.0 / N));
}

TEST_CASE("Gauss-Legendre on [0,1] integrates monomials exactly") {
  for (int points : {1, 2, 4, 8}) {
    const QuadratureRule r = gauss_legendre_unit(points);
    REQUIRE(r.nodes.size() == static_cast<std::size_t>(points));
    for (int k = 0; k < 2 * points; ++k) {
      double acc = 0.0;
      for (int i = 0; i < points; ++i) acc += r.weights[i] * std::pow(r.nodes[i], k);
      CHECK(acc == doctest::Approx(1.0 / (k + 1)).epsilon(1e-14));
    }
  }
  const QuadratureRule& t = theta_rule();
  CHECK(t.nodes.size() == 8);
  double acc = 0.0;
  for (std::size_t i = 0; i < 8; ++i) acc += t.weights[i] * std::exp(t.nodes[i]);
  CHECK(acc == doctest::Approx(std::exp(1.0) - 1.0).epsilon(1e-15));
}

TEST_CASE("Gauss-Hermite rule reproduces standard normal moments") {
  for (int points : {64, 256}) {
    const QuadratureRule r = gauss_hermite_normal(points);
    double dfact = 1.0;  // (2k-1)!!
    for (int k = 0; k <= 10; ++k) {
      if (k > 0) dfact *= 2 * k - 1;
      double even = 0.0, odd = 0.0;
      for (std::size_t i = 0; i < r.nodes.size(); ++i) {
        even += r.weights[i] * std::pow(r.nodes[i], 2 * k);
        odd += r.weights[i] * std::pow(r.nodes[i], 2 * k + 1);
      }
      CHECK(even == doctest::Approx(dfact).epsilon(1e-10));
      CHECK(std::abs(odd) < 1e-9 * dfact);
    }
  }
}

TEST_CASE("pairwise summation and standard errors") {
  std::vector<double> v(1000);
  std::iota(v.begin(), v.end(), 1.0);
  CHECK(pairwise_sum(v) == 500500.0);
  const MeanEstimate m = mean_and_se(v);
  CHECK(m.mean == doctest::Approx(500.5));
  // sample variance of 1..N is N(N+1)/12
  CHECK(m.std_error == doctest::Approx(std::sqrt(1000.0 * 1001.0 / 12.0 / 1000.0)));
  CHECK(mean_and_se(std::vector<double>{}).count == 0);
}

TEST_CASE("parallel_for covers every index once and rethrows worker errors") {
  for (unsigned threads : {1U, 2U, 5U}) {
    std::vector<std::atomic<int>> hits(97);
    parallel_for(hits.size(), threads, [&](std::size_t i, unsigned) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i, unsigned) {
                    if (i == 7) throw std::runtime_error("boom");
                  }),
                  std::runtime_error);
}

TEST_CASE("errors carry their kind in the message") {
  const Error e(ErrorKind::Capacity, "too big");
  CHECK(e.kind() == ErrorKind::Capacity);
  CHECK(std::string(e.what()).find("capacity") != std::string::npos);
  CHECK(std::string(e.what()).find("too big") != std::string::npos);
}
