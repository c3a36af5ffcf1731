#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "rwbsde/problems.hpp"
#include "rwbsde/walk.hpp"

namespace rwbsde::testing {

// Hand-built problems for cases the registry does not cover.

inline ProblemSpec affine_problem(double mu, double sigma) {
  ProblemSpec p;
  p.name = "affine";
  p.horizon = 1.0;
  p.drift = [mu](double, double) { return mu; };
  p.diffusion = [sigma](double, double) { return sigma; };
  p.drift_x = [](double, double) { return 0.0; };
  p.diffusion_x = [](double, double) { return 0.0; };
  p.generator = [](double, double, double, double) { return 0.0; };
  p.terminal = [](double x) { return x; };
  p.zero_generator = true;
  p.lipschitz_f = 0.0;
  p.delta = sigma > 0.0 ? sigma : 1.0;
  return p;
}

/// b = 0, sigma(t, x) = s0 x.
inline ProblemSpec linear_sigma_problem(double s0) {
  ProblemSpec p = affine_problem(0.0, 1.0);
  p.name = "linear-sigma";
  p.diffusion = [s0](double, double x) { return s0 * x; };
  p.diffusion_x = [s0](double, double) { return s0; };
  p.delta = 0.1;
  return p;
}

/// Smooth state-dependent coefficients with a nonzero generator.
inline ProblemSpec wavy_problem() {
  ProblemSpec p;
  p.name = "wavy";
  p.horizon = 1.0;
  p.drift = [](double t, double x) { return 0.3 * std::tanh(x) + 0.1 * t; };
  p.drift_x = [](double, double x) { return 0.3 / (std::cosh(x) * std::cosh(x)); };
  p.diffusion = [](double, double x) { return 1.0 + 0.3 * std::exp(-x * x); };
  p.diffusion_x = [](double, double x) { return -0.6 * x * std::exp(-x * x); };
  p.generator = [](double, double x, double y, double z) { return 0.2 * std::cos(x) - 0.1 * y + 0.1 * std::sin(z); };
  p.terminal = [](double x) { return std::cos(x) + 0.1 * x; };
  p.terminal_d1 = [](double x) { return -std::sin(x) + 0.1; };
  p.lipschitz_f = 0.4;
  p.delta = 0.9;
  return p;
}

inline Signs signs_of(std::uint64_t path, int n) {
  Signs e(n);
  for (int j = 0; j < n; ++j) e[j] = ((path >> j) & 1U) ? 1 : -1;
  return e;
}

}  // namespace rwbsde::testing
