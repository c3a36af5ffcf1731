#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

namespace rwbsde::rng {

// Counter-based generator: every draw is a pure function of
// (seed, stream, counter), so results never depend on evaluation order or on
// how samples are distributed over threads.

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t stream,
                                     std::uint64_t counter) noexcept {
  std::uint64_t h = splitmix64(seed ^ 0x5bd1e9955bd1e995ULL);
  h = splitmix64(h ^ stream);
  h = splitmix64(h ^ (counter * 0xd6e8feb86659fd93ULL));
  return h;
}

/// Uniform on the open interval (0, 1).
constexpr double uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) noexcept {
  return (static_cast<double>(counter_hash(seed, stream, counter) >> 11) + 0.5) * 0x1.0p-53;
}

constexpr std::int8_t sign(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) noexcept {
  return (counter_hash(seed, stream, counter) >> 63) ? std::int8_t{1} : std::int8_t{-1};
}

/// Two independent standard normals (Box-Muller) for one pair counter.
inline std::pair<double, double> normal_pair(std::uint64_t seed, std::uint64_t stream,
                                             std::uint64_t pair_counter) noexcept {
  const double u1 = uniform(seed, stream, 2 * pair_counter);
  const double u2 = uniform(seed, stream, 2 * pair_counter + 1);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(a), r * std::sin(a)};
}

/// Standard normal keyed on (seed, stream, counter); counters 2j and 2j+1
/// share one Box-Muller pair.
inline double normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) noexcept {
  const auto [z0, z1] = normal_pair(seed, stream, counter / 2);
  return (counter & 1U) ? z1 : z0;
}

}  // namespace rwbsde::rng
