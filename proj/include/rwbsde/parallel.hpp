#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <functional>
#include <span>
#include <thread>
#include <vector>

namespace rwbsde {

/// Resolves a user thread request; 0 means hardware concurrency.
inline unsigned resolve_threads(unsigned requested) {
  if (requested != 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1U : hw;
}

/// Static block partition of [0, count) over `threads` workers. `body(i, worker)`
/// must only write to slots owned by index i (or worker-private scratch).
/// The first exception thrown by any worker is rethrown on the caller.
inline void parallel_for(std::size_t count, unsigned threads,
                         const std::function<void(std::size_t, unsigned)>& body) {
  threads = std::max(1U, std::min<unsigned>(resolve_threads(threads),
                                            static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i, 0);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const std::size_t chunk = (count + threads - 1) / threads;
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      const std::size_t lo = w * chunk;
      const std::size_t hi = std::min(count, lo + chunk);
      try {
        for (std::size_t i = lo; i < hi; ++i) body(i, w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Pairwise summation in a fixed tree order; the result depends only on the
/// input values and their order.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t mid = v.size() / 2;
  return pairwise_sum(v.first(mid)) + pairwise_sum(v.subspan(mid));
}

/// Mean and standard error of the mean, both by pairwise summation.
struct MeanEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t count = 0;
};

inline MeanEstimate mean_and_se(std::span<const double> v) {
  MeanEstimate out;
  out.count = v.size();
  if (v.empty()) return out;
  const double n = static_cast<double>(v.size());
  out.mean = pairwise_sum(v) / n;
  if (v.size() < 2) return out;
  std::vector<double> dev(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) dev[i] = (v[i] - out.mean) * (v[i] - out.mean);
  const double var = pairwise_sum(dev) / (n - 1.0);
  out.std_error = std::sqrt(var / n);
  return out;
}

}  // namespace rwbsde
