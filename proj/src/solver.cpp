#include "rwbsde/solver.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "rwbsde/errors.hpp"
#include "rwbsde/parallel.hpp"
#include "rwbsde/rng.hpp"

namespace rwbsde {

const char* to_string(Backend backend) noexcept {
  return backend == Backend::PathTree ? "path-tree" : "spatial-grid";
}

StepStates one_step_states(const ProblemSpec& p, const WalkGrid& grid, int m, double x) {
  if (m < 0 || m >= grid.steps()) throw Error(ErrorKind::Domain, "one-step level outside 0..n-1");
  return {step_state(p, grid, m + 1, x, 1), step_state(p, grid, m + 1, x, -1)};
}

ImplicitStep implicit_step(const ProblemSpec& p, const WalkGrid& grid, int m, double x, double u_up, double u_down,
                           const FixedPointOptions& opts) {
  const double h = grid.h();
  if (p.lipschitz_f && h * *p.lipschitz_f >= 1.0) {
    std::ostringstream os;
    os << "h * L_f = " << h * *p.lipschitz_f << " >= 1: the implicit step is not a contraction";
    throw Error(ErrorKind::Config, os.str());
  }
  if (!std::isfinite(u_up) || !std::isfinite(u_down)) throw Error(ErrorKind::Numeric, "continuation values not finite");
  const double t = grid.time(m + 1);
  const double mean = 0.5 * (u_up + u_down);
  ImplicitStep out;
  out.z = (u_up - u_down) / (2.0 * grid.sqrt_h());
  double y = mean;
  for (int it = 1; it <= opts.max_iter; ++it) {
    const double next = h * p.generator(t, x, y, out.z) + mean;
    const double change = std::abs(next - y);
    y = next;
    if (!std::isfinite(y)) throw Error(ErrorKind::Numeric, "implicit step diverged to a non-finite value");
    if (change < opts.tol) {
      out.value = y;
      out.iterations = it;
      out.residual = change;
      return out;
    }
  }
  std::ostringstream os;
  os << "implicit step at level " << m << ", x = " << x << " did not converge in " << opts.max_iter
     << " iterations (last residual " << std::abs(h * p.generator(t, x, y, out.z) + mean - y) << ")";
  throw Error(ErrorKind::Convergence, os.str());
}

// ---------------------------------------------------------------------------
// Monotone cubic interpolation

MonotoneCubic::MonotoneCubic(double x_min, double dx, std::vector<double> values)
    : x_min_(x_min), dx_(dx), values_(std::move(values)) {
  const std::size_t n = values_.size();
  if (n < 2 || !(dx > 0.0)) throw Error(ErrorKind::Config, "interpolation needs at least two nodes and dx > 0");
  x_max_ = x_min_ + dx_ * static_cast<double>(n - 1);
  std::vector<double> secant(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) secant[i] = (values_[i + 1] - values_[i]) / dx_;
  slopes_.assign(n, 0.0);
  slopes_[0] = secant[0];
  slopes_[n - 1] = secant[n - 2];
  for (std::size_t i = 1; i + 1 < n; ++i)
    slopes_[i] = (secant[i - 1] * secant[i] <= 0.0) ? 0.0 : 0.5 * (secant[i - 1] + secant[i]);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (secant[i] == 0.0) {
      slopes_[i] = 0.0;
      slopes_[i + 1] = 0.0;
      continue;
    }
    const double a = slopes_[i] / secant[i];
    const double b = slopes_[i + 1] / secant[i];
    const double r2 = a * a + b * b;
    if (r2 > 9.0) {
      const double tau = 3.0 / std::sqrt(r2);
      slopes_[i] = tau * a * secant[i];
      slopes_[i + 1] = tau * b * secant[i];
    }
  }
}

double MonotoneCubic::operator()(double x) const {
  const std::size_t n = values_.size();
  if (x <= x_min_) return values_[0] + slopes_[0] * (x - x_min_);
  if (x >= x_max_) return values_[n - 1] + slopes_[n - 1] * (x - x_max_);
  std::size_t i = static_cast<std::size_t>((x - x_min_) / dx_);
  if (i > n - 2) i = n - 2;
  const double s = (x - (x_min_ + dx_ * static_cast<double>(i))) / dx_;
  const double s2 = s * s, s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1;
  const double h10 = s3 - 2 * s2 + s;
  const double h01 = -2 * s3 + 3 * s2;
  const double h11 = s3 - s2;
  return h00 * values_[i] + h10 * dx_ * slopes_[i] + h01 * values_[i + 1] + h11 * dx_ * slopes_[i + 1];
}

// ---------------------------------------------------------------------------
// DiscreteSolution

std::size_t DiscreteSolution::node_count(int m) const {
  if (backend_ != Backend::PathTree) throw Error(ErrorKind::Capability, "node access needs the path-tree backend");
  return states_.at(m).size();
}

double DiscreteSolution::node_state(int m, std::size_t node) const {
  if (backend_ != Backend::PathTree) throw Error(ErrorKind::Capability, "node access needs the path-tree backend");
  return states_.at(m).at(node);
}

double DiscreteSolution::node_value(int m, std::size_t node) const {
  if (backend_ != Backend::PathTree) throw Error(ErrorKind::Capability, "node access needs the path-tree backend");
  return values_.at(m).at(node);
}

std::size_t DiscreteSolution::find_node(int m, double x) const {
  if (backend_ != Backend::PathTree) throw Error(ErrorKind::Capability, "node lookup needs the path-tree backend");
  if (m < 0 || m > grid_.steps()) throw Error(ErrorKind::StateLookup, "level outside 0..n");
  const auto& idx = index_[m];
  const auto it = std::lower_bound(idx.begin(), idx.end(), x,
                                   [](const std::pair<double, std::size_t>& e, double v) { return e.first < v; });
  if (it == idx.end() || it->first != x) {
    std::ostringstream os;
    os.precision(17);
    os << "state " << x << " is not a node of tree level " << m;
    throw Error(ErrorKind::StateLookup, os.str());
  }
  return it->second;
}

double DiscreteSolution::value(int m, double x, bool* truncated) const {
  if (m < 0 || m > grid_.steps()) throw Error(ErrorKind::Domain, "level outside 0..n");
  if (backend_ == Backend::PathTree) {
    if (truncated) *truncated = false;
    return values_[m][find_node(m, x)];
  }
  const MonotoneCubic& level = levels_[m];
  if (truncated) *truncated = level.outside(x);
  return level(x);
}

// ---------------------------------------------------------------------------
// Backends

DiscreteSolution solve_tree(const ProblemSpec& p, const WalkGrid& grid, double x0, const FixedPointOptions& opts,
                            int tree_cap) {
  const int n = grid.steps();
  if (n > tree_cap) {
    std::ostringstream os;
    os << "n = " << n << " exceeds the tree capacity " << tree_cap << "; use solve_grid";
    throw Error(ErrorKind::Capacity, os.str());
  }
  DiscreteSolution sol(std::make_shared<const ProblemSpec>(p), grid, Backend::PathTree);
  sol.x0_ = x0;
  sol.states_.resize(n + 1);
  sol.values_.resize(n + 1);
  sol.states_[0] = {x0};
  for (int m = 0; m < n; ++m) {
    const auto& cur = sol.states_[m];
    auto& next = sol.states_[m + 1];
    next.resize(cur.size() * 2);
    for (std::size_t i = 0; i < cur.size(); ++i) {
      const StepStates c = one_step_states(p, grid, m, cur[i]);
      next[2 * i + 1] = c.up;
      next[2 * i] = c.down;
    }
  }
  sol.values_[n].resize(sol.states_[n].size());
  for (std::size_t i = 0; i < sol.states_[n].size(); ++i) sol.values_[n][i] = p.terminal(sol.states_[n][i]);

  sol.diagnostics_.iterations.assign(n, 0);
  sol.diagnostics_.residuals.assign(n, 0.0);
  for (int m = n - 1; m >= 0; --m) {
    const auto& states = sol.states_[m];
    const auto& next = sol.values_[m + 1];
    auto& vals = sol.values_[m];
    vals.resize(states.size());
    for (std::size_t i = 0; i < states.size(); ++i) {
      const ImplicitStep s = implicit_step(p, grid, m, states[i], next[2 * i + 1], next[2 * i], opts);
      vals[i] = s.value;
      sol.diagnostics_.iterations[m] = std::max(sol.diagnostics_.iterations[m], s.iterations);
      sol.diagnostics_.residuals[m] = std::max(sol.diagnostics_.residuals[m], s.residual);
    }
  }

  sol.index_.resize(n + 1);
  for (int m = 0; m <= n; ++m) {
    auto& idx = sol.index_[m];
    idx.resize(sol.states_[m].size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = {sol.states_[m][i], i};
    std::sort(idx.begin(), idx.end());
  }
  return sol;
}

DiscreteSolution solve_grid(const ProblemSpec& p, const WalkGrid& grid, const XGrid& xgrid,
                            const FixedPointOptions& opts, std::optional<std::pair<double, double>> coverage) {
  if (xgrid.points < 3) throw Error(ErrorKind::Config, "spatial grid needs at least 3 points");
  if (!(xgrid.x_max > xgrid.x_min)) throw Error(ErrorKind::Config, "spatial grid needs x_min < x_max");
  const int n = grid.steps();
  const int points = xgrid.points;
  const double dx = (xgrid.x_max - xgrid.x_min) / static_cast<double>(points - 1);
  const double width = xgrid.x_max - xgrid.x_min;
  const auto [cov_lo, cov_hi] =
      coverage.value_or(std::pair<double, double>{xgrid.x_min + 0.25 * width, xgrid.x_max - 0.25 * width});

  DiscreteSolution sol(std::make_shared<const ProblemSpec>(p), grid, Backend::SpatialGrid);
  sol.xgrid_ = xgrid;
  sol.levels_.resize(n + 1);
  sol.diagnostics_.iterations.assign(n, 0);
  sol.diagnostics_.residuals.assign(n, 0.0);

  auto node = [&](int i) { return xgrid.x_min + dx * static_cast<double>(i); };
  std::vector<double> vals(points);
  for (int i = 0; i < points; ++i) vals[i] = p.terminal(node(i));
  sol.levels_[n] = MonotoneCubic(xgrid.x_min, dx, vals);

  for (int m = n - 1; m >= 0; --m) {
    const MonotoneCubic& next = sol.levels_[m + 1];
    for (int i = 0; i < points; ++i) {
      const double x = node(i);
      const StepStates c = one_step_states(p, grid, m, x);
      const bool up_out = next.outside(c.up), down_out = next.outside(c.down);
      if (up_out || down_out) {
        ++sol.diagnostics_.truncated_children;
        const bool far = c.up > xgrid.x_max + dx || c.down < xgrid.x_min - dx || c.down > xgrid.x_max + dx ||
                         c.up < xgrid.x_min - dx;
        if (far && x >= cov_lo && x <= cov_hi) {
          std::ostringstream os;
          os << "spatial grid [" << xgrid.x_min << ", " << xgrid.x_max << "] too narrow: children of x = " << x
             << " at level " << m << " land more than one cell outside";
          throw Error(ErrorKind::Domain, os.str());
        }
      }
      const ImplicitStep s = implicit_step(p, grid, m, x, next(c.up), next(c.down), opts);
      vals[i] = s.value;
      sol.diagnostics_.iterations[m] = std::max(sol.diagnostics_.iterations[m], s.iterations);
      sol.diagnostics_.residuals[m] = std::max(sol.diagnostics_.residuals[m], s.residual);
    }
    sol.levels_[m] = MonotoneCubic(xgrid.x_min, dx, vals);
  }
  return sol;
}

double y_at(const DiscreteSolution& sol, int k, double x) { return sol.value(k, x); }

double z_at(const DiscreteSolution& sol, int k, double x) {
  const WalkGrid& grid = sol.grid();
  if (k < 0 || k >= grid.steps()) throw Error(ErrorKind::Domain, "z_at needs 0 <= k < n");
  if (sol.backend() == Backend::PathTree) {
    const std::size_t i = sol.find_node(k, x);
    return (sol.node_value(k + 1, 2 * i + 1) - sol.node_value(k + 1, 2 * i)) / (2.0 * grid.sqrt_h());
  }
  const StepStates c = one_step_states(sol.problem(), grid, k, x);
  const MonotoneCubic& next = sol.level_interpolant(k + 1);
  return (next(c.up) - next(c.down)) / (2.0 * grid.sqrt_h());
}

double defining_relation_residual(const DiscreteSolution& sol) {
  const ProblemSpec& p = sol.problem();
  const WalkGrid& grid = sol.grid();
  double worst = 0.0;
  auto check = [&](int m, double x, double u, double up, double down) {
    const double z = (up - down) / (2.0 * grid.sqrt_h());
    const double r = u - grid.h() * p.generator(grid.time(m + 1), x, u, z) - 0.5 * (up + down);
    worst = std::max(worst, std::abs(r));
  };
  for (int m = 0; m < grid.steps(); ++m) {
    if (sol.backend() == Backend::PathTree) {
      for (std::size_t i = 0; i < sol.node_count(m); ++i)
        check(m, sol.node_state(m, i), sol.node_value(m, i), sol.node_value(m + 1, 2 * i + 1),
              sol.node_value(m + 1, 2 * i));
    } else {
      const MonotoneCubic& cur = sol.level_interpolant(m);
      const MonotoneCubic& next = sol.level_interpolant(m + 1);
      const double dx = (cur.x_max() - cur.x_min()) / static_cast<double>(cur.values().size() - 1);
      for (std::size_t i = 0; i < cur.values().size(); ++i) {
        const double x = cur.x_min() + dx * static_cast<double>(i);
        const StepStates c = one_step_states(p, grid, m, x);
        check(m, x, cur.values()[i], next(c.up), next(c.down));
      }
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Weight-based Z^n

namespace {

struct Continuation {
  double terminal;
  double generator;
};

// Follows one continuation epsilon_{k+1..n} (tail[0] = epsilon_{k+1}) from
// (t_k, x), accumulating h sum_{m=k+1}^{n-1} f_m N^{n,t_k}_{t_m}.
Continuation follow(const DiscreteSolution& sol, int k, double x, std::span<const std::int8_t> tail) {
  const ProblemSpec& p = sol.problem();
  const WalkGrid& grid = sol.grid();
  const int n = grid.steps();
  const bool need_weight = !p.zero_generator;
  double state = x, grad = 1.0, weight_sum = 0.0, gen = 0.0;
  for (int m = k + 1; m <= n; ++m) {
    const int e = tail[m - k - 1];
    const double t = grid.time(m);
    if (need_weight) {
      const double s = p.diffusion(t, state);
      weight_sum += grad / s * static_cast<double>(e);
      grad += grid.h() * p.drift_x(t, state) * grad + grid.sqrt_h() * p.diffusion_x(t, state) * grad * e;
    }
    state = step_state(p, grid, m, state, e);
    if (need_weight && m <= n - 1) {
      const double weight = grid.sqrt_h() * weight_sum / (grid.time(m) - grid.time(k));
      const double y = y_at(sol, m, state);
      const double z = z_at(sol, m, state);
      gen += grid.h() * p.generator(grid.time(m + 1), state, y, z) * weight;
    }
  }
  return {p.terminal(state), gen};
}

}  // namespace

ZhatEstimate zhat_at(const DiscreteSolution& sol, int k, double x, const ZhatOptions& opts) {
  const ProblemSpec& p = sol.problem();
  const WalkGrid& grid = sol.grid();
  const int n = grid.steps();
  if (k < 0 || k >= n - 1) throw Error(ErrorKind::Domain, "zhat_at needs 0 <= k < n - 1");
  if (!p.zero_generator && !p.has_state_derivatives())
    throw Error(ErrorKind::Capability, "zhat_at needs b_x and sigma_x for the discrete weight");
  const double sigma = p.diffusion(grid.time(k + 1), x);
  const int free = n - k - 1;  // epsilon_{k+2..n}
  Signs tail(n - k);

  auto pair_value = [&](double* terminal, double* generator) {
    tail[0] = 1;
    const Continuation up = follow(sol, k, x, tail);
    tail[0] = -1;
    const Continuation down = follow(sol, k, x, tail);
    *terminal = (up.terminal - down.terminal) / (2.0 * grid.sqrt_h());
    *generator = 0.5 * (up.generator + down.generator);
  };

  ZhatEstimate out;
  if (opts.mode == ZhatMode::Exact) {
    if (n > opts.tree_cap) {
      std::ostringstream os;
      os << "exact Zhat with n = " << n << " exceeds the tree capacity " << opts.tree_cap;
      throw Error(ErrorKind::Capacity, os.str());
    }
    const std::size_t count = std::size_t{1} << free;
    std::vector<double> terms(count), gens(count);
    for (std::size_t r = 0; r < count; ++r) {
      for (int j = 0; j < free; ++j) tail[j + 1] = ((r >> j) & 1U) ? 1 : -1;
      pair_value(&terms[r], &gens[r]);
    }
    out.terminal_part = pairwise_sum(terms) / static_cast<double>(count);
    out.generator_part = pairwise_sum(gens) / static_cast<double>(count);
    out.value = out.terminal_part + out.generator_part * sigma;
    out.paths = count * 2;
    return out;
  }

  if (opts.samples < 2) throw Error(ErrorKind::Config, "Monte Carlo Zhat needs at least 2 samples");
  std::vector<double> terms(opts.samples), gens(opts.samples), totals(opts.samples);
  for (std::size_t s = 0; s < opts.samples; ++s) {
    for (int j = 0; j < free; ++j)
      tail[j + 1] = rng::sign(opts.seed, opts.stream, static_cast<std::uint64_t>(s) * static_cast<std::uint64_t>(n) + j);
    pair_value(&terms[s], &gens[s]);
    totals[s] = terms[s] + gens[s] * sigma;
  }
  const MeanEstimate est = mean_and_se(totals);
  out.value = est.mean;
  out.std_error = est.std_error;
  out.terminal_part = pairwise_sum(terms) / static_cast<double>(opts.samples);
  out.generator_part = pairwise_sum(gens) / static_cast<double>(opts.samples);
  out.paths = opts.samples * 2;
  return out;
}

// ---------------------------------------------------------------------------
// Brute-force oracle: conditional expectations by averaging over all paths.

BruteForceTables brute_force_solution(const ProblemSpec& p, const WalkGrid& grid, double x0,
                                      const FixedPointOptions& opts) {
  const int n = grid.steps();
  if (n > kBruteForceCap) {
    std::ostringstream os;
    os << "brute force enumeration limited to n <= " << kBruteForceCap << " (got " << n << ")";
    throw Error(ErrorKind::Capacity, os.str());
  }
  const std::size_t paths = std::size_t{1} << n;
  const double h = grid.h(), sqrt_h = grid.sqrt_h();
  auto eps_of = [](std::size_t path, int j) { return ((path >> (j - 1)) & 1U) ? 1.0 : -1.0; };

  BruteForceTables out;
  out.n = n;
  out.x.assign(n + 1, std::vector<double>(paths, x0));
  for (std::size_t w = 0; w < paths; ++w) {
    for (int j = 1; j <= n; ++j) {
      const double t = grid.time(j);
      const double prev = out.x[j - 1][w];
      out.x[j][w] = (prev + h * p.drift(t, prev)) + sqrt_h * p.diffusion(t, prev) * eps_of(w, j);
    }
  }
  out.y.assign(n + 1, std::vector<double>(paths, 0.0));
  out.z.assign(n, std::vector<double>(paths, 0.0));

  // acc = g(X_T) + h sum_{m=k+1}^{n-1} f_m, updated as k decreases.
  std::vector<double> acc(paths);
  for (std::size_t w = 0; w < paths; ++w) {
    acc[w] = p.terminal(out.x[n][w]);
    out.y[n][w] = acc[w];
  }
  for (int k = n - 1; k >= 0; --k) {
    const std::size_t prefixes = std::size_t{1} << k;
    const std::size_t completions = paths >> k;
    const double t = grid.time(k + 1);
    for (std::size_t prefix = 0; prefix < prefixes; ++prefix) {
      double mean = 0.0, mean_eps = 0.0;
      for (std::size_t r = 0; r < completions; ++r) {
        const std::size_t w = prefix + (r << k);
        mean += acc[w];
        mean_eps += acc[w] * eps_of(w, k + 1);
      }
      mean /= static_cast<double>(completions);
      mean_eps /= static_cast<double>(completions);
      const double z = mean_eps / sqrt_h;
      const double xk = out.x[k][prefix];
      double y = mean;
      bool converged = false;
      for (int it = 0; it < opts.max_iter; ++it) {
        const double next = h * p.generator(t, xk, y, z) + mean;
        const double change = std::abs(next - y);
        y = next;
        if (change < opts.tol) {
          converged = true;
          break;
        }
      }
      if (!converged) throw Error(ErrorKind::Convergence, "brute force fixed point did not converge");
      const double fk = h * p.generator(t, xk, y, z);
      for (std::size_t r = 0; r < completions; ++r) {
        const std::size_t w = prefix + (r << k);
        out.y[k][w] = y;
        out.z[k][w] = z;
        acc[w] += fk;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export

void write_solution_csv(std::ostream& os, const DiscreteSolution& sol) {
  const WalkGrid& grid = sol.grid();
  const int n = grid.steps();
  os << "m,key,x,u,z\n";
  os.precision(17);
  for (int m = 0; m <= n; ++m) {
    if (sol.backend() == Backend::PathTree) {
      for (std::size_t i = 0; i < sol.node_count(m); ++i) {
        const double x = sol.node_state(m, i);
        os << m << ',' << i << ',' << x << ',' << sol.node_value(m, i) << ',';
        if (m < n) os << z_at(sol, m, x);
        os << '\n';
      }
    } else {
      const MonotoneCubic& level = sol.level_interpolant(m);
      const auto& vals = level.values();
      const double dx = (level.x_max() - level.x_min()) / static_cast<double>(vals.size() - 1);
      for (std::size_t i = 0; i < vals.size(); ++i) {
        const double x = level.x_min() + dx * static_cast<double>(i);
        os << m << ',' << i << ',' << x << ',' << vals[i] << ',';
        if (m < n) os << z_at(sol, m, x);
        os << '\n';
      }
    }
  }
}

nlohmann::json diagnostics_json(const DiscreteSolution& sol) {
  const auto& d = sol.diagnostics();
  nlohmann::json j;
  j["problem"] = sol.problem().name;
  j["backend"] = to_string(sol.backend());
  j["n"] = sol.grid().steps();
  j["T"] = sol.grid().horizon();
  j["iterations"] = d.iterations;
  j["residuals"] = d.residuals;
  j["truncated_children"] = d.truncated_children;
  j["defining_relation_residual"] = defining_relation_residual(sol);
  if (sol.backend() == Backend::SpatialGrid) {
    j["xgrid"] = {{"x_min", sol.xgrid().x_min}, {"x_max", sol.xgrid().x_max}, {"points", sol.xgrid().points}};
  } else {
    j["x0"] = sol.start_value();
  }
  return j;
}

}  // namespace rwbsde
