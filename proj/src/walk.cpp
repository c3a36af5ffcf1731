#include "rwbsde/walk.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

#include "rwbsde/errors.hpp"
#include "rwbsde/quadrature.hpp"
#include "rwbsde/rng.hpp"

namespace rwbsde {

WalkGrid::WalkGrid(int steps, double horizon) : n_(steps), horizon_(horizon) {
  if (steps < 1) throw Error(ErrorKind::Config, "walk grid needs n >= 1");
  if (!(horizon > 0.0)) throw Error(ErrorKind::Config, "walk grid needs T > 0");
  h_ = horizon / static_cast<double>(steps);
  sqrt_h_ = std::sqrt(h_);
}

Signs rademacher_path(const WalkGrid& grid, std::uint64_t seed, std::uint64_t sample) {
  Signs eps(grid.steps());
  for (int j = 0; j < grid.steps(); ++j) eps[j] = rng::sign(seed, sample, static_cast<std::uint64_t>(j));
  return eps;
}

std::vector<double> scaled_walk(const WalkGrid& grid, std::span<const std::int8_t> eps) {
  if (static_cast<int>(eps.size()) < grid.steps()) throw Error(ErrorKind::Domain, "sign vector shorter than n");
  std::vector<double> b(grid.steps() + 1, 0.0);
  long long sum = 0;
  for (int k = 1; k <= grid.steps(); ++k) {
    sum += eps[k - 1];
    b[k] = grid.sqrt_h() * static_cast<double>(sum);
  }
  return b;
}

double step_state(const ProblemSpec& p, const WalkGrid& grid, int j, double x, int eps) {
  const double t = grid.time(j);
  const double b = p.drift(t, x);
  const double s = p.diffusion(t, x);
  if (!std::isfinite(b) || !std::isfinite(s)) {
    std::ostringstream os;
    os << "non-finite coefficient at step " << j << " (x = " << x << ")";
    throw Error(ErrorKind::Numeric, os.str());
  }
  return (x + grid.h() * b) + grid.sqrt_h() * s * static_cast<double>(eps);
}

WalkPath forward_walk(const ProblemSpec& p, const WalkGrid& grid, std::span<const std::int8_t> eps,
                      int start_index, double x) {
  const int n = grid.steps();
  if (start_index < 0 || start_index > n) throw Error(ErrorKind::Domain, "start index outside 0..n");
  if (static_cast<int>(eps.size()) < n) throw Error(ErrorKind::Domain, "sign vector shorter than n");
  WalkPath path{grid, Signs(eps.begin(), eps.begin() + n), std::vector<double>(n + 1, x), start_index, x};
  for (int j = start_index + 1; j <= n; ++j) {
    path.xwalk[j] = step_state(p, grid, j, path.xwalk[j - 1], eps[j - 1]);
    if (!std::isfinite(path.xwalk[j])) {
      std::ostringstream os;
      os << "walk state not finite at step " << j;
      throw Error(ErrorKind::Numeric, os.str());
    }
  }
  return path;
}

void write_walk_csv(std::ostream& os, const WalkPath& path) {
  os << "k,eps,x\n";
  os.precision(17);
  for (int k = 0; k <= path.grid.steps(); ++k)
    os << k << ',' << (k == 0 ? 0 : static_cast<int>(path.eps[k - 1])) << ',' << path.xwalk[k] << '\n';
}

// ---------------------------------------------------------------------------
// Path functionals and the discretized Malliavin calculus

PathFunctional::PathFunctional(int n, Fn fn, std::set<int> depends_on)
    : n_(n), fn_(std::move(fn)), depends_(std::move(depends_on)) {}

double PathFunctional::operator()(std::span<const std::int8_t> eps) const {
  if (static_cast<int>(eps.size()) != n_) throw Error(ErrorKind::Domain, "sign vector length does not match functional");
  return fn_(eps);
}

PathFunctional sign_functional(int n, int m) {
  if (m < 1 || m > n) throw Error(ErrorKind::Domain, "sign index outside 1..n");
  return PathFunctional(n, [m](std::span<const std::int8_t> e) { return static_cast<double>(e[m - 1]); }, {m});
}

PathFunctional walk_functional(const WalkGrid& grid, int k) {
  if (k < 0 || k > grid.steps()) throw Error(ErrorKind::Domain, "walk index outside 0..n");
  std::set<int> deps;
  for (int j = 1; j <= k; ++j) deps.insert(j);
  const double sqrt_h = grid.sqrt_h();
  return PathFunctional(grid.steps(), [k, sqrt_h](std::span<const std::int8_t> e) {
    long long sum = 0;
    for (int j = 0; j < k; ++j) sum += e[j];
    return sqrt_h * static_cast<double>(sum);
  }, std::move(deps));
}

PathFunctional state_functional(const ProblemSpec& p, const WalkGrid& grid, double x0, int m) {
  if (m < 0 || m > grid.steps()) throw Error(ErrorKind::Domain, "state index outside 0..n");
  std::set<int> deps;
  for (int j = 1; j <= m; ++j) deps.insert(j);
  return PathFunctional(grid.steps(), [p, grid, x0, m](std::span<const std::int8_t> e) {
    double x = x0;
    for (int j = 1; j <= m; ++j) x = step_state(p, grid, j, x, e[j - 1]);
    return x;
  }, std::move(deps));
}

PathFunctional linear_combination(double a, const PathFunctional& f, double b, const PathFunctional& g) {
  if (f.size() != g.size()) throw Error(ErrorKind::Domain, "functionals live on different n");
  std::set<int> deps = f.depends_on();
  deps.insert(g.depends_on().begin(), g.depends_on().end());
  return PathFunctional(f.size(), [a, f, b, g](std::span<const std::int8_t> e) { return a * f(e) + b * g(e); },
                        std::move(deps));
}

PathFunctional shift(const PathFunctional& f, int m, int sign) {
  if (m < 1 || m > f.size()) throw Error(ErrorKind::Domain, "shift index outside 1..n");
  if (sign != 1 && sign != -1) throw Error(ErrorKind::Domain, "shift sign must be +1 or -1");
  std::set<int> deps = f.depends_on();
  deps.erase(m);
  const auto frozen = static_cast<std::int8_t>(sign);
  return PathFunctional(f.size(), [f, m, frozen](std::span<const std::int8_t> e) {
    Signs local(e.begin(), e.end());
    local[m - 1] = frozen;
    return f(local);
  }, std::move(deps));
}

PathFunctional discrete_malliavin(const PathFunctional& f, int m, const WalkGrid& grid) {
  if (m < 1 || m > f.size()) throw Error(ErrorKind::Domain, "derivative index outside 1..n");
  const PathFunctional up = shift(f, m, 1);
  const PathFunctional down = shift(f, m, -1);
  std::set<int> deps = f.depends_on();
  deps.erase(m);
  const double scale = 1.0 / (2.0 * grid.sqrt_h());
  return PathFunctional(f.size(), [up, down, scale](std::span<const std::int8_t> e) {
    return (up(e) - down(e)) * scale;
  }, std::move(deps));
}

namespace {

void require_state_derivatives(const ProblemSpec& p) {
  if (!p.has_state_derivatives())
    throw Error(ErrorKind::Capability, "problem '" + p.name + "' does not provide b_x and sigma_x");
}

}  // namespace

std::vector<double> variational_walk(const ProblemSpec& p, const WalkGrid& grid, std::span<const std::int8_t> eps,
                                     int k, double x) {
  require_state_derivatives(p);
  const int n = grid.steps();
  if (k < 0 || k > n) throw Error(ErrorKind::Domain, "variational walk start outside 0..n");
  const WalkPath path = forward_walk(p, grid, eps, k, x);
  std::vector<double> grad(n - k + 1, 1.0);
  for (int m = k + 1; m <= n; ++m) {
    const double t = grid.time(m);
    const double xprev = path.xwalk[m - 1];
    const double prev = grad[m - 1 - k];
    grad[m - k] = prev + grid.h() * p.drift_x(t, xprev) * prev +
                  grid.sqrt_h() * p.diffusion_x(t, xprev) * prev * static_cast<double>(eps[m - 1]);
  }
  return grad;
}

double malliavin_quotient(const CoefficientFn& phi_x, double t, double x_minus, double x_plus) {
  const QuadratureRule& rule = theta_rule();
  double acc = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const double th = rule.nodes[i];
    acc += rule.weights[i] * phi_x(t, th * x_plus + (1.0 - th) * x_minus);
  }
  return acc;
}

std::vector<double> malliavin_walk(const ProblemSpec& p, const WalkPath& path, int k) {
  require_state_derivatives(p);
  const WalkGrid& grid = path.grid;
  const int n = grid.steps();
  if (k < 1 || k > n) throw Error(ErrorKind::Domain, "Malliavin index outside 1..n");
  if (path.start_index > k - 1) throw Error(ErrorKind::Domain, "path must be materialized from level k-1");

  // T_{k,+} X and T_{k,-} X from level k-1 onwards.
  std::vector<double> plus(n + 1), minus(n + 1);
  plus[k - 1] = minus[k - 1] = path.xwalk[k - 1];
  for (int j = k; j <= n; ++j) {
    const int e = (j == k) ? 0 : path.eps[j - 1];
    plus[j] = step_state(p, grid, j, plus[j - 1], j == k ? 1 : e);
    minus[j] = step_state(p, grid, j, minus[j - 1], j == k ? -1 : e);
  }

  std::vector<double> d(n - k + 1);
  d[0] = p.diffusion(grid.time(k), path.xwalk[k - 1]);
  for (int l = k + 1; l <= n; ++l) {
    const double t = grid.time(l);
    const double bq = malliavin_quotient(p.drift_x, t, minus[l - 1], plus[l - 1]);
    const double sq = malliavin_quotient(p.diffusion_x, t, minus[l - 1], plus[l - 1]);
    const double prev = d[l - 1 - k];
    d[l - k] = prev + grid.h() * bq * prev + grid.sqrt_h() * sq * prev * static_cast<double>(path.eps[l - 1]);
  }
  return d;
}

double discrete_weight(const ProblemSpec& p, const WalkPath& path, int k, int l) {
  const WalkGrid& grid = path.grid;
  if (k >= l) throw Error(ErrorKind::Domain, "discrete weight needs k < l");
  if (k < 0 || l > grid.steps()) throw Error(ErrorKind::Domain, "weight indices outside 0..n");
  if (path.start_index > k) throw Error(ErrorKind::Domain, "path must be materialized from level k");
  const std::vector<double> grad = variational_walk(p, grid, path.eps, k, path.xwalk[k]);
  double acc = 0.0;
  for (int m = k + 1; m <= l; ++m) {
    const double s = p.diffusion(grid.time(m), path.xwalk[m - 1]);
    if (!(s >= p.delta)) {
      std::ostringstream os;
      os << "sigma(" << grid.time(m) << ", " << path.xwalk[m - 1] << ") = " << s << " below delta";
      throw Error(ErrorKind::Ellipticity, os.str());
    }
    acc += grad[m - 1 - k] / s * static_cast<double>(path.eps[m - 1]);
  }
  return grid.sqrt_h() * acc / (grid.time(l) - grid.time(k));
}

}  // namespace rwbsde
