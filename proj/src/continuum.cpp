#include "rwbsde/continuum.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "rwbsde/errors.hpp"
#include "rwbsde/parallel.hpp"
#include "rwbsde/rng.hpp"

namespace rwbsde {

FinePath euler_fine(const ProblemSpec& p, std::span<const double> brownian, double fine_step, std::size_t steps,
                    double x0, double start_time) {
  if (!(fine_step > 0.0)) throw Error(ErrorKind::Config, "fine step must be positive");
  if (brownian.size() < steps + 1) throw Error(ErrorKind::Domain, "Brownian path shorter than the requested steps");
  FinePath path;
  path.fine_step = fine_step;
  path.start_time = start_time;
  path.x.resize(steps + 1);
  path.grad.assign(steps + 1, 1.0);
  path.increments.resize(steps);
  path.x[0] = x0;
  const bool with_grad = p.has_state_derivatives();
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = path.time(i);
    const double x = path.x[i];
    const double db = brownian[i + 1] - brownian[i];
    path.increments[i] = db;
    const double b = p.drift(t, x), s = p.diffusion(t, x);
    path.x[i + 1] = x + b * fine_step + s * db;
    if (with_grad) {
      const double g = path.grad[i];
      path.grad[i + 1] = g + p.drift_x(t, x) * g * fine_step + p.diffusion_x(t, x) * g * db;
      if (!(path.grad[i + 1] > 0.0)) path.gradient_nonpositive = true;
    }
    if (!std::isfinite(path.x[i + 1]) || !std::isfinite(path.grad[i + 1])) {
      std::ostringstream os;
      os << "fine Euler state not finite at step " << i + 1;
      throw Error(ErrorKind::Numeric, os.str());
    }
  }
  return path;
}

FinePath euler_fine(const ProblemSpec& p, const CoupledSample& sample, double x0) {
  const std::size_t steps =
      static_cast<std::size_t>(sample.grid.steps()) * static_cast<std::size_t>(sample.fine_factor);
  if (sample.fine_brownian.size() < steps + 1)
    throw Error(ErrorKind::Domain, "coupled sample does not cover [0, T]");
  return euler_fine(p, sample.fine_brownian, sample.fine_step, steps, x0, 0.0);
}

namespace {

std::size_t fine_index(const FinePath& path, double t) {
  const double r = (t - path.start_time) / path.fine_step;
  const double i = std::round(r);
  if (std::abs(r - i) > 1e-8 * std::max(1.0, std::abs(r)) || i < 0.0 ||
      i > static_cast<double>(path.steps()))
    throw Error(ErrorKind::Domain, "time is not a node of the fine grid");
  return static_cast<std::size_t>(i);
}

}  // namespace

double malliavin_weight(const ProblemSpec& p, const FinePath& path, double t, double s) {
  if (!(t < s)) throw Error(ErrorKind::Domain, "weight needs t < s");
  const std::size_t a = fine_index(path, t), b = fine_index(path, s);
  if (a >= b) throw Error(ErrorKind::Domain, "weight needs t < s on the fine grid");
  double acc = 0.0;
  for (std::size_t i = a; i < b; ++i)
    acc += path.grad[i] / p.diffusion(path.time(i), path.x[i]) * path.increments[i];
  return acc / (path.grad[a] * (path.time(b) - path.time(a)));
}

const char* to_string(ZRepresentation mode) noexcept {
  switch (mode) {
    case ZRepresentation::Weight: return "weight";
    case ZRepresentation::Gradient: return "gradient";
  }
  return "unknown";
}

ZEstimate z_weight_estimator(const ProblemSpec& p, double t, double x, const ZEstimatorOptions& opts) {
  const double T = p.horizon;
  if (!(t < T) || t < 0.0) throw Error(ErrorKind::Domain, "weight estimator needs 0 <= t < T");
  if (opts.samples < 2) throw Error(ErrorKind::Config, "weight estimator needs at least 2 samples");
  if (opts.steps < 1) throw Error(ErrorKind::Config, "weight estimator needs at least one step");
  if (!p.zero_generator && !p.reference)
    throw Error(ErrorKind::Capability, "problem '" + p.name + "' has a generator but no reference (y, z) field");
  if (opts.mode == ZRepresentation::Gradient && (!p.terminal_d1 || !p.has_state_derivatives()))
    throw Error(ErrorKind::Capability, "gradient representation needs g', b_x and sigma_x");
  // Without b_x and sigma_x, nabla X stays 1 (exact only for state-free coefficients).

  const std::size_t steps = static_cast<std::size_t>(opts.steps);
  const double dt = (T - t) / static_cast<double>(steps);
  const double sqrt_dt = std::sqrt(dt);
  std::vector<double> terminal(opts.samples), generator(opts.samples), total(opts.samples);

  const unsigned workers = resolve_threads(opts.threads);
  std::vector<std::vector<double>> scratch(workers, std::vector<double>(steps + 1));
  parallel_for(opts.samples, workers, [&](std::size_t s, unsigned w) {
    auto& bm = scratch[w];
    bm[0] = 0.0;
    for (std::size_t i = 0; i < steps; ++i) bm[i + 1] = bm[i] + sqrt_dt * rng::normal(opts.seed, s, i);
    const FinePath path = euler_fine(p, bm, dt, steps, x, t);
    // Running Ito sum S_i = sum_{j<i} nabla X_j / sigma_j dB_j.
    double ito = 0.0, gen = 0.0;
    for (std::size_t i = 0; i < steps; ++i) {
      ito += path.grad[i] / p.diffusion(path.time(i), path.x[i]) * path.increments[i];
      if (!p.zero_generator) {
        const double si = path.time(i + 1);
        const double xi = path.x[i + 1];
        const auto ref = reference_solution(p, std::min(si, T), xi);
        gen += p.generator(si, xi, ref.y, ref.z) * ito / (si - t) * dt;
      }
    }
    const double xt = path.x[steps];
    terminal[s] = opts.mode == ZRepresentation::Weight ? p.terminal(xt) * ito / (T - t)
                                                        : p.terminal_d1(xt) * path.grad[steps];
    generator[s] = gen;
    total[s] = terminal[s] + gen;
  });

  const double sig = p.diffusion(t, x);
  const MeanEstimate m = mean_and_se(total);
  ZEstimate out;
  out.value = sig * m.mean;
  out.std_error = std::abs(sig) * m.std_error;
  out.samples = opts.samples;
  out.terminal_part = pairwise_sum(terminal) / static_cast<double>(opts.samples);
  out.generator_part = pairwise_sum(generator) / static_cast<double>(opts.samples);
  out.mode = opts.mode;
  return out;
}

// ---------------------------------------------------------------------------
// Theta scheme

std::span<const double> PdeReference::level(int j) const {
  if (j < 0 || j > spec_.time_steps) throw Error(ErrorKind::Domain, "PDE level outside 0..nt");
  const auto nx = static_cast<std::size_t>(spec_.space_points);
  return std::span<const double>(u_).subspan(static_cast<std::size_t>(j) * nx, nx);
}

double PdeReference::interp(const std::vector<double>& field, double t, double x) const {
  if (t < -1e-12 || t > horizon_ + 1e-12) throw Error(ErrorKind::Domain, "PDE query outside [0, T]");
  const int nx = spec_.space_points;
  const double r = std::clamp(t / dt_, 0.0, static_cast<double>(spec_.time_steps));
  const int j0 = std::min(static_cast<int>(std::floor(r)), spec_.time_steps - 1);
  const double wt = r - j0;

  auto at_level = [&](int j) {
    const double* v = field.data() + static_cast<std::size_t>(j) * nx;
    if (x <= spec_.x_min) return v[0] + (x - spec_.x_min) * (v[1] - v[0]) / dx_;
    if (x >= spec_.x_max) return v[nx - 1] + (x - spec_.x_max) * (v[nx - 1] - v[nx - 2]) / dx_;
    const double q = (x - spec_.x_min) / dx_;
    const int i = std::min(static_cast<int>(q), nx - 2);
    const double s = q - i;
    auto slope = [&](int k) {
      if (k == 0) return v[1] - v[0];
      if (k == nx - 1) return v[nx - 1] - v[nx - 2];
      return 0.5 * (v[k + 1] - v[k - 1]);
    };
    const double m0 = slope(i), m1 = slope(i + 1);
    const double s2 = s * s, s3 = s2 * s;
    return (2 * s3 - 3 * s2 + 1) * v[i] + (s3 - 2 * s2 + s) * m0 + (-2 * s3 + 3 * s2) * v[i + 1] + (s3 - s2) * m1;
  };
  if (wt == 0.0) return at_level(j0);
  return (1.0 - wt) * at_level(j0) + wt * at_level(j0 + 1);
}

double PdeReference::u(double t, double x) const { return interp(u_, t, x); }
double PdeReference::ux(double t, double x) const { return interp(ux_, t, x); }

void PdeReference::write_csv(std::ostream& os, int time_stride, int space_stride) const {
  if (time_stride < 1 || space_stride < 1) throw Error(ErrorKind::Config, "CSV strides must be positive");
  os << "t,x,u,u_x\n";
  os.precision(17);
  const auto nx = static_cast<std::size_t>(spec_.space_points);
  for (int j = 0; j <= spec_.time_steps; j += time_stride)
    for (int i = 0; i < spec_.space_points; i += space_stride) {
      const std::size_t k = static_cast<std::size_t>(j) * nx + static_cast<std::size_t>(i);
      os << dt_ * j << ',' << node(i) << ',' << u_[k] << ',' << ux_[k] << '\n';
    }
}

namespace {

void central_differences(const double* u, double* ux, int nx, double dx) {
  ux[0] = (u[1] - u[0]) / dx;
  ux[nx - 1] = (u[nx - 1] - u[nx - 2]) / dx;
  for (int i = 1; i < nx - 1; ++i) ux[i] = (u[i + 1] - u[i - 1]) / (2.0 * dx);
}

struct Solved {
  std::vector<double> u, ux;
  double max_residual = 0.0;
  int max_picard = 0;
};

Solved theta_solve(const ProblemSpec& p, const PdeGridSpec& g) {
  const int nt = g.time_steps, nx = g.space_points;
  const double T = p.horizon, dt = T / nt, dx = (g.x_max - g.x_min) / (nx - 1), th = g.theta;
  const auto N = static_cast<std::size_t>(nx);
  Solved out;
  out.u.assign(static_cast<std::size_t>(nt + 1) * N, 0.0);
  out.ux.assign(out.u.size(), 0.0);
  std::vector<double> xs(N);
  for (int i = 0; i < nx; ++i) xs[i] = g.x_min + dx * i;

  double* last = out.u.data() + static_cast<std::size_t>(nt) * N;
  for (int i = 0; i < nx; ++i) last[i] = p.terminal(xs[i]);
  central_differences(last, out.ux.data() + static_cast<std::size_t>(nt) * N, nx, dx);

  // L u_i = lo_i u_{i-1} + di_i u_i + up_i u_{i+1}
  std::vector<double> lo(N), di(N), up(N), lo1(N), di1(N), up1(N);
  auto operator_at = [&](double t, std::vector<double>& l, std::vector<double>& d, std::vector<double>& u) {
    for (int i = 1; i < nx - 1; ++i) {
      const double s = p.diffusion(t, xs[i]), b = p.drift(t, xs[i]);
      const double a = 0.5 * s * s / (dx * dx), c = b / (2.0 * dx);
      l[i] = a - c;
      d[i] = -2.0 * a;
      u[i] = a + c;
    }
  };
  auto forcing = [&](double t, const double* u, const double* ux, std::vector<double>& f) {
    for (int i = 1; i < nx - 1; ++i) f[i] = p.generator(t, xs[i], u[i], p.diffusion(t, xs[i]) * ux[i]);
  };

  std::vector<double> rhs(N), f_next(N, 0.0), f_cur(N, 0.0), cur(N), cur_x(N), prev(N);
  std::vector<double> A(N), B(N), C(N), cp(N), dp(N);
  for (int j = nt - 1; j >= 0; --j) {
    const double t = dt * j, t1 = dt * (j + 1);
    const double* un = out.u.data() + static_cast<std::size_t>(j + 1) * N;
    const double* uxn = out.ux.data() + static_cast<std::size_t>(j + 1) * N;
    operator_at(t, lo, di, up);
    operator_at(t1, lo1, di1, up1);
    if (!p.zero_generator) forcing(t1, un, uxn, f_next);

    // (I - th dt L_j) u^j = (I + (1-th) dt L_{j+1}) u^{j+1} + dt (th F^j + (1-th) F^{j+1})
    std::vector<double> explicit_part(N);
    for (int i = 1; i < nx - 1; ++i)
      explicit_part[i] = un[i] + (1.0 - th) * dt * (lo1[i] * un[i - 1] + di1[i] * un[i] + up1[i] * un[i + 1]) +
                         (1.0 - th) * dt * f_next[i];
    for (int i = 1; i < nx - 1; ++i) {
      A[i] = -th * dt * lo[i];
      B[i] = 1.0 - th * dt * di[i];
      C[i] = -th * dt * up[i];
    }
    // u_0 = 2 u_1 - u_2 and u_{N-1} = 2 u_{N-2} - u_{N-3}
    const double B1 = B[1] + 2.0 * A[1], C1 = C[1] - A[1];
    const double Bl = B[nx - 2] + 2.0 * C[nx - 2], Al = A[nx - 2] - C[nx - 2];

    std::copy(un, un + N, cur.begin());
    std::copy(uxn, uxn + N, cur_x.begin());
    int it = 0;
    for (;;) {
      if (!p.zero_generator) forcing(t, cur.data(), cur_x.data(), f_cur);
      for (int i = 1; i < nx - 1; ++i) rhs[i] = explicit_part[i] + th * dt * f_cur[i];
      // Thomas on rows 1..nx-2
      const int m0 = 1, m1 = nx - 2;
      auto a_of = [&](int i) { return i == m1 ? Al : A[i]; };
      auto b_of = [&](int i) { return i == m0 ? B1 : (i == m1 ? Bl : B[i]); };
      auto c_of = [&](int i) { return i == m0 ? C1 : C[i]; };
      cp[m0] = c_of(m0) / b_of(m0);
      dp[m0] = rhs[m0] / b_of(m0);
      for (int i = m0 + 1; i <= m1; ++i) {
        const double den = b_of(i) - a_of(i) * cp[i - 1];
        cp[i] = c_of(i) / den;
        dp[i] = (rhs[i] - a_of(i) * dp[i - 1]) / den;
      }
      prev = cur;
      cur[m1] = dp[m1];
      for (int i = m1 - 1; i >= m0; --i) cur[i] = dp[i] - cp[i] * cur[i + 1];
      cur[0] = 2.0 * cur[1] - cur[2];
      cur[nx - 1] = 2.0 * cur[nx - 2] - cur[nx - 3];
      central_differences(cur.data(), cur_x.data(), nx, dx);
      ++it;
      double diff = 0.0;
      for (int i = 0; i < nx; ++i) diff = std::max(diff, std::abs(cur[i] - prev[i]));
      if (!std::isfinite(diff)) {
        std::ostringstream os;
        os << "PDE solution not finite at time level " << j;
        throw Error(ErrorKind::Numeric, os.str());
      }
      if (p.zero_generator || diff <= g.picard_tol) break;
      if (it >= g.picard_max_iter) {
        std::ostringstream os;
        os << "Picard iteration on f did not converge at time level " << j << " (last change " << diff << ")";
        throw Error(ErrorKind::Convergence, os.str());
      }
    }
    out.max_picard = std::max(out.max_picard, it);

    // Residual of the discrete equation with the final iterate.
    if (!p.zero_generator) forcing(t, cur.data(), cur_x.data(), f_cur);
    for (int i = 1; i < nx - 1; ++i) {
      const double lhs = cur[i] - th * dt * (lo[i] * cur[i - 1] + di[i] * cur[i] + up[i] * cur[i + 1]);
      const double r = lhs - explicit_part[i] - th * dt * f_cur[i];
      out.max_residual = std::max(out.max_residual, std::abs(r));
    }
    std::copy(cur.begin(), cur.end(), out.u.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(j) * N));
    std::copy(cur_x.begin(), cur_x.end(),
              out.ux.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(j) * N));
  }
  return out;
}

}  // namespace

PdeReference pde_reference_solver(const ProblemSpec& p, const PdeGridSpec& spec) {
  if (spec.time_steps < 1) throw Error(ErrorKind::Config, "PDE grid needs at least one time step");
  if (spec.space_points < 5) throw Error(ErrorKind::Config, "PDE grid needs at least 5 space points");
  if (!(spec.x_max > spec.x_min)) throw Error(ErrorKind::Config, "PDE grid needs x_min < x_max");
  if (spec.theta < 0.0 || spec.theta > 1.0) throw Error(ErrorKind::Config, "theta must lie in [0, 1]");
  const double dt = p.horizon / spec.time_steps;
  if (p.lipschitz_f && spec.theta * dt * *p.lipschitz_f >= 1.0)
    throw Error(ErrorKind::Config, "theta dt L_f >= 1: Picard iteration is not a contraction");

  PdeReference ref;
  ref.spec_ = spec;
  ref.horizon_ = p.horizon;
  ref.dt_ = dt;
  ref.dx_ = (spec.x_max - spec.x_min) / (spec.space_points - 1);
  Solved full = theta_solve(p, spec);
  ref.u_ = std::move(full.u);
  ref.ux_ = std::move(full.ux);
  ref.max_residual_ = full.max_residual;
  ref.max_picard_ = full.max_picard;

  if (spec.richardson) {
    if (spec.time_steps % 2 != 0 || spec.space_points % 2 != 1 || spec.space_points < 9) {
      ref.warnings_.push_back("Richardson estimate skipped: needs even nt and odd nx >= 9");
    } else {
      PdeGridSpec half = spec;
      half.time_steps = spec.time_steps / 2;
      half.space_points = (spec.space_points + 1) / 2;
      const Solved coarse = theta_solve(p, half);
      const int hn = half.space_points;
      double est = 0.0;
      for (int i = hn / 4; i <= hn - 1 - hn / 4; ++i)
        est = std::max(est, std::abs(ref.u_[static_cast<std::size_t>(2 * i)] - coarse.u[static_cast<std::size_t>(i)]));
      ref.richardson_estimate_ = est / 3.0;
      if (ref.richardson_estimate_ > spec.accuracy_tol) {
        std::ostringstream os;
        os << "accuracy warning: Richardson estimate " << ref.richardson_estimate_ << " above tolerance "
           << spec.accuracy_tol;
        ref.warnings_.push_back(os.str());
      }
    }
  }
  return ref;
}

}  // namespace rwbsde
