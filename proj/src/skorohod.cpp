#include "rwbsde/skorohod.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <sstream>

#include "rwbsde/errors.hpp"
#include "rwbsde/parallel.hpp"
#include "rwbsde/rng.hpp"
#include "rwbsde/stats.hpp"

namespace rwbsde {

namespace {
constexpr std::size_t kBlock = 4096;  // even, so Box-Muller pairs never straddle blocks
}

BrownianPath::BrownianPath(double fine_step, std::uint64_t seed, std::uint64_t sample)
    : dt_(fine_step), sqrt_dt_(std::sqrt(fine_step)), seed_(seed), sample_(sample) {
  if (!(fine_step > 0.0)) throw Error(ErrorKind::Config, "fine step must be positive");
  values_.reserve(kBlock + 1);
  values_.push_back(0.0);
}

void BrownianPath::reset(std::uint64_t seed, std::uint64_t sample) {
  seed_ = seed;
  sample_ = sample;
  values_.resize(1);
  values_[0] = 0.0;
}

void BrownianPath::ensure(std::size_t index) {
  while (values_.size() <= index) {
    const std::size_t start = values_.size() - 1;  // next increment index, always even
    values_.resize(values_.size() + kBlock);
    double b = values_[start];
    for (std::size_t i = start; i < start + kBlock; i += 2) {
      const auto [z0, z1] = rng::normal_pair(seed_, sample_, i / 2);
      b += sqrt_dt_ * z0;
      values_[i + 1] = b;
      b += sqrt_dt_ * z1;
      values_[i + 2] = b;
    }
  }
}

namespace {

constexpr std::uint64_t kBridgeSeed = 0x6272696467650001ULL;
constexpr std::uint64_t kBridgeCoin = 0x6272696467650002ULL;
// 2 * exp(-32) is far below anything a run can resolve
constexpr double kBridgeCutoff = 16.0;

struct Crossing {
  double time;
  std::int8_t sign;
};

struct Band {
  double lo, hi, anchor, level;
  int depth;
  std::uint64_t seed, sample, base;
};

// First exit from (lo, hi) of the bridge from (t0, v0) to (t1, v1), v0 inside.
std::optional<Crossing> refine(const Band& b, double t0, double v0, double t1, double v1, int depth,
                               std::uint64_t node) {
  const double dt = t1 - t0;
  const bool out = v1 >= b.hi || v1 <= b.lo;
  if (!out) {
    const double up = (b.hi - v0) * (b.hi - v1), down = (v0 - b.lo) * (v1 - b.lo);
    if (std::min(up, down) > kBridgeCutoff * dt) return std::nullopt;
    if (depth == b.depth) {
      const double pu = std::exp(-2.0 * up / dt), pd = std::exp(-2.0 * down / dt);
      const double u = rng::uniform(b.seed ^ kBridgeCoin, b.sample, b.base + node);
      if (u < pu) return Crossing{t1, 1};
      if (u < pu + pd) return Crossing{t1, -1};
      return std::nullopt;
    }
  } else if (depth == b.depth) {
    return Crossing{t1, static_cast<std::int8_t>(v1 >= b.hi ? 1 : -1)};
  }
  const double tm = 0.5 * (t0 + t1);
  const double vm = 0.5 * (v0 + v1) + 0.5 * std::sqrt(dt) * rng::normal(b.seed ^ kBridgeSeed, b.sample, b.base + node);
  if (auto left = refine(b, t0, v0, tm, vm, depth + 1, 2 * node)) return left;
  return refine(b, tm, vm, t1, v1, depth + 1, 2 * node + 1);
}

}  // namespace

Embedding embed_walk(BrownianPath& path, const WalkGrid& grid, double horizon_cap, int refine_depth) {
  if (refine_depth < 0 || refine_depth > kMaxBridgeRefineDepth)
    throw Error(ErrorKind::Config, "bridge refinement depth must lie in 0..20");
  const int n = grid.steps();
  const double level = grid.sqrt_h();
  const double dt = path.fine_step();
  const auto max_index = static_cast<std::size_t>(std::floor(horizon_cap / dt));
  Embedding emb;
  emb.tau_index.reserve(n);
  emb.tau.reserve(n);
  emb.eps.reserve(n);
  emb.b_at_tau.reserve(n + 1);
  emb.b_at_tau.push_back(0.0);
  double anchor = 0.0;
  std::size_t i = 0;
  auto record = [&](std::size_t index, double time, std::int8_t e) {
    anchor += e * level;
    emb.tau_index.push_back(index);
    emb.tau.push_back(time);
    emb.eps.push_back(e);
    emb.b_at_tau.push_back(anchor);
  };
  for (int k = 1; k <= n; ++k) {
    // a crossing inside the previous interval may leave B_i outside the new band
    if (k > 1 && std::abs(path.values()[i] - anchor) >= level) {
      record(i, static_cast<double>(i) * dt, path.values()[i] > anchor ? 1 : -1);
      continue;
    }
    for (;;) {
      ++i;
      if (i > max_index) {
        std::ostringstream os;
        os << "tau_" << k << " of " << n << " not reached before the horizon cap " << horizon_cap
           << " (E tau_n = T = " << grid.horizon() << "; sample " << path.sample() << ")";
        throw Error(ErrorKind::RareEvent, os.str());
      }
      path.ensure(i);
      const double v0 = path.values()[i - 1], v1 = path.values()[i];
      if (refine_depth > 0) {
        const Band band{anchor - level, anchor + level, anchor, level, refine_depth, path.seed(), path.sample(),
                        static_cast<std::uint64_t>(i) << (kMaxBridgeRefineDepth + 1)};
        if (auto c = refine(band, static_cast<double>(i - 1) * dt, v0, static_cast<double>(i) * dt, v1, 0, 1)) {
          record(i, c->time, c->sign);
          break;
        }
        continue;
      }
      const double d = v1 - anchor;
      if (std::abs(d) >= level) {
        record(i, static_cast<double>(i) * dt, d > 0.0 ? 1 : -1);
        break;
      }
    }
  }
  return emb;
}

CoupledSample sample_coupled(const WalkGrid& grid, int fine_factor, std::uint64_t seed, double horizon_cap,
                             std::uint64_t sample) {
  if (fine_factor < 16) throw Error(ErrorKind::Config, "fine factor M must be at least 16");
  if (horizon_cap < 4.0 * grid.horizon()) throw Error(ErrorKind::Config, "horizon cap must be at least 4 T");
  const double dt = grid.h() / static_cast<double>(fine_factor);
  if (dt >= grid.h()) throw Error(ErrorKind::Config, "fine step does not resolve sqrt(h)");
  BrownianPath path(dt, seed, sample);
  Embedding emb = embed_walk(path, grid, horizon_cap);

  CoupledSample out{grid, fine_factor, dt, {}, std::move(emb.tau), std::move(emb.eps), {}, std::move(emb.b_at_tau), {}};
  const std::size_t last_t = static_cast<std::size_t>(grid.steps()) * static_cast<std::size_t>(fine_factor);
  const std::size_t last = std::max(last_t, emb.tau_index.back());
  path.ensure(last);
  out.fine_brownian.assign(path.values().begin(), path.values().begin() + static_cast<std::ptrdiff_t>(last + 1));
  out.bw_at_t.resize(grid.steps() + 1);
  for (int k = 0; k <= grid.steps(); ++k)
    out.bw_at_t[k] = out.fine_brownian[static_cast<std::size_t>(k) * static_cast<std::size_t>(fine_factor)];
  return out;
}

// ---------------------------------------------------------------------------
// Embedding statistics

namespace {

constexpr std::size_t kChunk = 256;
constexpr int kEvalPoints = 128;

// Per-n sums over a chunk of samples.
struct Sums {
  // first moment and second moment of each scalar statistic
  std::vector<double> s1, s2;
  std::vector<double> eval_p, eval_p2;  // |B^n_t - B_t|^p at eval points
  std::size_t count = 0;
  double eps_sum = 0.0, eps_count = 0.0;
};

enum Stat : int {
  kTau1 = 0,
  kTauHalf,
  kTauN,
  kTau1Sq,
  kDiffHalfP,
  kDiffNP,
  kDiffN4,
  kSupP,
  kStatCount
};

void add(Sums& s, int stat, double v) {
  s.s1[stat] += v;
  s.s2[stat] += v * v;
}

MeanEstimate from_sums(double s1, double s2, std::size_t count) {
  MeanEstimate e;
  e.count = count;
  const double n = static_cast<double>(count);
  e.mean = s1 / n;
  const double var = std::max(0.0, (s2 - n * e.mean * e.mean) / (n - 1.0));
  e.std_error = std::sqrt(var / n);
  return e;
}

// (E|X|^p)^{1/p} with a delta-method standard error.
std::pair<double, double> p_norm(const MeanEstimate& moment, double p) {
  const double est = std::pow(moment.mean, 1.0 / p);
  const double se = moment.mean > 0.0 ? moment.std_error * est / (p * moment.mean) : 0.0;
  return {est, se};
}

double ols_slope(const std::vector<double>& h, const std::vector<double>& v) {
  std::vector<SlopeRow> rows;
  for (std::size_t i = 0; i < h.size(); ++i) rows.push_back({h[i], v[i], 0.0});
  if (rows.size() < 2) return 0.0;
  double mx = 0, my = 0;
  for (const auto& r : rows) {
    mx += std::log(r.h);
    my += std::log(r.error);
  }
  mx /= static_cast<double>(rows.size());
  my /= static_cast<double>(rows.size());
  double sxx = 0, sxy = 0;
  for (const auto& r : rows) {
    sxx += (std::log(r.h) - mx) * (std::log(r.h) - mx);
    sxy += (std::log(r.h) - mx) * (std::log(r.error) - my);
  }
  return sxy / sxx;
}

}  // namespace

EmbeddingStats embedding_error_stats(const EmbeddingStatsConfig& cfg) {
  if (cfg.steps.empty()) throw Error(ErrorKind::Config, "embedding statistics need at least one n");
  if (cfg.samples < 1000) throw Error(ErrorKind::Config, "embedding statistics need at least 1000 samples");
  if (cfg.fine_factor < 16) throw Error(ErrorKind::Config, "fine factor M must be at least 16");
  if (cfg.horizon_cap_factor < 4.0) throw Error(ErrorKind::Config, "horizon cap must be at least 4 T");
  if (!(cfg.p_norm > 0.0)) throw Error(ErrorKind::Config, "p must be positive");
  std::vector<int> steps = cfg.steps;
  std::sort(steps.begin(), steps.end());
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  const int n_max = steps.back();
  const std::size_t fine_total = static_cast<std::size_t>(n_max) * static_cast<std::size_t>(cfg.fine_factor);
  for (int n : steps) {
    if (n < 2) throw Error(ErrorKind::Config, "embedding statistics need n >= 2");
    if (fine_total % static_cast<std::size_t>(n) != 0 || fine_total % kEvalPoints != 0)
      throw Error(ErrorKind::Config, "every n must divide n_max * M (and 128 must divide it)");
  }
  const double dt = cfg.horizon / static_cast<double>(fine_total);
  const double cap = cfg.horizon_cap_factor * cfg.horizon;
  const double p = cfg.p_norm;
  const std::size_t ns = steps.size();

  const std::size_t chunks = (cfg.samples + kChunk - 1) / kChunk;
  std::vector<std::vector<Sums>> chunk_sums(chunks, std::vector<Sums>(ns));
  const unsigned workers = resolve_threads(cfg.threads);
  std::vector<BrownianPath> paths;
  for (unsigned w = 0; w < workers; ++w) paths.emplace_back(dt, cfg.seed, 0);

  parallel_for(chunks, workers, [&](std::size_t c, unsigned worker) {
    BrownianPath& path = paths[worker];
    auto& sums = chunk_sums[c];
    for (auto& s : sums) {
      s.s1.assign(kStatCount, 0.0);
      s.s2.assign(kStatCount, 0.0);
      s.eval_p.assign(kEvalPoints + 1, 0.0);
      s.eval_p2.assign(kEvalPoints + 1, 0.0);
    }
    const std::size_t lo = c * kChunk, hi = std::min(cfg.samples, lo + kChunk);
    for (std::size_t sample = lo; sample < hi; ++sample) {
      path.reset(cfg.seed, sample);
      path.ensure(fine_total);
      for (std::size_t a = 0; a < ns; ++a) {
        const int n = steps[a];
        const WalkGrid grid(n, cfg.horizon);
        const Embedding emb = embed_walk(path, grid, cap, cfg.refine_depth);
        const auto& b = path.values();
        const std::size_t stride = fine_total / static_cast<std::size_t>(n);
        Sums& s = sums[a];
        ++s.count;
        for (auto e : emb.eps) s.eps_sum += e;
        s.eps_count += n;
        const int half = n / 2;
        add(s, kTau1, emb.tau[0]);
        add(s, kTauHalf, emb.tau[half - 1]);
        add(s, kTauN, emb.tau[n - 1]);
        add(s, kTau1Sq, emb.tau[0] * emb.tau[0]);
        const double dh = std::abs(emb.b_at_tau[half] - b[static_cast<std::size_t>(half) * stride]);
        const double dn = std::abs(emb.b_at_tau[n] - b[fine_total]);
        add(s, kDiffHalfP, std::pow(dh, p));
        add(s, kDiffNP, std::pow(dn, p));
        add(s, kDiffN4, dn * dn * dn * dn);
        double sup = 0.0;
        for (std::size_t i = 0; i <= fine_total; ++i) {
          const std::size_t k = std::min<std::size_t>(i / stride, static_cast<std::size_t>(n));
          sup = std::max(sup, std::abs(emb.b_at_tau[k] - b[i]));
        }
        add(s, kSupP, std::pow(sup, p));
        const std::size_t eval_stride = fine_total / kEvalPoints;
        for (int j = 0; j <= kEvalPoints; ++j) {
          const std::size_t i = static_cast<std::size_t>(j) * eval_stride;
          const std::size_t k = std::min<std::size_t>(i / stride, static_cast<std::size_t>(n));
          const double v = std::pow(std::abs(emb.b_at_tau[k] - b[i]), p);
          s.eval_p[j] += v;
          s.eval_p2[j] += v * v;
        }
      }
    }
  });

  // Reduce chunks in order.
  std::vector<Sums> total(ns);
  for (auto& s : total) {
    s.s1.assign(kStatCount, 0.0);
    s.s2.assign(kStatCount, 0.0);
    s.eval_p.assign(kEvalPoints + 1, 0.0);
    s.eval_p2.assign(kEvalPoints + 1, 0.0);
  }
  for (const auto& chunk : chunk_sums)
    for (std::size_t a = 0; a < ns; ++a) {
      for (int st = 0; st < kStatCount; ++st) {
        total[a].s1[st] += chunk[a].s1[st];
        total[a].s2[st] += chunk[a].s2[st];
      }
      for (int j = 0; j <= kEvalPoints; ++j) {
        total[a].eval_p[j] += chunk[a].eval_p[j];
        total[a].eval_p2[j] += chunk[a].eval_p2[j];
      }
      total[a].count += chunk[a].count;
      total[a].eps_sum += chunk[a].eps_sum;
      total[a].eps_count += chunk[a].eps_count;
    }

  EmbeddingStats out;
  out.p_norm = p;
  out.samples = cfg.samples;
  std::vector<double> hs, sup_norms, norm_sups;
  for (std::size_t a = 0; a < ns; ++a) {
    const int n = steps[a];
    const double h = cfg.horizon / n;
    const Sums& s = total[a];
    auto est = [&](int st) { return from_sums(s.s1[st], s.s2[st], s.count); };
    auto row = [&](int k, const char* name, double e, double se) { out.rows.push_back({n, h, k, name, e, se}); };

    const double eps_mean = s.eps_sum / s.eps_count;
    row(0, "eps_mean", eps_mean, 1.0 / std::sqrt(s.eps_count));
    const auto t1 = est(kTau1), th = est(kTauHalf), tn = est(kTauN), t1sq = est(kTau1Sq);
    row(1, "tau_mean", t1.mean, t1.std_error);
    row(n / 2, "tau_mean", th.mean, th.std_error);
    row(n, "tau_mean", tn.mean, tn.std_error);
    row(1, "tau_sq_mean", t1sq.mean, t1sq.std_error);
    const auto [dh, dh_se] = p_norm(est(kDiffHalfP), p);
    const auto [dn, dn_se] = p_norm(est(kDiffNP), p);
    row(n / 2, "b_tau_minus_b_t_norm", dh, dh_se);
    row(n, "b_tau_minus_b_t_norm", dn, dn_se);
    const auto [d4, d4_se] = p_norm(est(kDiffN4), 4.0);
    const double scale = std::pow(cfg.horizon * h, 0.25);
    row(n, "b_tau_minus_b_t_l4_scaled", d4 / scale, d4_se / scale);
    const auto [ns_est, ns_se] = p_norm(est(kSupP), p);
    row(n, "norm_of_sup", ns_est, ns_se);
    double best = -1.0, best_se = 0.0;
    for (int j = 0; j <= kEvalPoints; ++j) {
      const auto m = from_sums(s.eval_p[j], s.eval_p2[j], s.count);
      const auto [e, se] = p_norm(m, p);
      if (e > best) {
        best = e;
        best_se = se;
      }
    }
    row(n, "sup_of_norm", best, best_se);
    hs.push_back(h);
    norm_sups.push_back(ns_est);
    sup_norms.push_back(best);
  }
  out.slope_norm_of_sup = ols_slope(hs, norm_sups);
  out.slope_sup_of_norm = ols_slope(hs, sup_norms);
  return out;
}

void write_embedding_csv(std::ostream& os, const EmbeddingStats& stats) {
  os << "n,h,k,statistic,estimate,std_error\n";
  os.precision(17);
  for (const auto& r : stats.rows)
    os << r.n << ',' << r.h << ',' << r.k << ',' << r.statistic << ',' << r.estimate << ',' << r.std_error << '\n';
}

}  // namespace rwbsde
