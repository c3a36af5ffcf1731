#include "rwbsde/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "rwbsde/errors.hpp"
#include "rwbsde/parallel.hpp"
#include "rwbsde/rng.hpp"
#include "rwbsde/skorohod.hpp"

namespace rwbsde {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorKind::Config, what); }

template <class T>
T get_as(const json& j, const char* key) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    config_error(std::string("config key '") + key + "': " + e.what());
  }
}

std::vector<int> sorted_steps(const std::vector<int>& n_list) {
  std::vector<int> steps = n_list;
  std::sort(steps.begin(), steps.end());
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  return steps;
}

int eval_index(double v, const WalkGrid& grid) {
  // floor(v / h) with v on the fine grid; the nudge keeps v = t_k exact.
  const double r = v / grid.h();
  return std::min(grid.steps() - 1, static_cast<int>(std::floor(r + 1e-9)));
}

std::size_t fine_total(const ExperimentConfig& cfg) {
  return static_cast<std::size_t>(sorted_steps(cfg.n_list).back()) * static_cast<std::size_t>(cfg.fine_factor);
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) config_error("config must be a JSON object");
  ExperimentConfig cfg;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const json& v = it.value();
    const char* k = key.c_str();
    if (key == "problem") {
      cfg.problem = get_as<std::string>(v, k);
    } else if (key == "params") {
      if (!v.is_object()) config_error("config key 'params' must be an object");
      for (auto p = v.begin(); p != v.end(); ++p) cfg.params[p.key()] = get_as<double>(p.value(), k);
    } else if (key == "x0") {
      cfg.x0 = get_as<double>(v, k);
    } else if (key == "v") {
      cfg.v = get_as<double>(v, k);
    } else if (key == "n_list") {
      cfg.n_list = get_as<std::vector<int>>(v, k);
    } else if (key == "samples") {
      cfg.samples = get_as<std::size_t>(v, k);
    } else if (key == "fine_factor") {
      cfg.fine_factor = get_as<int>(v, k);
    } else if (key == "seed") {
      cfg.seed = get_as<std::uint64_t>(v, k);
    } else if (key == "backend") {
      cfg.backend = get_as<std::string>(v, k);
      if (cfg.backend != "auto" && cfg.backend != "tree" && cfg.backend != "grid")
        config_error("backend must be auto, tree or grid");
    } else if (key == "tree_max_n") {
      cfg.tree_max_n = get_as<int>(v, k);
    } else if (key == "xgrid") {
      if (v.is_null()) continue;
      if (!v.is_object()) config_error("config key 'xgrid' must be an object");
      XGrid g;
      for (auto p = v.begin(); p != v.end(); ++p) {
        if (p.key() == "x_min") g.x_min = get_as<double>(p.value(), "xgrid.x_min");
        else if (p.key() == "x_max") g.x_max = get_as<double>(p.value(), "xgrid.x_max");
        else if (p.key() == "points") g.points = get_as<int>(p.value(), "xgrid.points");
        else config_error("unknown xgrid key '" + p.key() + "'");
      }
      cfg.xgrid = g;
    } else if (key == "zhat") {
      cfg.zhat = get_as<bool>(v, k);
    } else if (key == "zhat_outer") {
      cfg.zhat_outer = get_as<std::size_t>(v, k);
    } else if (key == "zhat_inner") {
      cfg.zhat_inner = get_as<std::size_t>(v, k);
    } else if (key == "zhat_exact_max_n") {
      cfg.zhat_exact_max_n = get_as<int>(v, k);
    } else if (key == "horizon_cap_factor") {
      cfg.horizon_cap_factor = get_as<double>(v, k);
    } else if (key == "z_mode") {
      const auto m = get_as<std::string>(v, k);
      if (m == "weight") cfg.z_mode = ZRepresentation::Weight;
      else if (m == "gradient") cfg.z_mode = ZRepresentation::Gradient;
      else config_error("z_mode must be weight or gradient");
    } else if (key == "solve_n") {
      if (!v.is_null()) cfg.solve_n = get_as<int>(v, k);
    } else if (key == "probes") {
      cfg.probes = get_as<int>(v, k);
    } else if (key == "p_norm") {
      cfg.p_norm = get_as<double>(v, k);
    } else if (key == "threads") {
      cfg.threads = get_as<unsigned>(v, k);
    } else {
      config_error("unknown config key '" + key + "'");
    }
  }
  return cfg;
}

ExperimentConfig config_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot read config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    config_error("config file " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["problem"] = cfg.problem;
  j["params"] = json::object();
  for (const auto& [k, v] : cfg.params) j["params"][k] = v;
  j["x0"] = cfg.x0;
  j["v"] = cfg.v;
  j["n_list"] = cfg.n_list;
  j["samples"] = cfg.samples;
  j["fine_factor"] = cfg.fine_factor;
  j["seed"] = cfg.seed;
  j["backend"] = cfg.backend;
  j["tree_max_n"] = cfg.tree_max_n;
  if (cfg.xgrid)
    j["xgrid"] = {{"x_min", cfg.xgrid->x_min}, {"x_max", cfg.xgrid->x_max}, {"points", cfg.xgrid->points}};
  else
    j["xgrid"] = nullptr;
  j["zhat"] = cfg.zhat;
  j["zhat_outer"] = cfg.zhat_outer;
  j["zhat_inner"] = cfg.zhat_inner;
  j["zhat_exact_max_n"] = cfg.zhat_exact_max_n;
  j["horizon_cap_factor"] = cfg.horizon_cap_factor;
  j["z_mode"] = to_string(cfg.z_mode);
  j["solve_n"] = cfg.solve_n ? json(*cfg.solve_n) : json(nullptr);
  j["probes"] = cfg.probes;
  j["p_norm"] = cfg.p_norm;
  return j;
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string text = config_to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void check_experiment(const ExperimentConfig& cfg, const ProblemSpec& p) {
  const double T = p.horizon;
  if (!(cfg.v >= 0.0 && cfg.v < T)) config_error("evaluation time v must lie in [0, T)");
  if (cfg.n_list.empty()) config_error("n_list is empty");
  for (int n : cfg.n_list)
    if (n < 2) config_error("every n must be at least 2");
  if (cfg.samples < 100) config_error("at least 100 samples per n are required");
  if (cfg.fine_factor < 16) config_error("fine_factor M must be at least 16");
  if (cfg.horizon_cap_factor < 4.0) config_error("horizon_cap_factor must be at least 4");
  if (!std::isfinite(cfg.x0)) config_error("x0 must be finite");
  const std::size_t total = fine_total(cfg);
  for (int n : cfg.n_list)
    if (total % static_cast<std::size_t>(n) != 0)
      config_error("n = " + std::to_string(n) + " does not divide n_max * M");
  const double r = cfg.v / T * static_cast<double>(total);
  if (std::abs(r - std::round(r)) > 1e-6) config_error("v is not a node of the fine grid T / (n_max M)");
  if (cfg.xgrid && (cfg.xgrid->points < 3 || !(cfg.xgrid->x_max > cfg.xgrid->x_min)))
    config_error("xgrid needs x_min < x_max and at least 3 points");
}

XGrid default_xgrid(const ProblemSpec& p, double x0) {
  const double T = p.horizon;
  const double box = default_probe_half_width(x0);
  double smax = 0.0, bmax = 0.0;
  for (int it = 0; it <= 2; ++it) {
    const double t = 0.5 * T * it;
    for (int i = 0; i <= 200; ++i) {
      const double x = x0 - box + 2.0 * box * i / 200.0;
      smax = std::max(smax, std::abs(p.diffusion(t, x)));
      bmax = std::max(bmax, std::abs(p.drift(t, x)));
    }
  }
  const double half = 2.0 * std::max(box, 6.0 * smax * std::sqrt(T) + bmax * T);
  return XGrid{x0 - half, x0 + half, 4001};
}

// ---------------------------------------------------------------------------
// Convergence

namespace {

struct SolvedLevel {
  int n;
  WalkGrid grid;
  int k;
  DiscreteSolution sol;
};

DiscreteSolution solve_for(const ExperimentConfig& cfg, const ProblemSpec& p, const WalkGrid& grid) {
  const int n = grid.steps();
  const bool tree = cfg.backend == "tree" || (cfg.backend == "auto" && n <= cfg.tree_max_n);
  if (tree) return solve_tree(p, grid, cfg.x0);
  return solve_grid(p, grid, cfg.xgrid.value_or(default_xgrid(p, cfg.x0)));
}

bool sampling_failure(const Error& e) {
  return e.kind() == ErrorKind::RareEvent || e.kind() == ErrorKind::Numeric;
}

json fit_json(const SlopeFit& f) {
  return {{"slope", f.slope},     {"intercept", f.intercept}, {"slope_se", f.slope_se}, {"ci_low", f.ci_low},
          {"ci_high", f.ci_high}, {"used", f.used},           {"excluded", f.excluded}};
}

SlopeFit fit_from_json(const json& j) {
  SlopeFit f;
  f.slope = j.at("slope").get<double>();
  f.intercept = j.at("intercept").get<double>();
  f.slope_se = j.at("slope_se").get<double>();
  f.ci_low = j.at("ci_low").get<double>();
  f.ci_high = j.at("ci_high").get<double>();
  f.used = j.at("used").get<std::vector<int>>();
  f.excluded = j.at("excluded").get<std::vector<int>>();
  return f;
}

bool same_fit(const SlopeFit& a, const SlopeFit& b) {
  return a.slope == b.slope && a.intercept == b.intercept && a.slope_se == b.slope_se && a.ci_low == b.ci_low &&
         a.ci_high == b.ci_high && a.used == b.used && a.excluded == b.excluded;
}

RateFit make_fit(const std::string& quantity, double expected, bool asserted, const std::vector<SlopeRow>& rows) {
  RateFit f;
  f.quantity = quantity;
  f.expected = expected;
  f.band = expected - 0.1;
  f.asserted = asserted;
  // roundoff-level errors count as zero, matching the Zhat table
  const bool all_zero = std::all_of(rows.begin(), rows.end(), [](const SlopeRow& r) { return r.error <= 1e-24; });
  if (all_zero) {
    f.note = "identically zero";
    return f;
  }
  try {
    f.fit = fit_slope(rows);
    f.pass = !asserted || f.fit->slope >= f.band;
    if (!f.fit->excluded.empty()) f.note = "rows excluded (se >= 25% of estimate or non-positive)";
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::InsufficientData) throw;
    f.note = e.what();
    f.pass = !asserted;
  }
  return f;
}

}  // namespace

bool RateFit::operator==(const RateFit& o) const {
  if (quantity != o.quantity || expected != o.expected || band != o.band || asserted != o.asserted ||
      note != o.note || pass != o.pass || fit.has_value() != o.fit.has_value())
    return false;
  return !fit || same_fit(*fit, *o.fit);
}

bool RateReport::operator==(const RateReport& o) const {
  return config == o.config && config_hash == o.config_hash && seed == o.seed && rows == o.rows && fits == o.fits &&
         warnings == o.warnings && metadata == o.metadata && rates_pass == o.rates_pass;
}

RateReport run_convergence(const ExperimentConfig& cfg) {
  const ProblemSpec p = builtin_problem(cfg.problem, cfg.params);
  check_experiment(cfg, p);
  if (!p.reference) throw Error(ErrorKind::NoReference, "problem '" + p.name + "' has no reference solution");
  const double T = p.horizon;
  const std::vector<int> steps = sorted_steps(cfg.n_list);
  const std::size_t total = fine_total(cfg);
  const double dt = T / static_cast<double>(total);
  const auto iv = static_cast<std::size_t>(std::llround(cfg.v / T * static_cast<double>(total)));
  const double cap = cfg.horizon_cap_factor * T;

  std::vector<SolvedLevel> levels;
  for (int n : steps) {
    const WalkGrid grid(n, T);
    levels.push_back({n, grid, eval_index(cfg.v, grid), solve_for(cfg, p, grid)});
  }
  // Build a lazily computed reference before the parallel loop.
  (void)reference_solution(p, cfg.v, cfg.x0);

  const std::size_t S = cfg.samples, L = levels.size();
  enum { kY, kZ, kC, kTime, kSpace, kFields };
  std::vector<double> data(S * L * kFields, 0.0);
  std::vector<std::uint8_t> ok(S * L, 0), trunc(S * L, 0);
  auto slot = [&](std::size_t s, std::size_t a) { return (s * L + a); };

  const unsigned workers = resolve_threads(cfg.threads);
  std::vector<BrownianPath> paths;
  for (unsigned w = 0; w < workers; ++w) paths.emplace_back(dt, cfg.seed, 0);

  parallel_for(S, workers, [&](std::size_t s, unsigned w) {
    BrownianPath& path = paths[w];
    path.reset(cfg.seed, s);
    path.ensure(iv);
    FinePath fine;
    ReferenceValue ref_v{};
    try {
      fine = euler_fine(p, path.values(), dt, iv, cfg.x0);
      ref_v = reference_solution(p, cfg.v, fine.x[iv]);
    } catch (const Error& e) {
      if (!sampling_failure(e)) throw;
      return;
    }
    for (std::size_t a = 0; a < L; ++a) {
      const SolvedLevel& lv = levels[a];
      try {
        const Embedding emb = embed_walk(path, lv.grid, cap);
        const auto b = path.values();
        for (int j = 1; j <= lv.n; ++j) {
          const double d = b[emb.tau_index[j - 1]] - emb.b_at_tau[j - 1];
          if ((d > 0.0 ? 1 : -1) != emb.eps[j - 1])
            throw Error(ErrorKind::Numeric, "coupling mismatch: sign differs from the Brownian increment");
        }
        double x = cfg.x0;
        for (int j = 1; j <= lv.k; ++j) x = step_state(p, lv.grid, j, x, emb.eps[j - 1]);
        bool off = false;
        const double yn = lv.sol.value(lv.k, x, &off);
        const double zn = z_at(lv.sol, lv.k, x);
        const std::size_t ik = static_cast<std::size_t>(lv.k) * (total / static_cast<std::size_t>(lv.n));
        const ReferenceValue ref_k = reference_solution(p, lv.grid.time(lv.k), fine.x[ik]);
        double* out = &data[slot(s, a) * kFields];
        out[kY] = (ref_v.y - yn) * (ref_v.y - yn);
        out[kZ] = (ref_v.z - zn) * (ref_v.z - zn);
        out[kC] = out[kY] + out[kZ];
        out[kTime] = (ref_v.y - ref_k.y) * (ref_v.y - ref_k.y);
        out[kSpace] = (ref_k.y - yn) * (ref_k.y - yn);
        ok[slot(s, a)] = 1;
        trunc[slot(s, a)] = off ? 1 : 0;
      } catch (const Error& e) {
        if (!sampling_failure(e)) throw;
      }
    }
  });

  RateReport report;
  report.config = config_to_json(cfg);
  report.config_hash = config_hash(cfg);
  report.seed = cfg.seed;

  std::vector<SlopeRow> y_rows, z_rows, c_rows;
  for (std::size_t a = 0; a < L; ++a) {
    const SolvedLevel& lv = levels[a];
    std::vector<std::vector<double>> col(kFields);
    RateRow row;
    row.n = lv.n;
    row.h = lv.grid.h();
    row.k = lv.k;
    row.backend = to_string(lv.sol.backend());
    for (std::size_t s = 0; s < S; ++s) {
      if (!ok[slot(s, a)]) {
        ++row.failures;
        continue;
      }
      row.truncated += trunc[slot(s, a)];
      for (int f = 0; f < kFields; ++f) col[f].push_back(data[slot(s, a) * kFields + f]);
    }
    row.samples_used = S - row.failures;
    if (static_cast<double>(row.failures) > 0.001 * static_cast<double>(S)) {
      std::ostringstream os;
      os << row.failures << " of " << S << " samples failed for n = " << lv.n << " (more than 0.1%)";
      throw Error(ErrorKind::RareEvent, os.str());
    }
    if (row.failures > 0) {
      std::ostringstream os;
      os << "n = " << lv.n << ": " << row.failures << " failed samples dropped";
      report.warnings.push_back(os.str());
    }
    if (row.truncated > 0) {
      std::ostringstream os;
      os << "n = " << lv.n << ": " << row.truncated << " states outside the x-grid (extrapolated)";
      report.warnings.push_back(os.str());
    }
    const auto y = mean_and_se(col[kY]), z = mean_and_se(col[kZ]), c = mean_and_se(col[kC]);
    row.y_mse = y.mean;
    row.y_se = y.std_error;
    row.z_mse = z.mean;
    row.z_se = z.std_error;
    row.combined_mse = c.mean;
    row.combined_se = c.std_error;
    row.y_time_split = mean_and_se(col[kTime]).mean;
    row.y_space_split = mean_and_se(col[kSpace]).mean;
    row.split_holds = row.y_mse <= 2.0 * (row.y_time_split + row.y_space_split) * (1.0 + 1e-12);
    if (!row.split_holds) report.warnings.push_back("n = " + std::to_string(lv.n) + ": error split bound violated");
    y_rows.push_back({row.h, row.y_mse, row.y_se});
    z_rows.push_back({row.h, row.z_mse, row.z_se});
    c_rows.push_back({row.h, row.combined_mse, row.combined_se});
    report.rows.push_back(row);
  }

  if (cfg.zhat) {
    const ZhatTable table = run_zn_vs_zhat(cfg);
    for (auto& row : report.rows)
      for (const auto& zr : table.rows)
        if (zr.n == row.n) {
          row.zhat_mse = zr.mse;
          row.zhat_se = zr.se;
        }
  }

  const double alpha = p.alpha;
  if (p.zero_generator) {
    report.fits.push_back(make_fit("y", 0.5, true, y_rows));
    report.fits.push_back(make_fit("z", alpha / 2.0, true, z_rows));
    report.fits.push_back(make_fit("combined", std::min(0.5, alpha / 2.0), false, c_rows));
  } else {
    report.fits.push_back(make_fit("y", 0.5, false, y_rows));
    report.fits.push_back(make_fit("z", alpha / 2.0, false, z_rows));
    report.fits.push_back(make_fit("combined", std::min(0.5, alpha), true, c_rows));
  }
  report.rates_pass = std::all_of(report.fits.begin(), report.fits.end(), [](const RateFit& f) { return f.pass; });

  report.metadata = {{"version", kVersion},
                     {"coupling", "skorohod-embedding"},
                     {"common_random_numbers", true},
                     {"fine_step", dt},
                     {"v_fine_index", iv},
                     {"evaluation_index", "floor(v / h)"},
                     {"reference_kind", to_string(p.reference->kind)},
                     {"z_representation", to_string(cfg.z_mode)},
                     {"alpha", alpha},
                     {"zero_generator", p.zero_generator}};
  return report;
}

// ---------------------------------------------------------------------------
// Z^n against Zhat^n

ZhatTable run_zn_vs_zhat(const ExperimentConfig& cfg) {
  const ProblemSpec p = builtin_problem(cfg.problem, cfg.params);
  check_experiment(cfg, p);
  if (cfg.zhat_outer < 2 || cfg.zhat_inner < 2) config_error("zhat_outer and zhat_inner must be at least 2");
  const double T = p.horizon;
  ZhatTable table;
  table.config = config_to_json(cfg);
  table.config_hash = config_hash(cfg);
  const unsigned workers = resolve_threads(cfg.threads);

  bool all_exact = true;
  for (int n : sorted_steps(cfg.n_list)) {
    const WalkGrid grid(n, T);
    const int k = eval_index(cfg.v, grid);
    if (k >= n - 1) config_error("Zhat needs t_k < t_{n-1}; increase n or lower v");
    ZhatRow row;
    row.n = n;
    row.h = grid.h();
    row.k = k;
    if (n <= cfg.zhat_exact_max_n) {
      const DiscreteSolution sol = solve_tree(p, grid, cfg.x0, {}, std::max(n, kDefaultTreeCap));
      const std::size_t outer = std::size_t{1} << k;
      std::vector<double> sq(outer);
      ZhatOptions opts;
      opts.mode = ZhatMode::Exact;
      opts.tree_cap = std::max(n, kDefaultTreeCap);
      parallel_for(outer, workers, [&](std::size_t r, unsigned) {
        double x = cfg.x0;
        for (int j = 1; j <= k; ++j) x = step_state(p, grid, j, x, ((r >> (j - 1)) & 1U) ? 1 : -1);
        const double d = z_at(sol, k, x) - zhat_at(sol, k, x, opts).value;
        sq[r] = d * d;
      });
      row.mse = pairwise_sum(sq) / static_cast<double>(outer);
      row.se = 0.0;
      row.mode = "exact";
      row.outer = outer;
      row.inner = std::size_t{1} << (n - k - 1);
    } else {
      all_exact = false;
      const DiscreteSolution sol = solve_for(cfg, p, grid);
      std::vector<double> term(cfg.zhat_outer);
      parallel_for(cfg.zhat_outer, workers, [&](std::size_t s, unsigned) {
        double x = cfg.x0;
        for (int j = 1; j <= k; ++j) x = step_state(p, grid, j, x, rng::sign(cfg.seed, s, static_cast<std::uint64_t>(j - 1)));
        ZhatOptions opts;
        opts.mode = ZhatMode::MonteCarlo;
        opts.samples = cfg.zhat_inner;
        opts.seed = cfg.seed ^ 0x7a686174ULL;
        opts.stream = s;
        const ZhatEstimate est = zhat_at(sol, k, x, opts);
        const double d = z_at(sol, k, x) - est.value;
        term[s] = d * d - est.std_error * est.std_error;
      });
      const MeanEstimate m = mean_and_se(term);
      row.mse = m.mean;
      row.se = m.std_error;
      row.mode = "monte-carlo";
      row.outer = cfg.zhat_outer;
      row.inner = cfg.zhat_inner;
    }
    table.rows.push_back(row);
  }

  table.identically_zero =
      all_exact && std::all_of(table.rows.begin(), table.rows.end(), [](const ZhatRow& r) { return r.mse <= 1e-24; });
  for (std::size_t i = 1; i < table.rows.size(); ++i) {
    const ZhatRow &a = table.rows[i - 1], &b = table.rows[i];
    const double diff = b.mse - a.mse;
    const double sd = std::sqrt(a.se * a.se + b.se * b.se);
    if (sd > 0.0) {
      table.max_increase_z = std::max(table.max_increase_z, diff / sd);
      if (diff > 2.0 * sd) table.non_increasing = false;
    } else if (diff > 1e-12 * std::max(std::abs(a.mse), 1e-12)) {
      table.non_increasing = false;
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Serialization

json report_to_json(const RateReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"n", r.n},
                    {"h", r.h},
                    {"k", r.k},
                    {"backend", r.backend},
                    {"y_mse", r.y_mse},
                    {"y_se", r.y_se},
                    {"z_mse", r.z_mse},
                    {"z_se", r.z_se},
                    {"combined_mse", r.combined_mse},
                    {"combined_se", r.combined_se},
                    {"y_time_split", r.y_time_split},
                    {"y_space_split", r.y_space_split},
                    {"split_holds", r.split_holds},
                    {"zhat_mse", r.zhat_mse ? json(*r.zhat_mse) : json(nullptr)},
                    {"zhat_se", r.zhat_se ? json(*r.zhat_se) : json(nullptr)},
                    {"samples_used", r.samples_used},
                    {"failures", r.failures},
                    {"truncated", r.truncated}});
  }
  json fits = json::array();
  for (const auto& f : report.fits)
    fits.push_back({{"quantity", f.quantity},
                    {"expected", f.expected},
                    {"band", f.band},
                    {"asserted", f.asserted},
                    {"fit", f.fit ? fit_json(*f.fit) : json(nullptr)},
                    {"note", f.note},
                    {"pass", f.pass}});
  return {{"config", report.config}, {"config_hash", report.config_hash}, {"seed", report.seed},
          {"rows", rows},            {"fits", fits},                      {"warnings", report.warnings},
          {"metadata", report.metadata}, {"rates_pass", report.rates_pass}};
}

RateReport parse_report_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    RateReport r;
    r.config = j.at("config");
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& x : j.at("rows")) {
      RateRow row;
      row.n = x.at("n").get<int>();
      row.h = x.at("h").get<double>();
      row.k = x.at("k").get<int>();
      row.backend = x.at("backend").get<std::string>();
      row.y_mse = x.at("y_mse").get<double>();
      row.y_se = x.at("y_se").get<double>();
      row.z_mse = x.at("z_mse").get<double>();
      row.z_se = x.at("z_se").get<double>();
      row.combined_mse = x.at("combined_mse").get<double>();
      row.combined_se = x.at("combined_se").get<double>();
      row.y_time_split = x.at("y_time_split").get<double>();
      row.y_space_split = x.at("y_space_split").get<double>();
      row.split_holds = x.at("split_holds").get<bool>();
      if (!x.at("zhat_mse").is_null()) row.zhat_mse = x.at("zhat_mse").get<double>();
      if (!x.at("zhat_se").is_null()) row.zhat_se = x.at("zhat_se").get<double>();
      row.samples_used = x.at("samples_used").get<std::size_t>();
      row.failures = x.at("failures").get<std::size_t>();
      row.truncated = x.at("truncated").get<std::size_t>();
      r.rows.push_back(row);
    }
    for (const auto& x : j.at("fits")) {
      RateFit f;
      f.quantity = x.at("quantity").get<std::string>();
      f.expected = x.at("expected").get<double>();
      f.band = x.at("band").get<double>();
      f.asserted = x.at("asserted").get<bool>();
      if (!x.at("fit").is_null()) f.fit = fit_from_json(x.at("fit"));
      f.note = x.at("note").get<std::string>();
      f.pass = x.at("pass").get<bool>();
      r.fits.push_back(f);
    }
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    r.metadata = j.at("metadata");
    r.rates_pass = j.at("rates_pass").get<bool>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("malformed report JSON: ") + e.what());
  }
}

namespace {

void put(std::ostream& os, double v) { os << v; }

}  // namespace

void write_report_csv(std::ostream& os, const RateReport& report) {
  os << "n,h,k,backend,y_mse,y_se,z_mse,z_se,combined_mse,combined_se,y_time_split,y_space_split,zhat_mse,zhat_se,"
        "samples_used,failures,truncated\n";
  os.precision(17);
  for (const auto& r : report.rows) {
    os << r.n << ',';
    put(os, r.h);
    os << ',' << r.k << ',' << r.backend;
    for (double v : {r.y_mse, r.y_se, r.z_mse, r.z_se, r.combined_mse, r.combined_se, r.y_time_split, r.y_space_split}) {
      os << ',';
      put(os, v);
    }
    os << ',';
    if (r.zhat_mse) put(os, *r.zhat_mse);
    os << ',';
    if (r.zhat_se) put(os, *r.zhat_se);
    os << ',' << r.samples_used << ',' << r.failures << ',' << r.truncated << '\n';
  }
}

json zhat_to_json(const ZhatTable& table) {
  json rows = json::array();
  for (const auto& r : table.rows)
    rows.push_back({{"n", r.n}, {"h", r.h}, {"k", r.k}, {"mse", r.mse}, {"se", r.se},
                    {"mode", r.mode}, {"outer", r.outer}, {"inner", r.inner}});
  return {{"config", table.config},
          {"config_hash", table.config_hash},
          {"rows", rows},
          {"max_increase_z", table.max_increase_z},
          {"non_increasing", table.non_increasing},
          {"identically_zero", table.identically_zero}};
}

void write_zhat_csv(std::ostream& os, const ZhatTable& table) {
  os << "n,h,k,mse,se,mode,outer,inner\n";
  os.precision(17);
  for (const auto& r : table.rows)
    os << r.n << ',' << r.h << ',' << r.k << ',' << r.mse << ',' << r.se << ',' << r.mode << ',' << r.outer << ','
       << r.inner << '\n';
}

ReportFormat parse_format(const std::string& name) {
  if (name == "csv") return ReportFormat::Csv;
  if (name == "json") return ReportFormat::Json;
  config_error("format must be csv or json (got '" + name + "')");
}

namespace {

template <class Writer>
void write_file(const std::string& path, Writer&& writer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path + " for writing");
  writer(out);
  out.flush();
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path);
}

}  // namespace

void emit_report(const RateReport& report, ReportFormat format, const std::string& path) {
  write_file(path, [&](std::ostream& os) {
    if (format == ReportFormat::Json)
      os << report_to_json(report).dump(2) << '\n';
    else
      write_report_csv(os, report);
  });
}

void emit_zhat(const ZhatTable& table, ReportFormat format, const std::string& path) {
  write_file(path, [&](std::ostream& os) {
    if (format == ReportFormat::Json)
      os << zhat_to_json(table).dump(2) << '\n';
    else
      write_zhat_csv(os, table);
  });
}

}  // namespace rwbsde
