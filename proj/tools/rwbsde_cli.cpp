// Command-line front end: solve, converge, zhat, skorohod, validate.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "rwbsde/errors.hpp"
#include "rwbsde/harness.hpp"
#include "rwbsde/skorohod.hpp"
#include "rwbsde/solver.hpp"

namespace fs = std::filesystem;
using namespace rwbsde;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kConfigError = 2;
constexpr int kCapacityError = 3;
constexpr int kRateFailure = 4;

struct Common {
  std::string config;
  std::string problem;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> samples;
  std::string out_dir = ".";
  std::string format = "json";
  std::optional<unsigned> threads;
  bool assert_rates = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--problem", c.problem, "registry problem (overrides the config)");
  cmd->add_option("--seed", c.seed, "RNG seed");
  cmd->add_option("--samples", c.samples, "Monte Carlo samples");
  cmd->add_option("--out-dir", c.out_dir, "output directory");
  cmd->add_option("--format", c.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  cmd->add_option("--threads", c.threads, "worker threads (0 = all cores)");
  cmd->add_flag("--assert-rates", c.assert_rates, "exit 4 when a rate band fails");
}

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : config_from_file(c.config);
  if (!c.problem.empty()) cfg.problem = c.problem;
  if (c.seed) cfg.seed = *c.seed;
  if (c.samples) cfg.samples = *c.samples;
  if (c.threads) cfg.threads = *c.threads;
  return cfg;
}

std::string out_path(const Common& c, const std::string& stem, const std::string& ext) {
  std::error_code ec;
  fs::create_directories(c.out_dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + c.out_dir + ": " + ec.message());
  return (fs::path(c.out_dir) / (stem + "." + ext)).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path + " for writing");
  out << text;
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path);
}

int cmd_solve(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const ProblemSpec p = builtin_problem(cfg.problem, cfg.params);
  const int n = cfg.solve_n.value_or(cfg.n_list.empty() ? 8 : cfg.n_list.front());
  const WalkGrid grid(n, p.horizon);
  const bool tree = cfg.backend == "tree" || (cfg.backend == "auto" && n <= cfg.tree_max_n);
  const DiscreteSolution sol =
      tree ? solve_tree(p, grid, cfg.x0) : solve_grid(p, grid, cfg.xgrid.value_or(default_xgrid(p, cfg.x0)));
  const std::string csv = out_path(c, "solution", "csv");
  std::ofstream out(csv, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + csv + " for writing");
  write_solution_csv(out, sol);
  nlohmann::json diag = diagnostics_json(sol);
  diag["problem"] = p.name;
  diag["y0"] = y_at(sol, 0, cfg.x0);
  diag["z0"] = z_at(sol, 0, cfg.x0);
  write_text(out_path(c, "diagnostics", "json"), diag.dump(2) + "\n");
  std::cout << p.name << " n=" << n << " backend=" << to_string(sol.backend()) << " Y0=" << diag["y0"].get<double>()
            << " Z0=" << diag["z0"].get<double>() << '\n';
  return kOk;
}

int cmd_converge(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const RateReport report = run_convergence(cfg);
  const std::string path = out_path(c, "converge", c.format);
  emit_report(report, parse_format(c.format), path);
  for (const auto& r : report.rows)
    std::cout << "n=" << r.n << " y_mse=" << r.y_mse << " (" << r.y_se << ") z_mse=" << r.z_mse << " (" << r.z_se
              << ")\n";
  for (const auto& f : report.fits)
    std::cout << f.quantity << ": slope=" << (f.fit ? std::to_string(f.fit->slope) : std::string("n/a"))
              << " band>=" << f.band << (f.asserted ? "" : " (informative)") << (f.pass ? " ok" : " FAIL")
              << (f.note.empty() ? "" : " [" + f.note + "]") << '\n';
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "report: " << path << '\n';
  return c.assert_rates && !report.rates_pass ? kRateFailure : kOk;
}

int cmd_zhat(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const ZhatTable table = run_zn_vs_zhat(cfg);
  const std::string path = out_path(c, "zhat", c.format);
  emit_zhat(table, parse_format(c.format), path);
  for (const auto& r : table.rows)
    std::cout << "n=" << r.n << " k=" << r.k << " E|Z-Zhat|^2=" << r.mse << " (" << r.se << ", " << r.mode << ")\n";
  std::cout << "non-increasing: " << (table.non_increasing ? "yes" : "no") << "\nreport: " << path << '\n';
  return c.assert_rates && !table.non_increasing ? kRateFailure : kOk;
}

int cmd_skorohod(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const ProblemSpec p = builtin_problem(cfg.problem, cfg.params);
  EmbeddingStatsConfig ec;
  ec.steps = cfg.n_list;
  ec.horizon = p.horizon;
  ec.samples = cfg.samples;
  ec.p_norm = cfg.p_norm;
  ec.fine_factor = cfg.fine_factor;
  ec.seed = cfg.seed;
  ec.horizon_cap_factor = cfg.horizon_cap_factor;
  ec.threads = cfg.threads;
  const EmbeddingStats stats = embedding_error_stats(ec);
  const std::string path = out_path(c, "skorohod", c.format);
  if (c.format == "csv") {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot open " + path + " for writing");
    write_embedding_csv(out, stats);
  } else {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : stats.rows)
      rows.push_back({{"n", r.n}, {"h", r.h}, {"k", r.k}, {"statistic", r.statistic}, {"estimate", r.estimate},
                      {"std_error", r.std_error}});
    const nlohmann::json j = {{"config", config_to_json(cfg)},
                              {"config_hash", config_hash(cfg)},
                              {"p_norm", stats.p_norm},
                              {"samples", stats.samples},
                              {"slope_norm_of_sup", stats.slope_norm_of_sup},
                              {"slope_sup_of_norm", stats.slope_sup_of_norm},
                              {"rows", rows}};
    write_text(path, j.dump(2) + "\n");
  }
  std::cout << "slope ||sup|B^n-B|||_p = " << stats.slope_norm_of_sup
            << ", slope sup||B^n-B||_p = " << stats.slope_sup_of_norm << "\nreport: " << path << '\n';
  const bool in_band = stats.slope_norm_of_sup >= 0.17 && stats.slope_norm_of_sup <= 0.33;
  return c.assert_rates && !in_band ? kRateFailure : kOk;
}

int cmd_validate(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const ProblemSpec p = builtin_problem(cfg.problem, cfg.params);
  const ValidationReport rep = validate_problem(p, cfg.probes, cfg.seed, cfg.x0);
  nlohmann::json v = nlohmann::json::array();
  for (const auto& x : rep.violations)
    v.push_back({{"check", x.check}, {"t", x.t}, {"x", x.x}, {"detail", x.detail}});
  const nlohmann::json j = {{"problem", p.name}, {"pass", rep.pass}, {"probes", rep.probes},
                            {"box_half_width", rep.box_half_width}, {"violations", v}};
  write_text(out_path(c, "validate", "json"), j.dump(2) + "\n");
  std::cout << p.name << ": " << (rep.pass ? "pass" : "FAIL") << " (" << rep.probes << " probes, "
            << rep.violations.size() << " violations)\n";
  for (const auto& x : rep.violations) std::cout << "  " << x.check << " at t=" << x.t << " x=" << x.x << ": " << x.detail << '\n';
  return rep.pass ? kOk : kFailed;
}

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::Config:
    case ErrorKind::Registry:
    case ErrorKind::Validation: return kConfigError;
    case ErrorKind::Capacity: return kCapacityError;
    default: return kFailed;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random-walk FBSDE solver and convergence harness"};
  app.require_subcommand(1);
  Common common;
  struct Entry {
    const char* name;
    const char* help;
    int (*run)(const Common&);
  };
  const Entry entries[] = {
      {"solve", "solve the finite difference equation for one n", &cmd_solve},
      {"converge", "coupled convergence experiment", &cmd_converge},
      {"zhat", "E|Z^n - Zhat^n|^2 across n", &cmd_zhat},
      {"skorohod", "embedding error statistics", &cmd_skorohod},
      {"validate", "spot-check a problem's coefficients and reference", &cmd_validate},
  };
  std::vector<std::pair<CLI::App*, const Entry*>> subs;
  for (const auto& e : entries) {
    CLI::App* sub = app.add_subcommand(e.name, e.help);
    add_common(sub, common);
    subs.emplace_back(sub, &e);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }
  try {
    for (const auto& [sub, e] : subs)
      if (sub->parsed()) return e->run(common);
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kFailed;
}
