#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rwbsde/continuum.hpp"
#include "rwbsde/problems.hpp"
#include "rwbsde/solver.hpp"
#include "rwbsde/stats.hpp"

namespace rwbsde {

struct ExperimentConfig {
  std::string problem = "brownian-identity";
  ParamMap params;
  double x0 = 0.0;
  /// Evaluation time; k = floor(v / h).
  double v = 0.5;
  std::vector<int> n_list{8, 16, 32, 64, 128};
  std::size_t samples = 10000;
  int fine_factor = 256;
  std::uint64_t seed = 1;
  /// auto | tree | grid. auto uses the tree up to tree_max_n.
  std::string backend = "auto";
  int tree_max_n = 14;
  std::optional<XGrid> xgrid;
  /// Also tabulate E|Z^n - Zhat^n|^2 in run_convergence.
  bool zhat = false;
  std::size_t zhat_outer = 2000;
  std::size_t zhat_inner = 256;
  /// n up to which E|Z^n - Zhat^n|^2 is computed by full enumeration.
  int zhat_exact_max_n = 16;
  double horizon_cap_factor = 8.0;
  ZRepresentation z_mode = ZRepresentation::Weight;
  /// `solve`: single n (defaults to the first of n_list).
  std::optional<int> solve_n;
  /// `validate`: number of random probes.
  int probes = 200;
  /// `skorohod`: moment order.
  double p_norm = 2.0;
  /// Not part of the report: results do not depend on it.
  unsigned threads = 0;
};

/// Strict parse: unknown keys and bad values raise Error{Config}.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig config_from_file(const std::string& path);
/// Canonical form (sorted keys, no thread count).
nlohmann::json config_to_json(const ExperimentConfig& cfg);
/// FNV-1a of the canonical config dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);
/// Throws Error{Config} for v outside [0, T), n < 2, samples < 100, n not
/// dividing n_max * M, or v off the fine grid.
void check_experiment(const ExperimentConfig& cfg, const ProblemSpec& p);

/// Spatial grid used when the config does not give one: centred on x0 with
/// half width twice max(6 (1 + |x0|), 6 sigma_max sqrt(T) + |b|_max T).
XGrid default_xgrid(const ProblemSpec& p, double x0);

struct RateRow {
  int n = 0;
  double h = 0.0;
  int k = 0;
  std::string backend;
  double y_mse = 0.0;
  double y_se = 0.0;
  double z_mse = 0.0;
  double z_se = 0.0;
  double combined_mse = 0.0;
  double combined_se = 0.0;
  /// E|Y_v - Y_{t_k}|^2 and E|Y_{t_k} - Y^n_{t_k}|^2.
  double y_time_split = 0.0;
  double y_space_split = 0.0;
  bool split_holds = true;
  std::optional<double> zhat_mse;
  std::optional<double> zhat_se;
  std::size_t samples_used = 0;
  std::size_t failures = 0;
  /// Grid backend queries that fell outside the x-grid.
  std::size_t truncated = 0;

  bool operator==(const RateRow&) const = default;
};

struct RateFit {
  /// y | z | combined
  std::string quantity;
  double expected = 0.0;
  /// Lowest acceptable slope.
  double band = 0.0;
  /// Informative fits never fail the report.
  bool asserted = true;
  std::optional<SlopeFit> fit;
  std::string note;
  bool pass = true;

  bool operator==(const RateFit& o) const;
};

struct RateReport {
  nlohmann::json config;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<RateRow> rows;
  std::vector<RateFit> fits;
  std::vector<std::string> warnings;
  nlohmann::json metadata;
  bool rates_pass = true;

  bool operator==(const RateReport& o) const;
};

/// Coupled convergence experiment. Requires a reference (y, z).
RateReport run_convergence(const ExperimentConfig& cfg);

struct ZhatRow {
  int n = 0;
  double h = 0.0;
  int k = 0;
  double mse = 0.0;
  double se = 0.0;
  /// exact | monte-carlo
  std::string mode;
  std::size_t outer = 0;
  std::size_t inner = 0;

  bool operator==(const ZhatRow&) const = default;
};

struct ZhatTable {
  nlohmann::json config;
  std::string config_hash;
  std::vector<ZhatRow> rows;
  /// Largest (mse_{next} - mse) / sqrt(se^2 + se_next^2) over consecutive n.
  double max_increase_z = 0.0;
  bool non_increasing = true;
  bool identically_zero = false;
};

/// E|Z^n_{t_k} - Zhat^n_{t_k}|^2 per n: full enumeration up to
/// zhat_exact_max_n, outer/inner Monte Carlo beyond (inner variance removed).
ZhatTable run_zn_vs_zhat(const ExperimentConfig& cfg);

nlohmann::json report_to_json(const RateReport& report);
RateReport parse_report_json(const std::string& text);
/// Columns n,h,k,backend,y_mse,y_se,z_mse,z_se,combined_mse,combined_se,
/// y_time_split,y_space_split,zhat_mse,zhat_se,samples_used,failures,truncated.
void write_report_csv(std::ostream& os, const RateReport& report);
nlohmann::json zhat_to_json(const ZhatTable& table);
/// Columns n,h,k,mse,se,mode,outer,inner.
void write_zhat_csv(std::ostream& os, const ZhatTable& table);

enum class ReportFormat { Csv, Json };
ReportFormat parse_format(const std::string& name);

/// Writes the report to `path`; Error{Io} names the path on failure.
void emit_report(const RateReport& report, ReportFormat format, const std::string& path);
void emit_zhat(const ZhatTable& table, ReportFormat format, const std::string& path);

}  // namespace rwbsde
