#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rwbsde {

using CoefficientFn = std::function<double(double t, double x)>;
using GeneratorFn = std::function<double(double t, double x, double y, double z)>;
using TerminalFn = std::function<double(double x)>;
using ParamMap = std::map<std::string, double>;

enum class ReferenceKind { ExactAnalytic, Quadrature, PdeNumeric };

const char* to_string(ReferenceKind kind) noexcept;

/// Continuous solution (y, z) = (u(t,x), sigma(t,x) u_x(t,x)) of the FBSDE.
struct ClosedFormReference {
  std::function<double(double t, double x)> y;
  std::function<double(double t, double x)> z;
  ReferenceKind kind = ReferenceKind::ExactAnalytic;
};

/// An FBSDE instance: forward coefficients, generator, terminal condition,
/// optional derivative callbacks and regularity metadata. Immutable after
/// construction; every callback must be pure.
struct ProblemSpec {
  std::string name;
  ParamMap params;

  double horizon = 1.0;
  CoefficientFn drift;
  CoefficientFn diffusion;
  GeneratorFn generator;
  TerminalFn terminal;

  CoefficientFn drift_x;
  CoefficientFn diffusion_x;
  TerminalFn terminal_d1;
  TerminalFn terminal_d2;
  GeneratorFn generator_x;
  GeneratorFn generator_y;
  GeneratorFn generator_z;

  /// f vanishes identically (declared, not inferred).
  bool zero_generator = false;

  // Regularity / growth metadata. Only spot-validated, never used by the scheme.
  double alpha = 1.0;
  int p0 = 0;
  double delta = 1.0;
  std::optional<double> lipschitz_f;
  std::optional<double> holder_cg;
  std::optional<double> growth_k;
  std::optional<double> kf;

  std::optional<ClosedFormReference> reference;

  bool has_state_derivatives() const { return static_cast<bool>(drift_x) && static_cast<bool>(diffusion_x); }
};

/// Psi(x) = K (1 + |x|^(p0+1)), the growth bound of g (K defaults to 1).
double growth_psi(const ProblemSpec& p, double x);
/// Psi-hat(x) = 1 + |x|^(6 p0 + 8).
double growth_psi_hat(const ProblemSpec& p, double x);

/// Names accepted by builtin_problem.
const std::vector<std::string>& builtin_problem_names();

/// Instantiates a registered problem. Unknown parameters are rejected, missing
/// ones take defaults. Throws Error{Registry} for unknown names and
/// Error{Validation} for parameters that break ellipticity or positivity.
ProblemSpec builtin_problem(const std::string& name, const ParamMap& params = {});

/// Reads `{ "problem": ..., "params": {...} }`.
ProblemSpec problem_from_json_text(const std::string& text);

struct ReferenceValue {
  double y;
  double z;
};

/// (y, z) of the continuous problem at (t, x). Throws Error{NoReference} when
/// the problem has no reference and Error{Domain} outside [0, T].
ReferenceValue reference_solution(const ProblemSpec& p, double t, double x);

struct Violation {
  std::string check;
  double t = 0.0;
  double x = 0.0;
  std::string detail;
};

struct ValidationReport {
  bool pass = true;
  int probes = 0;
  double box_half_width = 0.0;
  std::vector<Violation> violations;
};

/// Probe-box half width 6 (1 + |x0|).
double default_probe_half_width(double x0);

/// Spot checks ellipticity, derivative callbacks against central differences,
/// Lipschitz quotients of f against the declared constant, and the terminal
/// identity of the reference. Never throws for failed checks.
ValidationReport validate_problem(const ProblemSpec& p, int probes, std::uint64_t seed, double x0 = 0.0);

}  // namespace rwbsde
