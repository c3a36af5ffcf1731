#include "rwbsde/problems.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "rwbsde/continuum.hpp"
#include "rwbsde/errors.hpp"
#include "rwbsde/quadrature.hpp"
#include "rwbsde/rng.hpp"

namespace rwbsde {

const char* to_string(ReferenceKind kind) noexcept {
  switch (kind) {
    case ReferenceKind::ExactAnalytic: return "exact-analytic";
    case ReferenceKind::Quadrature: return "quadrature";
    case ReferenceKind::PdeNumeric: return "pde-numeric";
  }
  return "unknown";
}

double growth_psi(const ProblemSpec& p, double x) {
  const double k = p.growth_k.value_or(1.0);
  return k * (1.0 + std::pow(std::abs(x), p.p0 + 1));
}

double growth_psi_hat(const ProblemSpec& p, double x) {
  return 1.0 + std::pow(std::abs(x), 6 * p.p0 + 8);
}

namespace {

class Params {
 public:
  Params(const std::string& problem, const ParamMap& given, ParamMap defaults)
      : values_(std::move(defaults)) {
    for (const auto& [key, value] : given) {
      if (!values_.contains(key)) {
        std::ostringstream os;
        os << "problem '" << problem << "' has no parameter '" << key << "'; accepted:";
        for (const auto& [k, v] : values_) os << ' ' << k;
        throw Error(ErrorKind::Registry, os.str());
      }
      if (!std::isfinite(value))
        throw Error(ErrorKind::Validation, "parameter '" + key + "' is not finite");
      values_[key] = value;
    }
  }

  double operator[](const std::string& key) const { return values_.at(key); }
  const ParamMap& all() const { return values_; }

 private:
  ParamMap values_;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::Validation, what);
}

ProblemSpec base(const std::string& name, const Params& params) {
  ProblemSpec p;
  p.name = name;
  p.params = params.all();
  p.horizon = params["T"];
  require(p.horizon > 0.0, "horizon T must be positive");
  return p;
}

void zero_generator(ProblemSpec& p) {
  p.generator = [](double, double, double, double) { return 0.0; };
  p.generator_x = p.generator;
  p.generator_y = p.generator;
  p.generator_z = p.generator;
  p.zero_generator = true;
  p.lipschitz_f = 0.0;
  p.kf = 0.0;
}

void constant_coefficients(ProblemSpec& p, double mu, double sigma) {
  p.drift = [mu](double, double) { return mu; };
  p.diffusion = [sigma](double, double) { return sigma; };
  p.drift_x = [](double, double) { return 0.0; };
  p.diffusion_x = [](double, double) { return 0.0; };
}

ProblemSpec brownian_identity(const ParamMap& given) {
  const Params params("brownian-identity", given, {{"T", 1.0}});
  ProblemSpec p = base("brownian-identity", params);
  constant_coefficients(p, 0.0, 1.0);
  zero_generator(p);
  p.terminal = [](double x) { return x; };
  p.terminal_d1 = [](double) { return 1.0; };
  p.terminal_d2 = [](double) { return 0.0; };
  p.alpha = 1.0;
  p.p0 = 0;
  p.delta = 1.0;
  p.holder_cg = 1.0;
  p.reference = ClosedFormReference{[](double, double x) { return x; },
                                    [](double, double) { return 1.0; }, ReferenceKind::ExactAnalytic};
  return p;
}

ProblemSpec brownian_square(const ParamMap& given) {
  const Params params("brownian-square", given, {{"T", 1.0}});
  ProblemSpec p = base("brownian-square", params);
  constant_coefficients(p, 0.0, 1.0);
  zero_generator(p);
  p.terminal = [](double x) { return x * x; };
  p.terminal_d1 = [](double x) { return 2.0 * x; };
  p.terminal_d2 = [](double) { return 2.0; };
  p.alpha = 1.0;
  p.p0 = 1;
  p.delta = 1.0;
  p.holder_cg = 1.0;
  const double horizon = p.horizon;
  p.reference = ClosedFormReference{[horizon](double t, double x) { return x * x + (horizon - t); },
                                    [](double, double x) { return 2.0 * x; }, ReferenceKind::ExactAnalytic};
  return p;
}

ProblemSpec exp_diffusion(const ParamMap& given) {
  const Params params("exp-diffusion", given, {{"T", 1.0}, {"mu", 0.1}, {"sigma", 0.5}, {"lambda", 1.0}});
  ProblemSpec p = base("exp-diffusion", params);
  const double mu = params["mu"], sigma = params["sigma"], lambda = params["lambda"];
  require(sigma > 0.0, "exp-diffusion needs sigma > 0 (ellipticity)");
  constant_coefficients(p, mu, sigma);
  zero_generator(p);
  p.terminal = [lambda](double x) { return std::exp(lambda * x); };
  p.terminal_d1 = [lambda](double x) { return lambda * std::exp(lambda * x); };
  p.terminal_d2 = [lambda](double x) { return lambda * lambda * std::exp(lambda * x); };
  p.alpha = 1.0;
  p.p0 = 0;
  p.delta = sigma;
  const double horizon = p.horizon;
  const double rate = lambda * mu + 0.5 * lambda * lambda * sigma * sigma;
  p.reference = ClosedFormReference{
      [=](double t, double x) { return std::exp(lambda * x + rate * (horizon - t)); },
      [=](double t, double x) { return sigma * lambda * std::exp(lambda * x + rate * (horizon - t)); },
      ReferenceKind::ExactAnalytic};
  return p;
}

ProblemSpec discounted_bond(const ParamMap& given) {
  const Params params("discounted-bond", given, {{"T", 1.0}, {"r", 0.05}, {"sigma", 1.0}});
  ProblemSpec p = base("discounted-bond", params);
  const double r = params["r"], sigma = params["sigma"];
  require(sigma > 0.0, "discounted-bond needs sigma > 0 (ellipticity)");
  constant_coefficients(p, 0.0, sigma);
  p.generator = [r](double, double, double y, double) { return -r * y; };
  p.generator_x = [](double, double, double, double) { return 0.0; };
  p.generator_y = [r](double, double, double, double) { return -r; };
  p.generator_z = [](double, double, double, double) { return 0.0; };
  p.lipschitz_f = std::abs(r);
  p.kf = 0.0;
  p.terminal = [](double) { return 1.0; };
  p.terminal_d1 = [](double) { return 0.0; };
  p.terminal_d2 = [](double) { return 0.0; };
  p.alpha = 1.0;
  p.p0 = 0;
  p.delta = sigma;
  const double horizon = p.horizon;
  p.reference = ClosedFormReference{[=](double t, double) { return std::exp(-r * (horizon - t)); },
                                    [](double, double) { return 0.0; }, ReferenceKind::ExactAnalytic};
  return p;
}

ProblemSpec lipschitz_call(const ParamMap& given) {
  const Params params("lipschitz-call", given,
                      {{"T", 1.0}, {"strike", 0.0}, {"sigma", 1.0}, {"quadrature_nodes", 128.0}});
  ProblemSpec p = base("lipschitz-call", params);
  const double strike = params["strike"], sigma = params["sigma"];
  const int nodes = static_cast<int>(params["quadrature_nodes"]);
  require(sigma > 0.0, "lipschitz-call needs sigma > 0 (ellipticity)");
  require(nodes >= 64, "lipschitz-call needs at least 64 quadrature nodes");
  constant_coefficients(p, 0.0, sigma);
  zero_generator(p);
  p.terminal = [strike](double x) { return std::max(x - strike, 0.0); };
  p.terminal_d1 = [strike](double x) { return x > strike ? 1.0 : 0.0; };
  p.alpha = 1.0;
  p.p0 = 0;
  p.delta = sigma;
  p.holder_cg = 1.0;
  auto rule = std::make_shared<const QuadratureRule>(gauss_hermite_normal(nodes));
  const double horizon = p.horizon;
  const auto g = p.terminal;
  const auto gd = p.terminal_d1;
  p.reference = ClosedFormReference{
      [=](double t, double x) {
        const double tau = horizon - t;
        if (tau <= 0.0) return g(x);
        const double s = sigma * std::sqrt(tau);
        double acc = 0.0;
        for (std::size_t i = 0; i < rule->nodes.size(); ++i) acc += rule->weights[i] * g(x + s * rule->nodes[i]);
        return acc;
      },
      [=](double t, double x) {
        const double tau = horizon - t;
        if (tau <= 0.0) return sigma * gd(x);
        const double s = sigma * std::sqrt(tau);
        double acc = 0.0;
        for (std::size_t i = 0; i < rule->nodes.size(); ++i)
          acc += rule->weights[i] * g(x + s * rule->nodes[i]) * rule->nodes[i];
        return acc / std::sqrt(tau);
      },
      ReferenceKind::Quadrature};
  return p;
}

// PDE reference built on first use; shared by copies of the spec.
struct LazyPde {
  ProblemSpec problem;
  PdeGridSpec grid;
  std::once_flag once;
  std::unique_ptr<PdeReference> solution;

  const PdeReference& get() {
    std::call_once(once, [this] { solution = std::make_unique<PdeReference>(pde_reference_solver(problem, grid)); });
    return *solution;
  }
};

ProblemSpec sine_coeffs(const ParamMap& given) {
  const Params params("sine-coeffs", given,
                      {{"T", 1.0},
                       {"drift_amp", 0.1},
                       {"sigma_amp", 0.25},
                       {"r", 0.1},
                       {"a", 0.2},
                       {"c", 0.1},
                       {"pde_nt", 800.0},
                       {"pde_nx", 4801.0},
                       {"pde_half_width", 12.0}});
  ProblemSpec p = base("sine-coeffs", params);
  const double bamp = params["drift_amp"], samp = params["sigma_amp"];
  const double r = params["r"], a = params["a"], c = params["c"];
  require(std::abs(samp) < 1.0, "sine-coeffs needs |sigma_amp| < 1, otherwise sigma touches 0");
  p.drift = [bamp](double, double x) { return bamp * std::sin(x); };
  p.diffusion = [samp](double, double x) { return 1.0 + samp * std::cos(x); };
  p.drift_x = [bamp](double, double x) { return bamp * std::cos(x); };
  p.diffusion_x = [samp](double, double x) { return -samp * std::sin(x); };
  p.generator = [=](double, double x, double y, double z) { return -r * y + a * std::sin(x) + c * std::sin(z); };
  p.generator_x = [a](double, double x, double, double) { return a * std::cos(x); };
  p.generator_y = [r](double, double, double, double) { return -r; };
  p.generator_z = [c](double, double, double, double z) { return c * std::cos(z); };
  p.zero_generator = (r == 0.0 && a == 0.0 && c == 0.0);
  p.lipschitz_f = std::abs(r) + std::abs(a) + std::abs(c);
  p.kf = std::abs(a);
  p.terminal = [](double x) { return std::sin(x); };
  p.terminal_d1 = [](double x) { return std::cos(x); };
  p.terminal_d2 = [](double x) { return -std::sin(x); };
  p.alpha = 1.0;
  p.p0 = 0;
  p.delta = 2.0 * (1.0 - std::abs(samp)) / 3.0;
  p.holder_cg = 1.0;

  auto lazy = std::make_shared<LazyPde>();
  lazy->problem = p;
  lazy->grid.time_steps = static_cast<int>(params["pde_nt"]);
  lazy->grid.space_points = static_cast<int>(params["pde_nx"]);
  lazy->grid.x_min = -params["pde_half_width"];
  lazy->grid.x_max = params["pde_half_width"];
  lazy->grid.richardson = false;
  const auto sigma = p.diffusion;
  const double T = p.horizon;
  // The terminal slice is g itself; off-node interpolation would blur it.
  p.reference = ClosedFormReference{
      [lazy, T](double t, double x) { return t >= T ? std::sin(x) : lazy->get().u(t, x); },
      [lazy, sigma, T](double t, double x) {
        return sigma(t, x) * (t >= T ? std::cos(x) : lazy->get().ux(t, x));
      },
      ReferenceKind::PdeNumeric};
  return p;
}

using Factory = ProblemSpec (*)(const ParamMap&);

const std::vector<std::pair<std::string, Factory>>& registry() {
  static const std::vector<std::pair<std::string, Factory>> entries = {
      {"brownian-identity", &brownian_identity}, {"brownian-square", &brownian_square},
      {"exp-diffusion", &exp_diffusion},         {"discounted-bond", &discounted_bond},
      {"lipschitz-call", &lipschitz_call},       {"sine-coeffs", &sine_coeffs},
  };
  return entries;
}

}  // namespace

const std::vector<std::string>& builtin_problem_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, factory] : registry()) out.push_back(name);
    return out;
  }();
  return names;
}

ProblemSpec builtin_problem(const std::string& name, const ParamMap& params) {
  for (const auto& [key, factory] : registry())
    if (key == name) return factory(params);
  std::ostringstream os;
  os << "unknown problem '" << name << "'; valid names:";
  for (const auto& n : builtin_problem_names()) os << ' ' << n;
  throw Error(ErrorKind::Registry, os.str());
}

ProblemSpec problem_from_json_text(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("malformed problem config: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("problem") || !doc["problem"].is_string())
    throw Error(ErrorKind::Config, "problem config needs a string field \"problem\"");
  ParamMap params;
  if (doc.contains("params")) {
    if (!doc["params"].is_object()) throw Error(ErrorKind::Config, "\"params\" must be an object");
    for (const auto& [key, value] : doc["params"].items()) {
      if (!value.is_number()) throw Error(ErrorKind::Config, "parameter '" + key + "' must be numeric");
      params[key] = value.get<double>();
    }
  }
  return builtin_problem(doc["problem"].get<std::string>(), params);
}

ReferenceValue reference_solution(const ProblemSpec& p, double t, double x) {
  if (!p.reference) throw Error(ErrorKind::NoReference, "problem '" + p.name + "' carries no reference solution");
  if (!(t >= 0.0 && t <= p.horizon)) {
    std::ostringstream os;
    os << "time " << t << " outside [0, " << p.horizon << "]";
    throw Error(ErrorKind::Domain, os.str());
  }
  return {p.reference->y(t, x), p.reference->z(t, x)};
}

double default_probe_half_width(double x0) { return 6.0 * (1.0 + std::abs(x0)); }

namespace {

constexpr double kFdStep = 1e-5;
constexpr double kDerivativeTol = 1e-5;

bool derivative_matches(double analytic, double numeric) {
  return std::abs(analytic - numeric) <= kDerivativeTol * std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

}  // namespace

ValidationReport validate_problem(const ProblemSpec& p, int probes, std::uint64_t seed, double x0) {
  ValidationReport report;
  report.probes = std::max(probes, 1);
  const double half = default_probe_half_width(x0);
  report.box_half_width = half;
  auto fail = [&](std::string check, double t, double x, std::string detail) {
    report.pass = false;
    report.violations.push_back({std::move(check), t, x, std::move(detail)});
  };
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
  };

  if (!(p.horizon > 0.0)) fail("horizon", 0.0, 0.0, "T must be positive");
  if (!(p.alpha > 0.0 && p.alpha <= 1.0)) fail("alpha", 0.0, 0.0, "alpha must lie in (0,1]");
  if (p.p0 < 0) fail("p0", 0.0, 0.0, "p0 must be nonnegative");
  if (!(p.delta > 0.0)) fail("delta", 0.0, 0.0, "ellipticity bound must be positive");

  constexpr std::uint64_t kStream = 0x7a11da7e;
  for (int i = 0; i < report.probes; ++i) {
    const auto u = [&](int slot) { return rng::uniform(seed, kStream, 8ULL * i + slot); };
    const double t = u(0) * p.horizon;
    const double x = x0 + (2.0 * u(1) - 1.0) * half;
    const double y = (2.0 * u(2) - 1.0) * half;
    const double z = (2.0 * u(3) - 1.0) * half;

    const double b = p.drift(t, x);
    const double s = p.diffusion(t, x);
    if (!std::isfinite(b) || !std::isfinite(s)) fail("finite", t, x, "coefficient not finite");
    if (!(s >= p.delta)) fail("ellipticity", t, x, "sigma = " + num(s) + " < delta = " + num(p.delta));

    const double hs = kFdStep;
    if (p.drift_x) {
      const double fd = (p.drift(t, x + hs) - p.drift(t, x - hs)) / (2 * hs);
      if (!derivative_matches(p.drift_x(t, x), fd)) fail("derivative b_x", t, x, num(p.drift_x(t, x)) + " vs " + num(fd));
    }
    if (p.diffusion_x) {
      const double fd = (p.diffusion(t, x + hs) - p.diffusion(t, x - hs)) / (2 * hs);
      if (!derivative_matches(p.diffusion_x(t, x), fd))
        fail("derivative sigma_x", t, x, num(p.diffusion_x(t, x)) + " vs " + num(fd));
    }
    if (p.terminal_d1) {
      const double fd = (p.terminal(x + hs) - p.terminal(x - hs)) / (2 * hs);
      if (!derivative_matches(p.terminal_d1(x), fd)) fail("derivative g'", t, x, num(p.terminal_d1(x)) + " vs " + num(fd));
      if (p.terminal_d2) {
        const double fd2 = (p.terminal_d1(x + hs) - p.terminal_d1(x - hs)) / (2 * hs);
        if (!derivative_matches(p.terminal_d2(x), fd2))
          fail("derivative g''", t, x, num(p.terminal_d2(x)) + " vs " + num(fd2));
      }
    }
    const double fv = p.generator(t, x, y, z);
    if (!std::isfinite(fv)) fail("finite", t, x, "generator not finite");
    if (p.generator_x) {
      const double fd = (p.generator(t, x + hs, y, z) - p.generator(t, x - hs, y, z)) / (2 * hs);
      if (!derivative_matches(p.generator_x(t, x, y, z), fd)) fail("derivative f_x", t, x, num(fd));
    }
    if (p.generator_y) {
      const double fd = (p.generator(t, x, y + hs, z) - p.generator(t, x, y - hs, z)) / (2 * hs);
      if (!derivative_matches(p.generator_y(t, x, y, z), fd)) fail("derivative f_y", t, x, num(fd));
    }
    if (p.generator_z) {
      const double fd = (p.generator(t, x, y, z + hs) - p.generator(t, x, y, z - hs)) / (2 * hs);
      if (!derivative_matches(p.generator_z(t, x, y, z), fd)) fail("derivative f_z", t, x, num(fd));
    }
    if (p.lipschitz_f) {
      const double t2 = u(4) * p.horizon;
      const double x2 = x0 + (2.0 * u(5) - 1.0) * half;
      const double y2 = (2.0 * u(6) - 1.0) * half;
      const double z2 = (2.0 * u(7) - 1.0) * half;
      const double dist = std::sqrt(std::abs(t - t2)) + std::abs(x - x2) + std::abs(y - y2) + std::abs(z - z2);
      const double quotient = std::abs(fv - p.generator(t2, x2, y2, z2)) / dist;
      if (dist > 0.0 && quotient > *p.lipschitz_f * (1.0 + 1e-9) + 1e-12)
        fail("lipschitz f", t, x, "quotient " + num(quotient) + " > L_f = " + num(*p.lipschitz_f));
    }
    if (p.reference) {
      const double yT = p.reference->y(p.horizon, x);
      const double g = p.terminal(x);
      if (std::abs(yT - g) > 1e-10 * std::max(1.0, std::abs(g)))
        fail("reference terminal", p.horizon, x, num(yT) + " vs g = " + num(g));
      if (p.reference->kind == ReferenceKind::ExactAnalytic && t < p.horizon) {
        const double fd = (p.reference->y(t, x + hs) - p.reference->y(t, x - hs)) / (2 * hs);
        const double zr = p.reference->z(t, x);
        if (std::abs(zr - s * fd) > 1e-6 * std::max(1.0, std::abs(zr)))
          fail("reference z", t, x, num(zr) + " vs sigma*y_x = " + num(s * fd));
      }
    }
  }
  return report;
}

}  // namespace rwbsde
