#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "rwbsde/continuum.hpp"
#include "rwbsde/errors.hpp"
#include "rwbsde/harness.hpp"
#include "rwbsde/problems.hpp"
#include "rwbsde/skorohod.hpp"
#include "rwbsde/solver.hpp"
#include "rwbsde/stats.hpp"

namespace py = pybind11;
using namespace rwbsde;

namespace {

// Reports cross the boundary as JSON text; the package decodes them.
ExperimentConfig config_of(const std::string& text) {
  try {
    return config_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
  }
}

DiscreteSolution solve(const std::string& name, const ParamMap& params, int n, double x0, const std::string& backend) {
  const ProblemSpec p = builtin_problem(name, params);
  const WalkGrid grid(n, p.horizon);
  if (backend == "tree") return solve_tree(p, grid, x0);
  if (backend == "grid") return solve_grid(p, grid, default_xgrid(p, x0));
  throw Error(ErrorKind::Config, "backend must be tree or grid");
}

}  // namespace

PYBIND11_MODULE(_rwbsde, m) {
  m.doc() = "Random-walk FBSDE solver";

  static py::exception<Error> error(m, "Error");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object kind = py::str(to_string(e.kind()));
      PyErr_SetObject(error.ptr(), py::make_tuple(py::str(e.what()), kind).ptr());
    }
  });

  m.def("problem_names", &builtin_problem_names);

  m.def(
      "reference",
      [](const std::string& name, const ParamMap& params, double t, double x) {
        const ReferenceValue r = reference_solution(builtin_problem(name, params), t, x);
        return py::make_tuple(r.y, r.z);
      },
      py::arg("name"), py::arg("params") = ParamMap{}, py::arg("t"), py::arg("x"));

  m.def(
      "validate",
      [](const std::string& name, const ParamMap& params, int probes, std::uint64_t seed, double x0) {
        const ValidationReport r = validate_problem(builtin_problem(name, params), probes, seed, x0);
        py::list violations;
        for (const auto& v : r.violations) violations.append(py::make_tuple(v.check, v.t, v.x, v.detail));
        py::dict out;
        out["pass"] = r.pass;
        out["probes"] = r.probes;
        out["violations"] = violations;
        return out;
      },
      py::arg("name"), py::arg("params") = ParamMap{}, py::arg("probes") = 200, py::arg("seed") = 1,
      py::arg("x0") = 0.0);

  m.def(
      "solve_y_z",
      [](const std::string& name, const ParamMap& params, int n, double x0, const std::string& backend) {
        const DiscreteSolution sol = solve(name, params, n, x0, backend);
        return py::make_tuple(y_at(sol, 0, x0), z_at(sol, 0, x0));
      },
      py::arg("name"), py::arg("params") = ParamMap{}, py::arg("n"), py::arg("x0") = 0.0,
      py::arg("backend") = "tree");

  m.def(
      "solve_levels",
      [](const std::string& name, const ParamMap& params, int n, double x0) {
        const DiscreteSolution sol = solve(name, params, n, x0, "tree");
        py::list levels;
        for (int k = 0; k <= n; ++k) {
          std::vector<double> xs, us;
          for (std::size_t i = 0; i < sol.node_count(k); ++i) {
            xs.push_back(sol.node_state(k, i));
            us.push_back(sol.node_value(k, i));
          }
          levels.append(py::make_tuple(xs, us));
        }
        return levels;
      },
      py::arg("name"), py::arg("params") = ParamMap{}, py::arg("n"), py::arg("x0") = 0.0);

  m.def(
      "brute_force_y0",
      [](const std::string& name, const ParamMap& params, int n, double x0) {
        const ProblemSpec p = builtin_problem(name, params);
        const BruteForceTables t = brute_force_solution(p, WalkGrid(n, p.horizon), x0);
        return py::make_tuple(t.y[0][0], t.z[0][0]);
      },
      py::arg("name"), py::arg("params") = ParamMap{}, py::arg("n"), py::arg("x0") = 0.0);

  m.def(
      "z_weight_estimate",
      [](const std::string& name, const ParamMap& params, double t, double x, std::size_t samples,
         std::uint64_t seed, int steps, const std::string& mode) {
        ZEstimatorOptions o;
        o.samples = samples;
        o.seed = seed;
        o.steps = steps;
        if (mode == "gradient") o.mode = ZRepresentation::Gradient;
        else if (mode != "weight") throw Error(ErrorKind::Config, "mode must be weight or gradient");
        const ZEstimate e = z_weight_estimator(builtin_problem(name, params), t, x, o);
        return py::make_tuple(e.value, e.std_error);
      },
      py::arg("name"), py::arg("params") = ParamMap{}, py::arg("t"), py::arg("x"), py::arg("samples") = 10000,
      py::arg("seed") = 1, py::arg("steps") = 256, py::arg("mode") = "weight");

  m.def(
      "fit_slope",
      [](const std::vector<std::tuple<double, double, double>>& rows) {
        std::vector<SlopeRow> r;
        for (const auto& [h, e, s] : rows) r.push_back({h, e, s});
        const SlopeFit f = fit_slope(r);
        py::dict out;
        out["slope"] = f.slope;
        out["intercept"] = f.intercept;
        out["ci"] = py::make_tuple(f.ci_low, f.ci_high);
        out["excluded"] = f.excluded;
        return out;
      },
      py::arg("rows"));

  m.def(
      "embedding_stats_csv",
      [](const std::vector<int>& steps, std::size_t samples, int fine_factor, std::uint64_t seed) {
        EmbeddingStatsConfig c;
        c.steps = steps;
        c.samples = samples;
        c.fine_factor = fine_factor;
        c.seed = seed;
        std::ostringstream os;
        write_embedding_csv(os, embedding_error_stats(c));
        return os.str();
      },
      py::arg("steps"), py::arg("samples") = 1000, py::arg("fine_factor") = 64, py::arg("seed") = 1);

  m.def(
      "run_convergence_json",
      [](const std::string& config) {
        py::gil_scoped_release release;
        return report_to_json(run_convergence(config_of(config))).dump();
      },
      py::arg("config"));

  m.def(
      "run_zhat_json",
      [](const std::string& config) {
        py::gil_scoped_release release;
        return zhat_to_json(run_zn_vs_zhat(config_of(config))).dump();
      },
      py::arg("config"));
}
