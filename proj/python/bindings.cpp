#include <cstdint>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "flowpp/config.hpp"
#include "flowpp/errors.hpp"
#include "flowpp/estimators.hpp"
#include "flowpp/flow.hpp"
#include "flowpp/gmm.hpp"
#include "flowpp/harness.hpp"
#include "flowpp/random.hpp"
#include "flowpp/smc.hpp"

namespace py = pybind11;
using namespace flowpp;

namespace {

void check_dim(const Eigen::VectorXd& v, int dim, const char* what) {
  if (v.size() != dim) {
    throw py::value_error(std::string(what) + " has length " + std::to_string(v.size()) + ", expected " +
                          std::to_string(dim));
  }
}

py::dict estimate_dict(const EntropyEstimate& e) {
  py::dict d;
  d["kind"] = e.estimator.label();
  d["delta_s"] = e.delta_s;
  d["ode_passes"] = e.ode_passes;  // on top of generation
  d["total_passes"] = 1 + e.ode_passes;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Flow-perturbation entropy estimators and annealed SMC on Gaussian mixtures";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericalFailure>(m, "NumericalFailure", PyExc_ArithmeticError);

  py::class_<RunConfig>(m, "Config")
      .def(py::init<>())
      .def_static("parse", &parse_config, py::arg("text"), py::arg("origin") = "<python>")
      .def_static("load", [](const std::string& path) { return load_config(path); }, py::arg("path"))
      .def("set", &set_config_value, py::arg("key"), py::arg("value"))
      .def("to_dict", &to_map)
      .def("to_text", &to_text)
      .def("check", &RunConfig::check);

  py::class_<GmmSpec>(m, "Gmm")
      .def_property_readonly("dim", &GmmSpec::dim)
      .def_property_readonly("weights", &GmmSpec::weights)
      .def("means", [](const GmmSpec& g) {
        std::vector<Eigen::VectorXd> out;
        for (const auto& c : g.components()) out.push_back(c.mean);
        return out;
      })
      .def("log_density", [](const GmmSpec& g, const Eigen::VectorXd& x) {
        check_dim(x, g.dim(), "x");
        return log_density(g, x);
      })
      .def("energy", [](const GmmSpec& g, const Eigen::VectorXd& x) {
        check_dim(x, g.dim(), "x");
        return energy(g, x);
      })
      .def("score", [](const GmmSpec& g, const Eigen::VectorXd& x) {
        check_dim(x, g.dim(), "x");
        return score(g, x);
      })
      .def("responsibilities", [](const GmmSpec& g, const Eigen::VectorXd& x) {
        check_dim(x, g.dim(), "x");
        return responsibilities(g, x);
      })
      .def("modal_assignment", [](const GmmSpec& g, const Eigen::VectorXd& x) {
        check_dim(x, g.dim(), "x");
        return modal_assignment(g, x);
      })
      .def(
          "sample",
          [](const GmmSpec& g, int n, std::uint64_t seed) {
            if (n < 0) throw py::value_error("n must be non-negative");
            Rng rng(seed);
            Eigen::MatrixXd out(n, g.dim());
            for (int i = 0; i < n; ++i) out.row(i) = sample_direct(g, rng).transpose();
            return out;
          },
          py::arg("n"), py::arg("seed") = 0);

  m.def("benchmark_gmm", &build_benchmark_gmm, py::arg("dim"), py::arg("seed") = 0,
        py::arg("diag_noise_std") = 0.5);
  m.def("target", &make_target, py::arg("config"));

  py::class_<ProbabilityFlow>(m, "Flow")
      .def_property_readonly("dim", &ProbabilityFlow::dim)
      .def_property_readonly("steps", &ProbabilityFlow::steps)
      .def("push_forward", [](const ProbabilityFlow& f, const Eigen::VectorXd& z) {
        check_dim(z, f.dim(), "z");
        return Eigen::VectorXd(f.push_forward(z).sample());
      })
      .def("pull_back", [](const ProbabilityFlow& f, const Eigen::VectorXd& x) {
        check_dim(x, f.dim(), "x");
        return Eigen::VectorXd(f.pull_back(x).latent());
      })
      .def(
          "trajectory",
          [](const ProbabilityFlow& f, const Eigen::VectorXd& z) {
            check_dim(z, f.dim(), "z");
            return Eigen::MatrixXd(f.push_forward(z).states.transpose());
          },
          "States from z to x, one row per node.");

  m.def(
      "flow",
      [](const RunConfig& cfg) { return make_flow(cfg, make_flow_model(cfg, make_target(cfg))); },
      py::arg("config"), "Exact-score flow for the configured target.");

  m.def(
      "sample_unit_sphere",
      [](int dim, std::uint64_t seed) {
        if (dim < 1) throw py::value_error("dim must be positive");
        Rng rng(seed);
        return sample_unit_sphere(dim, rng);
      },
      py::arg("dim"), py::arg("seed") = 0);

  m.def(
      "estimate",
      [](const ProbabilityFlow& f, const Eigen::VectorXd& z, const std::string& tag, std::uint64_t seed) {
        check_dim(z, f.dim(), "z");
        return estimate_dict(estimate_entropy(f, f.push_forward(z), parse_estimator(tag), seed));
      },
      py::arg("flow"), py::arg("z"), py::arg("estimator") = "fppp", py::arg("seed") = 0,
      "One log-volume change estimate along the trajectory from z.");

  m.def(
      "exact_inverse_log_det",
      [](const ProbabilityFlow& f, const Eigen::VectorXd& z) {
        check_dim(z, f.dim(), "z");
        return exact_inverse_step_log_det(f, f.push_forward(z));
      },
      py::arg("flow"), py::arg("z"), "Sum of per-step inverse-map log|det|; FP++ is unbiased for exp(-this).");

  m.def(
      "work",
      [](const ProbabilityFlow& f, const GmmSpec& target, const Eigen::VectorXd& z, const std::string& tag,
         std::uint64_t seed) {
        check_dim(z, f.dim(), "z");
        const auto w = generalized_work(f, target, z, parse_estimator(tag), seed);
        py::dict d;
        d["u_x"] = w.u_x;
        d["u_z"] = w.u_z;
        d["delta_s"] = w.delta_s;
        d["w"] = w.w;
        return d;
      },
      py::arg("flow"), py::arg("target"), py::arg("z"), py::arg("estimator") = "fppp", py::arg("seed") = 0);

  m.def(
      "bench_run",
      [](const RunConfig& cfg, const std::string& tag, std::uint64_t seed) {
        const GmmSpec target = make_target(cfg);
        const ProbabilityFlow f = make_flow(cfg, make_flow_model(cfg, target));
        Rng rng(derive_seed(seed, {0x7e7}));
        std::vector<double> ref;
        for (int i = 0; i < cfg.bench.reference_samples; ++i) ref.push_back(energy(target, sample_direct(target, rng)));
        BenchRun r;
        {
          py::gil_scoped_release release;
          r = bench_single(cfg, target, f, tag, seed, ref, {});
        }
        py::dict d;
        d["estimator"] = r.estimator;
        d["seed"] = r.seed;
        d["status"] = r.status;
        d["modal_weight"] = r.modal_weight;
        d["distinct_ancestors"] = r.distinct_ancestors;
        d["ode_passes"] = r.ode_passes;
        d["wall_s"] = r.wall_s;
        d["tv_energy"] = r.tv_energy;
        return d;
      },
      py::arg("config"), py::arg("estimator") = "fppp", py::arg("seed") = 0,
      "One SMC run; the same record as a summary.csv row.");
}
