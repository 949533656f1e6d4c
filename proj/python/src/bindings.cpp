// Python bindings: finite-MDP oracles, Mountain Car and tile coding, and the
// experiment runner. Vectors and matrices cross the boundary as numpy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>

#include "gqlab/environments.hpp"
#include "gqlab/errors.hpp"
#include "gqlab/evaluation.hpp"
#include "gqlab/experiment.hpp"
#include "gqlab/features.hpp"
#include "gqlab/learners.hpp"
#include "gqlab/mdp.hpp"

namespace py = pybind11;
using namespace gqlab;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const DenseVector& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.data().begin(), v.data().end(), out.mutable_data());
  return out;
}

py::array_t<double> to_numpy(const DenseMatrix& m) {
  py::array_t<double> out({static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.cols())});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

DenseVector from_numpy(const Array& a) {
  if (a.ndim() != 1) throw DimensionMismatch("expected a 1-D array");
  return DenseVector(std::vector<double>(a.data(), a.data() + a.size()));
}

MdpDefinition resolve_mdp(const std::string& spec, std::optional<double> gamma) {
  if (spec == "counterexample" || spec == "baird" || spec == "boyan") {
    const auto env = make_finite_environment(spec, gamma.value_or(0.99));
    return {spec, std::make_shared<const FiniteMdp>(env->mdp()), env->target(), env->behavior(),
            env->features()};
  }
  MdpDefinition def = load_mdp_file(spec);
  if (gamma) def.mdp = std::make_shared<const FiniteMdp>(def.mdp->with_gamma(*gamma));
  return def;
}

ModelOracle make_oracle(const std::string& mdp, double sigma, double lambda,
                        std::optional<double> gamma, bool pinv) {
  const MdpDefinition def = resolve_mdp(mdp, gamma);
  const TabularPolicy behavior =
      def.behavior.value_or(TabularPolicy::uniform(def.mdp->num_states(), def.mdp->num_actions()));
  return ModelOracle(*def.mdp, def.target.value_or(behavior), behavior, def.features, sigma, lambda,
                     pinv ? MetricInverse::Pseudo : MetricInverse::Strict);
}

py::dict run_to_dict(const RunResult& run) {
  const std::size_t n = run.records.size();
  py::array_t<double> step(n), episode(n), sigma(n), mspbe(n), ret(n), length(n), norm(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = run.records[i];
    step.mutable_at(i) = static_cast<double>(r.step);
    episode.mutable_at(i) = static_cast<double>(r.episode);
    sigma.mutable_at(i) = r.sigma;
    mspbe.mutable_at(i) = r.mspbe;
    ret.mutable_at(i) = r.episode_return;
    length.mutable_at(i) = static_cast<double>(r.episode_length);
    norm.mutable_at(i) = r.theta_norm;
  }
  py::dict d;
  d["run_id"] = run.spec.run_id;
  d["config_key"] = run.spec.config_key();
  d["sigma_schedule"] = run.spec.sigma.label();
  d["seed"] = run.spec.seed;
  d["diverged"] = run.diverged;
  d["steps_taken"] = run.steps_taken;
  d["episodes_completed"] = run.episodes_completed;
  d["final_theta"] = to_numpy(run.final_theta);
  d["final_omega"] = to_numpy(run.final_omega);
  d["step"] = step;
  d["episode"] = episode;
  d["sigma"] = sigma;
  d["mspbe"] = mspbe;
  d["episode_return"] = ret;
  d["episode_length"] = length;
  d["theta_norm"] = norm;
  return d;
}

}  // namespace

PYBIND11_MODULE(_gqlab, m) {
  m.doc() = "GQ(sigma, lambda) learning laboratory";

  auto& error = py::register_exception<Error>(m, "GqlabError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<SingularMatrix>(m, "SingularMatrix", error.ptr());
  py::register_exception<IoError>(m, "IoError", error.ptr());

  py::class_<ModelOracle>(m, "Oracle")
      .def(py::init(&make_oracle), py::arg("mdp"), py::arg("sigma"), py::arg("lam"),
           py::arg("gamma") = py::none(), py::arg("pinv") = false,
           "Closed-form quantities for a built-in environment name or an MDP file")
      .def_property_readonly("dimension", &ModelOracle::dimension)
      .def_property_readonly("A", [](const ModelOracle& o) { return to_numpy(o.a_matrix()); })
      .def_property_readonly("b", [](const ModelOracle& o) { return to_numpy(o.b_vector()); })
      .def_property_readonly("M", [](const ModelOracle& o) { return to_numpy(o.m_matrix()); })
      .def_property_readonly("phi", [](const ModelOracle& o) { return to_numpy(o.phi()); })
      .def_property_readonly("xi", [](const ModelOracle& o) { return to_numpy(o.stationary()); })
      .def("td_fixed_point", [](const ModelOracle& o) { return to_numpy(o.td_fixed_point()); })
      .def("omega_of", [](const ModelOracle& o, const Array& t) { return to_numpy(o.omega_of(from_numpy(t))); })
      .def("mspbe", [](const ModelOracle& o, const Array& t) { return o.mspbe(from_numpy(t)); })
      .def("mspbe_gradient",
           [](const ModelOracle& o, const Array& t) { return to_numpy(o.mspbe_gradient(from_numpy(t))); })
      .def("expected_gq_direction", [](const ModelOracle& o, const Array& t, const Array& w) {
        return to_numpy(expected_gq_direction(o, from_numpy(t), from_numpy(w)));
      });

  m.def(
      "state_values",
      [](const std::string& mdp, std::optional<double> gamma) {
        const MdpDefinition def = resolve_mdp(mdp, gamma);
        const TabularPolicy behavior =
            def.behavior.value_or(TabularPolicy::uniform(def.mdp->num_states(), def.mdp->num_actions()));
        return to_numpy(state_values(*def.mdp, def.target.value_or(behavior)));
      },
      py::arg("mdp"), py::arg("gamma") = py::none(), "Exact target-policy state values");

  m.def(
      "mountain_car_step",
      [](double position, double velocity, int action) {
        if (action < 0) throw InvalidArgument("action must be 0, 1 or 2");
        const MountainCarState next = MountainCar::advance({position, velocity}, static_cast<Action>(action));
        return py::make_tuple(next.position, next.velocity);
      },
      py::arg("position"), py::arg("velocity"), py::arg("action"));

  py::class_<TileCoder>(m, "TileCoder")
      .def(py::init<std::size_t, std::size_t, std::size_t, std::uint64_t>(), py::arg("n_tilings") = 8,
           py::arg("tiles_per_dim") = 8, py::arg("p") = 256, py::arg("seed") = 0)
      .def_property_readonly("dimension", &TileCoder::dimension)
      .def("active_indices",
           [](const TileCoder& t, double position, double velocity, int action) {
             if (action < 0) throw InvalidArgument("action must be 0, 1 or 2");
             return t.active_indices({position, velocity}, static_cast<Action>(action));
           })
      .def("features", [](const TileCoder& t, double position, double velocity, int action) {
        if (action < 0) throw InvalidArgument("action must be 0, 1 or 2");
        return to_numpy(t.evaluate(State{MountainCarState{position, velocity}}, static_cast<Action>(action)));
      });

  m.def(
      "run_experiment",
      [](const std::string& config_json, std::optional<std::filesystem::path> output) {
        ExperimentConfig config = parse_config(config_json);
        ExperimentResult result;
        {
          py::gil_scoped_release release;
          result = run_experiment(config);
        }
        if (output) {
          result.config.output = *output;
          write_experiment(result);
        }
        py::list runs;
        for (const auto& run : result.runs) runs.append(run_to_dict(run));
        return runs;
      },
      py::arg("config_json"), py::arg("output") = py::none(),
      "Runs a JSON experiment config; writes the CSV layout when output is given");

  m.def("summarize", &summarize_directory, py::arg("csv_dir"), py::arg("window") = 20,
        "Summary text recomputed from a directory of run CSVs");

  m.def(
      "classify_cases",
      [](const std::map<std::string, double>& scores, bool higher_is_better) {
        const CaseTable t = classify_cases(scores, higher_is_better);
        std::map<std::string, std::string> labels;
        for (const auto& [k, v] : t.labels) labels[k] = to_string(v);
        py::dict d;
        d["labels"] = labels;
        d["percent_i"] = t.percent_i;
        d["percent_ii"] = t.percent_ii;
        d["percent_iii"] = t.percent_iii;
        return d;
      },
      py::arg("scores"), py::arg("higher_is_better") = true);
}
