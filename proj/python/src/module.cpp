// Python bindings for the core operations.

#include "vigl/bandit.hpp"
#include "vigl/errors.hpp"
#include "vigl/experiment.hpp"
#include "vigl/fdiv.hpp"
#include "vigl/oracle.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <numbers>
#include <sstream>

namespace py = pybind11;

namespace {

vigl::FDivergence divergence(const std::string& name, const std::string& form) {
  return vigl::FDivergence(vigl::parse_divergence(name), vigl::parse_conjugate_form(form));
}

py::dict dataset_dict(const vigl::Dataset& d) {
  const vigl::EvaluationView ev = d.evaluation();
  py::dict out;
  out["contexts"] = d.contexts();
  out["actions"] = std::vector<int>(d.actions().begin(), d.actions().end());
  out["feedback"] = d.feedback();
  out["rewards"] = std::vector<int>(ev.rewards.begin(), ev.rewards.end());
  out["labels"] = std::vector<int>(ev.labels.begin(), ev.labels.end());
  out["feedback_classes"] = std::vector<int>(ev.feedback_classes.begin(), ev.feedback_classes.end());
  return out;
}

py::dict trial_dict(const vigl::TrialResult& t) {
  py::dict out;
  out["trial"] = t.trial;
  out["seed"] = t.seed;
  out["ok"] = t.ok;
  out["accuracy"] = t.accuracy;
  out["std_err"] = t.std_err;
  out["decoded_return"] = t.decoded_return;
  out["behavior_decoded_return"] = t.behavior_decoded_return;
  out["flipped"] = t.flipped;
  out["seconds"] = t.seconds;
  return out;
}

}  // namespace

PYBIND11_MODULE(_vigl, m) {
  m.doc() = "Variational information-based interaction-grounded learning";

  py::register_exception<vigl::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<vigl::ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<vigl::ContractError>(m, "ContractError", PyExc_RuntimeError);
  py::register_exception<vigl::FormatError>(m, "FormatError", PyExc_RuntimeError);

  m.def(
      "conjugate", [](const std::string& f, double t, const std::string& form) { return divergence(f, form).conjugate(t); },
      py::arg("f"), py::arg("t"), py::arg("dv_form") = "nwj", "Convex conjugate f*(t) of 'kl' or 'chi2'.");
  m.def(
      "variational_bound",
      [](const std::string& f, const std::vector<double>& on_p, const std::vector<double>& on_q,
         const std::string& form) { return vigl::variational_div_lower_bound(divergence(f, form), on_p, on_q); },
      py::arg("f"), py::arg("on_p"), py::arg("on_q"), py::arg("dv_form") = "nwj",
      "mean(on_p) - mean(f*(on_q)): lower bound on D_f(P||Q) given critic values on samples of P and Q.");
  m.def(
      "exact_mi", [](const vigl::Matrix& joint, const std::string& f) {
        return vigl::oracle::exact_f_mi(joint, divergence(f, "nwj"));
      },
      py::arg("joint"), py::arg("f") = "kl", "Exact I_f(Z1;Z2) of a z1 x z2 probability table.");
  m.def(
      "exact_cmi", [](const std::vector<vigl::Matrix>& joint, const std::string& f) {
        return vigl::oracle::exact_f_cmi(joint, divergence(f, "nwj"));
      },
      py::arg("joint"), py::arg("f") = "kl", "Exact I_f(Z1;Z2|Z3) from one z1 x z2 table per z3 value.");

  m.def(
      "collect_synthetic",
      [](int contexts, int actions, int feedback_dim, const std::string& noise, double level, std::size_t samples,
         std::uint64_t seed) {
        const vigl::FeedbackSpec spec{vigl::parse_noise_type(noise), level};
        spec.validate();
        const auto env = vigl::make_synthetic_env(contexts, actions, feedback_dim, spec);
        return dataset_dict(vigl::collect(env, vigl::UniformPolicy(actions), samples, seed));
      },
      py::arg("contexts") = 10, py::arg("actions") = 10, py::arg("feedback_dim") = 14, py::arg("noise") = "none",
      py::arg("noise_level") = 0.0, py::arg("samples") = 1000, py::arg("seed") = 0,
      "Logged uniform-policy interactions from the synthetic number-guessing env.");

  m.def(
      "oracle_check",
      [](int contexts, int actions, int feedback_dim, const std::string& noise, double level, double beta) {
        namespace o = vigl::oracle;
        const auto env = vigl::make_synthetic_env(contexts, actions, feedback_dim,
                                                  vigl::FeedbackSpec{vigl::parse_noise_type(noise), level});
        const o::DiscreteJoint joint = env.enumerate_joint();
        o::GridOptions grid;
        grid.clamp = 0.0;
        const o::GridResult best = o::grid_minimize_objective(joint, beta, o::DecoderInput::kFeedback, grid);
        const double i_yr = o::true_feedback_reward_mi(joint);
        py::dict out;
        out["mi_y_r"] = i_yr;
        out["minimum"] = best.value;
        out["cmi_at_minimum"] = best.cmi;
        out["bound"] = beta * (std::numbers::ln2 - i_yr);
        out["psi"] = best.best.psi;
        out["evaluated"] = best.evaluated;
        return out;
      },
      py::arg("contexts") = 2, py::arg("actions") = 2, py::arg("feedback_dim") = 4, py::arg("noise") = "none",
      py::arg("noise_level") = 0.0, py::arg("beta") = 1.0,
      "Exhaustive decoder-grid minimization of the exact objective on the synthetic instance.");

  py::class_<vigl::ExperimentConfig>(m, "ExperimentConfig")
      .def(py::init([]() { return vigl::ExperimentConfig::synthetic_defaults(); }))
      .def_static("synthetic_defaults", &vigl::ExperimentConfig::synthetic_defaults)
      .def_static("mnist_defaults", &vigl::ExperimentConfig::mnist_defaults)
      .def_static("keys", &vigl::config_keys)
      .def("set", &vigl::ExperimentConfig::set, py::arg("key"), py::arg("value"))
      .def("validate", &vigl::ExperimentConfig::validate)
      .def("to_text",
           [](const vigl::ExperimentConfig& c) {
             std::ostringstream s;
             c.save(s);
             return s.str();
           })
      .def("run_trial",
           [](const vigl::ExperimentConfig& c, int trial) {
             c.validate();
             py::gil_scoped_release release;
             const auto env = vigl::make_environment(c);
             vigl::TrialResult t = vigl::run_trial(c, env, trial);
             py::gil_scoped_acquire acquire;
             return trial_dict(t);
           },
           py::arg("trial") = 0, "One collect/train/select/policy/evaluate trial, in memory.");

  m.def("trial_seed", &vigl::trial_seed, py::arg("master"), py::arg("trial"));
}
