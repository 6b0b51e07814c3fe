#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <stdexcept>
#include <vector>

#include "profuse/experiment.hpp"
#include "profuse/runner.hpp"
#include "profuse/survival.hpp"
#include "profuse/synthdata.hpp"
#include "profuse/types.hpp"

namespace py = pybind11;

namespace {

std::vector<profuse::SurvivalLabel> make_labels(const std::vector<double>& times,
                                                const std::vector<bool>& events) {
  if (times.size() != events.size())
    throw std::invalid_argument("times and events must have equal length");
  std::vector<profuse::SurvivalLabel> labels(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) labels[i] = {times[i], events[i]};
  return labels;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Survival-regression core: Cox partial likelihood, concordance metrics, "
            "model fitting, and the command-line pipeline entry point.";

  m.def(
      "cox_loss",
      [](const profuse::Vector& log_risks, const std::vector<double>& times,
         const std::vector<bool>& events) {
        return profuse::survival::cox_loss(log_risks, make_labels(times, events));
      },
      py::arg("log_risks"), py::arg("times"), py::arg("events"),
      "Negative log partial likelihood with Breslow tie handling.");

  m.def(
      "cox_loss_gradient",
      [](const profuse::Vector& log_risks, const std::vector<double>& times,
         const std::vector<bool>& events) {
        return profuse::survival::cox_loss_gradient(log_risks, make_labels(times, events));
      },
      py::arg("log_risks"), py::arg("times"), py::arg("events"));

  m.def(
      "concordance_index",
      [](const profuse::Vector& log_risks, const std::vector<double>& times,
         const std::vector<bool>& events) {
        return profuse::survival::concordance_index(log_risks, make_labels(times, events));
      },
      py::arg("log_risks"), py::arg("times"), py::arg("events"),
      "Harrell's C-index over censored survival labels.");

  m.def(
      "roc_auc",
      [](const profuse::Vector& scores, const std::vector<bool>& labels) {
        std::vector<char> binary(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) binary[i] = labels[i] ? 1 : 0;
        return profuse::survival::roc_auc(scores, binary);
      },
      py::arg("scores"), py::arg("labels"));

  m.def(
      "fit_cph",
      [](const profuse::Matrix& features, const std::vector<double>& times,
         const std::vector<bool>& events) {
        auto fit = profuse::survival::fit_cph(features, make_labels(times, events));
        return py::make_tuple(fit.model.beta, fit.converged, fit.iterations);
      },
      py::arg("features"), py::arg("times"), py::arg("events"),
      "Newton-Raphson Cox fit; returns (beta, converged, iterations).");

  m.def("ttr_from_log_risk", &profuse::survival::ttr_from_log_risk, py::arg("log_risk"),
        "exp(-log_risk): rank-preserving time-to-recurrence proxy.");

  m.def(
      "early_stop_epoch",
      [](const std::vector<double>& curve, int min_epochs) -> std::optional<int> {
        return profuse::experiment::early_stop_epoch(curve, min_epochs);
      },
      py::arg("curve"), py::arg("min_epochs") = 0,
      "First epoch >= min_epochs where the loss curve's second difference changes sign.");

  m.def(
      "summarize",
      [](const std::vector<double>& cindices) {
        auto s = profuse::experiment::summarize(cindices);
        return py::make_tuple(s.mean, s.sigma);
      },
      py::arg("cindices"), "Per-fold metric summary: (mean, population sigma).");

  m.def(
      "oracle_cindex",
      [](const profuse::Vector& log_risks, const std::vector<double>& times,
         const std::vector<bool>& events) {
        return profuse::synthdata::oracle_cindex(log_risks, make_labels(times, events));
      },
      py::arg("log_risks"), py::arg("times"), py::arg("events"),
      "Brute-force O(n^2) concordance reference.");

  m.def(
      "run_cli", [](const std::vector<std::string>& args) { return profuse::runner::run_cli(args); },
      py::arg("args"),
      "Invoke the pipeline CLI (synth/train/cv/predict/evaluate); returns the exit code.");
}
