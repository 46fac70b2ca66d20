// Python bindings: scoring and CTC utilities plus the experiment runners.
// Structured results cross the boundary as JSON text; the package wrapper
// turns them into dicts.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "uocl/experiment.hpp"

namespace py = pybind11;
using namespace uocl;

namespace {

ad::Array to_array(py::array_t<double, py::array::c_style | py::array::forcecast> a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array of log-probabilities (frames x classes)");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return ad::Array(ad::Shape{r, c}, std::vector<double>(a.data(), a.data() + r * c));
}

experiment::ExperimentConfig make_config(const std::string& text, const std::vector<std::string>& overrides) {
  Config c = Config::parse(text, "<python>");
  for (const auto& o : overrides) c.apply(o);
  return experiment::ExperimentConfig::from(c);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "uocl native core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<experiment::DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);
  py::register_exception<experiment::MismatchError>(m, "MismatchError", PyExc_ValueError);

  m.def(
      "edit_distance",
      [](const Tokens& ref, const Tokens& hyp) {
        const auto c = metrics::edit_distance(ref, hyp);
        return py::make_tuple(c.substitutions, c.deletions, c.insertions);
      },
      py::arg("ref"), py::arg("hyp"), "(substitutions, deletions, insertions) of a minimal alignment");
  m.def(
      "wer", [](const std::vector<Tokens>& refs, const std::vector<Tokens>& hyps) { return metrics::wer(refs, hyps); },
      py::arg("refs"), py::arg("hyps"), "token error rate in percent");
  m.def(
      "wilcoxon",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        const auto r = metrics::wilcoxon_signed_rank(a, b);
        py::dict d;
        d["statistic"] = r.statistic;
        d["p_value"] = r.p_value;
        d["n"] = r.n;
        d["exact"] = r.exact;
        d["stars"] = metrics::to_string(r.stars);
        return d;
      },
      py::arg("a"), py::arg("b"), "paired two-sided Wilcoxon signed-rank test");

  m.def(
      "ctc_loss", [](py::array_t<double> lp, const Tokens& label) { return ctc::ctc_loss(to_array(lp), label); },
      py::arg("log_probs"), py::arg("label"), "negative log-likelihood; blank is class 0");
  m.def(
      "greedy_decode", [](py::array_t<double> lp) { return ctc::greedy_ctc_decode(to_array(lp)); },
      py::arg("log_probs"));
  m.def("aos_eta", &ocl::aos_eta, py::arg("batch_size"), py::arg("seen"), py::arg("tau"));

  m.def(
      "effective_config",
      [](const std::string& text, const std::vector<std::string>& overrides) { return make_config(text, overrides).echo; },
      py::arg("text"), py::arg("overrides") = std::vector<std::string>{},
      "every key with its effective value, as written into run outputs");
  m.def(
      "pretrain",
      [](const std::string& text, const std::vector<std::string>& overrides) {
        const auto cfg = make_config(text, overrides);
        experiment::PretrainResult r;
        {
          py::gil_scoped_release release;
          r = experiment::pretrain(cfg, experiment::build_world(cfg));
        }
        const auto bytes = r.theta0.serialize();
        py::dict d;
        d["checkpoint"] = py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
        d["dev_wer"] = r.dev_wer;
        d["train_loss"] = r.train_loss;
        d["best_epoch"] = r.best_epoch;
        d["initial_dev_wer"] = r.initial_dev_wer;
        return d;
      },
      py::arg("text"), py::arg("overrides") = std::vector<std::string>{});
  m.def(
      "run_stream",
      [](const std::string& text, const std::vector<std::string>& overrides, const py::bytes& checkpoint) {
        const auto cfg = make_config(text, overrides);
        const std::string raw = checkpoint;
        const auto theta0 = Checkpoint::deserialize(std::span(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()));
        std::string out;
        {
          py::gil_scoped_release release;
          out = experiment::run_stream(cfg, experiment::build_world(cfg), theta0).to_json().dump();
        }
        return out;
      },
      py::arg("text"), py::arg("overrides"), py::arg("checkpoint"), "run artifact as JSON text");
}
