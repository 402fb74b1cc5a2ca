#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "entlab/analysis.hpp"
#include "entlab/model.hpp"
#include "entlab/scaling.hpp"
#include "entlab/simplex.hpp"
#include "entlab/tasks.hpp"

namespace py = pybind11;
using namespace entlab;

namespace {

py::dict dist_to_dict(const ProbDist& p) {
  py::dict d;
  d["probs"] = p.probs;
  d["support"] = p.support;
  d["alpha"] = p.alpha;
  if (p.tau)
    d["tau"] = *p.tau;
  else
    d["tau"] = py::none();
  return d;
}

py::dict sample_to_dict(const TaskSample& s) {
  py::dict d;
  d["task"] = s.task;
  d["input"] = s.input;
  d["target"] = s.target;
  d["mask"] = std::vector<int>(s.mask.begin(), s.mask.end());
  d["len"] = s.length;
  d["prompt_len"] = s.prompt_len;
  d["classification"] = s.classification;
  return d;
}

}  // namespace

PYBIND11_MODULE(_entlab, m) {
  m.doc() = "sparse-attention laboratory: entmax transforms, synthetic tasks, small "
            "causal transformers";
  m.attr("__version__") = "0.1.0";

  m.def(
      "softmax",
      [](const std::vector<double>& z, double temperature) {
        return dist_to_dict(softmax(z, temperature));
      },
      py::arg("z"), py::arg("temperature") = 1.0);
  m.def(
      "sparsemax",
      [](const std::vector<double>& z) { return dist_to_dict(sparsemax_exact(z)); },
      py::arg("z"));
  m.def(
      "entmax",
      [](const std::vector<double>& z, double alpha, int iterations) {
        return dist_to_dict(entmax_bisect(z, alpha, iterations));
      },
      py::arg("z"), py::arg("alpha") = 1.5, py::arg("iterations") = 60);
  m.def(
      "entmax_entropy",
      [](const std::vector<double>& z, double alpha) {
        const ProbDist p = entmax_bisect(z, alpha);
        return entropy(p);
      },
      py::arg("z"), py::arg("alpha") = 1.5);
  m.def(
      "asentmax",
      [](const std::vector<double>& z, double scale, double alpha) {
        return dist_to_dict(asentmax(z, scale, alpha));
      },
      py::arg("z"), py::arg("scale"), py::arg("alpha") = 1.5);
  m.def(
      "ssmax",
      [](const std::vector<double>& z, double s_learn, std::size_t n) {
        return dist_to_dict(ssmax(z, s_learn, n));
      },
      py::arg("z"), py::arg("s_learn"), py::arg("n"));
  m.def(
      "two_level_predict",
      [](double M, double mm, std::size_t k, std::size_t n, double alpha) {
        const TwoLevelPrediction p = two_level_predict(M, mm, k, n, alpha);
        py::dict d;
        d["sparse_regime"] = p.sparse_regime;
        d["tau"] = p.tau;
        d["high_prob"] = p.high_prob;
        d["delta_threshold"] = p.delta_threshold;
        d["softmax_required_delta"] = p.softmax_required_delta;
        return d;
      },
      py::arg("M"), py::arg("m"), py::arg("k"), py::arg("n"), py::arg("alpha") = 1.5);
  m.def("alibi_entmax_cutoff", &alibi_entmax_cutoff, py::arg("z_min"), py::arg("z_max"),
        py::arg("slope"), py::arg("alpha"));
  m.def(
      "nape_slopes",
      [](std::size_t heads) {
        std::vector<double> slopes;
        for (const auto& e : nape_assign(heads))
          slopes.push_back(e.kind == PosKind::ALiBi ? e.alibi_slope : 0.0);
        return slopes;
      },
      py::arg("heads"), "per-head ALiBi slopes, 0 for NoPE heads");
  m.def(
      "fit_scaling_models",
      [](const std::vector<double>& positions, const std::vector<double>& scales) {
        const ScalingFits f = fit_scaling_models(positions, scales);
        py::dict d;
        d["linear"] = py::dict(py::arg("beta") = f.linear.beta, py::arg("r2") = f.linear.r2);
        d["log"] = py::dict(py::arg("beta") = f.log_fit.beta, py::arg("r2") = f.log_fit.r2);
        d["log_power"] =
            py::dict(py::arg("beta") = f.log_power.beta, py::arg("gamma") = f.log_power.gamma,
                     py::arg("delta") = f.log_power.delta, py::arg("r2") = f.log_power.r2);
        d["degenerate"] = f.degenerate;
        return d;
      },
      py::arg("positions"), py::arg("scales"));

  m.def(
      "generate_sample",
      [](const std::string& task, std::uint64_t seed, std::uint64_t index, std::size_t len_lo,
         std::size_t len_hi) {
        TaskSpec spec = TaskSpec::defaults(task);
        if (len_lo > 0) spec.len_lo = len_lo;
        if (len_hi > 0) spec.len_hi = len_hi;
        return sample_to_dict(generate_sample(spec, seed, index));
      },
      py::arg("task"), py::arg("seed") = 0, py::arg("index") = 0, py::arg("len_lo") = 0,
      py::arg("len_hi") = 0);
  m.def(
      "exact_match",
      [](const std::vector<int>& a, const std::vector<int>& b) { return exact_match(a, b); },
      py::arg("pred"), py::arg("target"));

  py::class_<Model<float>>(m, "Model")
      .def(py::init([](const std::string& config_json) {
             return Model<float>(ModelConfig::from_json(config_json));
           }),
           py::arg("config_json"))
      .def("config_json", [](const Model<float>& mm) { return mm.config().to_json(); })
      .def("parameter_count", &Model<float>::parameter_count)
      .def(
          "forward",
          [](const Model<float>& mm, const std::vector<int>& tokens) {
            NoGradGuard ng;
            auto fwd = mm.forward(tokens);
            return std::vector<float>(fwd.logits.data().begin(), fwd.logits.data().end());
          },
          py::arg("tokens"), "flattened [n x vocab] logits")
      .def(
          "greedy_decode",
          [](const Model<float>& mm, const std::vector<int>& prompt, std::size_t n_tokens) {
            InferenceSession session(mm);
            int next = 0;
            for (int t : prompt) next = session.feed(t);
            std::vector<int> out;
            for (std::size_t i = 0; i < n_tokens; ++i) {
              out.push_back(next);
              if (i + 1 < n_tokens) next = session.feed(next);
            }
            return out;
          },
          py::arg("prompt"), py::arg("n_tokens"));
}
