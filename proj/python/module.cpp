#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cli.hpp"
#include "pathm3/attention.hpp"
#include "pathm3/bench.hpp"
#include "pathm3/config.hpp"
#include "pathm3/data.hpp"
#include "pathm3/metrics.hpp"
#include "pathm3/model.hpp"

namespace py = pybind11;
using namespace pathm3;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ArrayF = py::array_t<float, py::array::c_style | py::array::forcecast>;

template <typename Real, typename A>
Tensor<Real> to_tensor(const A& a, const char* name) {
  if (a.ndim() != 2) throw py::value_error(std::string(name) + " must be 2-D");
  const std::size_t r = a.shape(0), c = a.shape(1);
  return Tensor<Real>({r, c}, std::vector<Real>(a.data(), a.data() + r * c));
}

template <typename Real>
py::array_t<Real> to_array(const Tensor<Real>& t) {
  py::array_t<Real> out({t.rows(), t.cols()});
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

AttentionConfig single_head(std::size_t d, std::size_t m, std::size_t iterations) {
  AttentionConfig cfg;
  cfg.model_dim = d;
  cfg.num_heads = 1;
  cfg.landmark_count = m;
  cfg.pinv_iterations = iterations;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, mod) {
  mod.doc() = "pathm3 native core";

  py::register_exception<Error>(mod, "Error", PyExc_RuntimeError);

  mod.def(
      "exact_attention",
      [](const Array& q, const Array& k, const Array& v) {
        return to_array(exact_attention(to_tensor<double>(q, "q"), to_tensor<double>(k, "k"), to_tensor<double>(v, "v")));
      },
      py::arg("q"), py::arg("k"), py::arg("v"));

  mod.def(
      "nystrom_attention",
      [](const Array& q, const Array& k, const Array& v, std::size_t landmarks, std::size_t pinv_iterations) {
        auto tq = to_tensor<double>(q, "q");
        return to_array(nystrom_attention(tq, to_tensor<double>(k, "k"), to_tensor<double>(v, "v"),
                                          single_head(tq.cols(), landmarks, pinv_iterations)));
      },
      py::arg("q"), py::arg("k"), py::arg("v"), py::arg("landmarks"), py::arg("pinv_iterations") = 6);

  mod.def(
      "pinv", [](const Array& a, std::size_t iterations) { return to_array(moore_penrose_pinv(to_tensor<double>(a, "a"), iterations).value); },
      py::arg("a"), py::arg("iterations") = 6);

  mod.def(
      "bleu4",
      [](const std::vector<int>& hyp, const std::vector<std::vector<int>>& refs) { return bleu4(hyp, refs); },
      py::arg("hypothesis"), py::arg("references"));
  mod.def("mean_bleu4", &mean_bleu4, py::arg("hypotheses"), py::arg("references"));
  mod.def("loglog_slope", &loglog_slope, py::arg("x"), py::arg("y"));

  mod.def(
      "bench",
      [](std::vector<std::size_t> lengths, std::size_t landmarks, std::size_t repeats, std::size_t head_dim,
         std::uint64_t seed) {
        BenchConfig cfg;
        cfg.lengths = std::move(lengths);
        cfg.landmarks = landmarks;
        cfg.repeats = repeats;
        cfg.head_dim = head_dim;
        cfg.seed = seed;
        py::list rows;
        for (const auto& r : bench_attention(cfg)) {
          py::dict d;
          d["M"] = r.M;
          d["m"] = r.m;
          d["method"] = r.method;
          d["wall_ms"] = r.wall_ms;
          d["mean_rel_err"] = r.mean_rel_err ? py::cast(*r.mean_rel_err) : py::none();
          rows.append(d);
        }
        return rows;
      },
      py::arg("lengths"), py::arg("landmarks") = 64, py::arg("repeats") = 3, py::arg("head_dim") = 32,
      py::arg("seed") = 0);

  mod.def("preset_names", &preset_names);
  mod.def("config_keys", [] {
    py::list out;
    for (const auto& k : config_keys()) {
      py::dict d;
      d["name"] = k.name;
      d["provenance"] = k.provenance;
      d["default"] = k.default_value;
      d["help"] = k.help;
      out.append(d);
    }
    return out;
  });
  mod.def(
      "config_json",
      [](const std::string& preset, const std::vector<std::pair<std::string, std::string>>& overrides) {
        return config_to_json(parse_config(std::nullopt, overrides, preset));
      },
      py::arg("preset") = "desk", py::arg("overrides") = std::vector<std::pair<std::string, std::string>>{});

  mod.def(
      "grad_check",
      [](const std::string& preset, std::uint64_t seed, double step, double tol) {
        const GradCheckReport rep = model_grad_check(preset_config(preset).model, seed, step, tol);
        py::dict out;
        py::dict per;
        for (const auto& e : rep.entries) per[py::str(e.name)] = e.max_rel_error;
        out["max_rel_error"] = rep.max_rel_error;
        out["passed"] = rep.all_passed;
        out["parameters"] = per;
        return out;
      },
      py::arg("preset") = "tiny", py::arg("seed") = 0, py::arg("step") = 1e-3, py::arg("tol") = 1e-2);

  mod.def(
      "read_features", [](const std::filesystem::path& p) { return to_array(read_feature_file(p)); }, py::arg("path"));
  mod.def(
      "write_features",
      [](const ArrayF& a, const std::filesystem::path& p) { write_feature_file(to_tensor<float>(a, "rows"), p); },
      py::arg("rows"), py::arg("path"));

  mod.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
