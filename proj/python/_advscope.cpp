#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "advscope/api.hpp"
#include "advscope/attack.hpp"
#include "advscope/cli.hpp"
#include "advscope/cluster.hpp"
#include "advscope/dataset.hpp"
#include "advscope/error.hpp"
#include "advscope/model_io.hpp"
#include "advscope/neuron_measures.hpp"
#include "advscope/vulnmap.hpp"
#include "advscope/workspace.hpp"

namespace py = pybind11;
using namespace advscope;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

FloatArray to_numpy(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  FloatArray out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

Tensor<float> from_numpy(const FloatArray& a) {
  Shape shape;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(static_cast<std::size_t>(a.shape(i)));
  Tensor<float> t(shape);
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

FloatArray grid(const std::vector<float>& values, std::size_t rows, std::size_t cols) {
  FloatArray out({static_cast<py::ssize_t>(rows), static_cast<py::ssize_t>(cols)});
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

py::dict trace_dict(const ForwardTrace& trace) {
  py::dict d;
  d["label"] = trace.predicted_label;
  d["probabilities"] = trace.probabilities;
  d["logits"] = trace.logits;
  d["pooled"] = trace.pooled;
  d["feature_maps"] = to_numpy(trace.last_conv_maps);
  return d;
}

}  // namespace

PYBIND11_MODULE(_advscope, m) {
  m.doc() = "Adversarial-attack interpretability workbench";

  auto validation = py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NotFoundError>(m, "NotFoundError", PyExc_KeyError);
  py::register_exception<InsufficientMembersError>(m, "InsufficientMembersError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_OSError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  (void)validation;

  m.def(
      "run_cli", [](const std::vector<std::string>& args) {
        py::gil_scoped_release release;
        return run_cli(args);
      },
      py::arg("args"), "Runs the command-line tool in-process and returns its exit code.");

  m.def(
      "generate_shapes",
      [](std::uint64_t seed, std::size_t per_class, std::size_t size) {
        const Dataset data = generate_shapes_dataset(seed, per_class, size);
        FloatArray images({static_cast<py::ssize_t>(data.size()), py::ssize_t{3}, static_cast<py::ssize_t>(size),
                           static_cast<py::ssize_t>(size)});
        const std::size_t pixels = 3 * size * size;
        for (std::size_t i = 0; i < data.size(); ++i) {
          std::copy(data.images[i].data(), data.images[i].data() + pixels, images.mutable_data() + i * pixels);
        }
        return py::make_tuple(images, data.labels, data.class_names);
      },
      py::arg("seed") = 7, py::arg("per_class") = 500, py::arg("size") = 32,
      "Returns (images[N,3,H,W], labels, class_names).");

  py::class_<Model<float>>(m, "Model")
      .def_static("load", [](const std::filesystem::path& path) { return load_model(path); })
      .def_property_readonly("class_names", [](const Model<float>& model) { return model.spec.class_names; })
      .def_property_readonly("neuron_count", [](const Model<float>& model) { return model.spec.neuron_count(); })
      .def("forward", [](const Model<float>& model, const FloatArray& image) {
        return trace_dict(forward(model, from_numpy(image)));
      })
      .def(
          "attack",
          [](const Model<float>& model, const FloatArray& image, std::size_t label, double eps, double alpha,
             std::size_t steps, std::uint64_t seed, bool random_start) {
            AttackConfig config;
            config.eps = eps;
            config.alpha = alpha;
            config.steps = steps;
            config.seed = seed;
            config.random_start = random_start;
            config.validate();
            const AttackResult r = pgd_attack(model, from_numpy(image), label, config);
            return py::make_tuple(to_numpy(r.adversarial), r.success, r.adversarial_label);
          },
          py::arg("image"), py::arg("label"), py::arg("eps") = 8.0 / 255.0, py::arg("alpha") = 2.0 / 255.0,
          py::arg("steps") = 7, py::arg("seed") = 0, py::arg("random_start") = true,
          "PGD; returns (adversarial image, success, adversarial label).");

  py::class_<Workspace, std::shared_ptr<Workspace>>(m, "Workspace")
      .def(py::init([](const std::filesystem::path& run_dir, std::size_t threads) {
             return std::make_shared<Workspace>(Workspace::open(run_dir, threads));
           }),
           py::arg("run_dir"), py::arg("threads") = 0)
      .def_property_readonly("pair_count", [](const Workspace& ws) { return ws.pairs().size(); })
      .def_property_readonly("neuron_count", &Workspace::neuron_count)
      .def_property_readonly("class_names", [](const Workspace& ws) { return ws.info().class_names; })
      .def("pair", [](const Workspace& ws, std::size_t id) {
        const InstancePair& p = ws.pair(id);
        py::dict d;
        d["benign"] = to_numpy(p.benign);
        d["adversarial"] = to_numpy(p.adversarial);
        d["benign_label"] = p.benign_label;
        d["adversarial_label"] = p.adversarial_label;
        d["l2"] = p.perturbation_l2;
        return d;
      })
      .def(
          "vulnerability_map",
          [](const Workspace& ws, std::size_t id, std::size_t k, std::size_t s, const std::string& space,
             std::size_t threads) {
            VulnParams params{k, s, parse_value_space(space)};
            VulnerabilityMap map;
            {
              py::gil_scoped_release release;
              map = vulnerability_maps(ws.model(), ws.pair(id), params, threads);
            }
            return py::make_tuple(grid(map.b_map, map.rows, map.cols), grid(map.a_map, map.rows, map.cols));
          },
          py::arg("pair_id"), py::arg("k") = 2, py::arg("s") = 1, py::arg("space") = "probability",
          py::arg("threads") = 0, "Returns (b_map, a_map) on the stride-s lattice.")
      .def(
          "band_gaps",
          [](const Workspace& ws, std::size_t id, double gamma) {
            std::vector<double> gaps;
            for (const auto& row : neuron_rows(ws, id, gamma)) gaps.push_back(row.bg);
            return gaps;
          },
          py::arg("pair_id"), py::arg("gamma") = 0.95, "Band gap per neuron, in neuron order.")
      .def(
          "dendrogram",
          [](const Workspace& ws, std::size_t id, double threshold, const std::string& linkage) {
            const Linkage l = parse_linkage(linkage);
            RfParams params;
            params.threshold = threshold;
            return dendrogram_json(pair_dendrogram(ws, id, params, l), l);
          },
          py::arg("pair_id"), py::arg("t") = 0.5, py::arg("linkage") = "average", "Dendrogram as a JSON string.");

  py::class_<Api, std::shared_ptr<Api>>(m, "Api")
      .def(py::init([](std::shared_ptr<Workspace> ws) { return std::make_shared<Api>(ws); }), py::arg("workspace"))
      .def(
          "get",
          [](Api& api, const std::string& path, const std::map<std::string, std::string>& params) {
            ApiResponse r;
            {
              py::gil_scoped_release release;
              r = api.handle(path, QueryParams(params.begin(), params.end()));
            }
            return py::make_tuple(r.status, r.content_type, py::bytes(r.body));
          },
          py::arg("path"), py::arg("params") = std::map<std::string, std::string>{},
          "Returns (status, content_type, body bytes) for an API path such as '/matrix'.");
}
