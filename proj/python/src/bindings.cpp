#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "tapd/cli/cli.hpp"
#include "tapd/error.hpp"
#include "tapd/evalkit/evaluate.hpp"
#include "tapd/evalkit/metrics.hpp"
#include "tapd/numkit/optim.hpp"
#include "tapd/scenegen/dataset_io.hpp"
#include "tapd/scenegen/scenegen.hpp"
#include "tapd/train/checkpoint.hpp"

namespace py = pybind11;
using tapd::numkit::Tensor;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  tapd::numkit::Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::raw(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.vec().begin(), t.vec().end(), out.mutable_data());
  return out;
}

py::dict header_dict(const tapd::scenegen::DatasetHeader& h) {
  py::dict d;
  d["delta_t"] = h.layout.delta_t;
  d["intervals"] = h.layout.intervals;
  d["future"] = h.layout.future;
  d["state_dim"] = h.state_dim;
  d["map_dim"] = h.map_dim;
  d["reconstructed"] = h.reconstructed;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Observation-adaptive trajectory forecasting core";

  static py::exception<tapd::Error> error(m, "Error");
  static py::exception<tapd::ConfigError> config_error(m, "ConfigError", error.ptr());
  static py::exception<tapd::FormatError> format_error(m, "FormatError", error.ptr());
  static py::exception<tapd::DependencyError> dependency_error(m, "DependencyError", error.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const tapd::ConfigError& e) {
      config_error(e.what());
    } catch (const tapd::FormatError& e) {
      format_error(e.what());
    } catch (const tapd::DependencyError& e) {
      dependency_error(e.what());
    } catch (const tapd::ShapeError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const tapd::ValueError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const tapd::Error& e) {
      error(e.what());
    }
  });

  py::class_<tapd::scenegen::TimeLayout>(m, "TimeLayout")
      .def(py::init<>())
      .def_readwrite("delta_t", &tapd::scenegen::TimeLayout::delta_t)
      .def_readwrite("intervals", &tapd::scenegen::TimeLayout::intervals)
      .def_readwrite("future", &tapd::scenegen::TimeLayout::future)
      .def_property_readonly("observed", &tapd::scenegen::TimeLayout::observed);

  py::class_<tapd::scenegen::Scene>(m, "Scene")
      .def_readonly("id", &tapd::scenegen::Scene::id)
      .def_readonly("seed", &tapd::scenegen::Scene::seed)
      .def_readonly("aoi_indices", &tapd::scenegen::Scene::aoi_indices)
      .def_property_readonly("agent_count", &tapd::scenegen::Scene::agent_count)
      .def_property_readonly("states",
                             [](const tapd::scenegen::Scene& s) {
                               const std::size_t n = s.agents.size(), t = n ? s.agents[0].steps() : 0;
                               Array out({n, t, tapd::scenegen::kStateDim});
                               double* dst = out.mutable_data();
                               for (const auto& a : s.agents) dst = std::copy(a.states.begin(), a.states.end(), dst);
                               return out;
                             })
      .def_property_readonly("map", [](const tapd::scenegen::Scene& s) {
        Array out({s.map.polylines, s.map.segments, tapd::scenegen::kMapDim});
        std::copy(s.map.data.begin(), s.map.data.end(), out.mutable_data());
        return out;
      });

  m.def(
      "generate_scenes",
      [](std::size_t count, std::uint64_t seed) { return tapd::scenegen::generate_scenes(count, seed, {}); }, py::arg("count"),
      py::arg("seed") = 0, "Synthetic scenes with the default generator; scene i uses seed + i.");
  m.def(
      "truncate_history",
      [](const tapd::scenegen::Scene& s, int tau) { return to_array(tapd::scenegen::truncate_history(s, {{}, tau})); }, py::arg("scene"),
      py::arg("tau"), "Last tau intervals of the observed window, (N, tau*delta_t, 6).");
  m.def(
      "read_dataset",
      [](const std::string& path) {
        auto ds = tapd::scenegen::read_dataset(path);
        return py::make_tuple(header_dict(ds.header), ds.scenes);
      },
      py::arg("path"));

  m.def("ade", [](const Array& p, const Array& g) { return tapd::evalkit::ade(to_tensor(p), to_tensor(g)); });
  m.def("fde", [](const Array& p, const Array& g) { return tapd::evalkit::fde(to_tensor(p), to_tensor(g)); });
  m.def("min_ade_k", [](const Array& p, const Array& g) { return tapd::evalkit::min_ade_k(to_tensor(p), to_tensor(g)); });
  m.def("min_fde_k", [](const Array& p, const Array& g) { return tapd::evalkit::min_fde_k(to_tensor(p), to_tensor(g)); });
  m.def(
      "miss_rate_k",
      [](const std::vector<Array>& preds, const std::vector<Array>& gts, double threshold) {
        std::vector<Tensor> p, g;
        for (const auto& a : preds) p.push_back(to_tensor(a));
        for (const auto& a : gts) g.push_back(to_tensor(a));
        return tapd::evalkit::miss_rate_k(p, g, threshold);
      },
      py::arg("preds"), py::arg("gts"), py::arg("threshold") = tapd::evalkit::kMissThreshold);
  m.def("cosine_alpha", &tapd::numkit::cosine_alpha, py::arg("epoch"), py::arg("total_epochs"));

  m.def(
      "load_checkpoint",
      [](const std::string& path) {
        const auto ck = tapd::train::load_checkpoint(path);
        py::dict params;
        for (const auto& [name, t] : ck.params) params[py::str(name)] = to_array(t);
        py::dict d;
        d["stage"] = ck.stage;
        d["model"] = ck.model;
        d["config"] = ck.config_json;
        d["params"] = params;
        return d;
      },
      py::arg("path"));
  m.def(
      "predict",
      [](const std::string& checkpoint, const tapd::scenegen::Scene& scene, int tau) {
        const auto params = tapd::train::load_oaf(tapd::train::load_checkpoint(checkpoint));
        const auto f = tapd::evalkit::OafForecaster("model", params).predict(scene, tau);
        return py::make_tuple(to_array(f.trajectories), to_array(f.logits));
      },
      py::arg("checkpoint"), py::arg("scene"), py::arg("tau"),
      "Forecast (A, K, T_f, 2) offsets in the AOI frame and (A, K) mode logits.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = tapd::cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one tapd command; returns (exit_code, stdout, stderr).");
}
