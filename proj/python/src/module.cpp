#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <json.hpp>

#include <cmath>
#include <sstream>

#include "gapfill/cli.hpp"
#include "gapfill/dineof.hpp"
#include "gapfill/errors.hpp"
#include "gapfill/grid.hpp"
#include "gapfill/metrics.hpp"
#include "gapfill/synth.hpp"

namespace py = pybind11;
using namespace gapfill;

namespace {

template <typename T>
py::array_t<T> cube(const Dims& d, std::span<const T> data) {
  py::array_t<T> a({d.t, d.h, d.w});
  std::copy(data.begin(), data.end(), a.mutable_data());
  return a;
}

SpatioTemporalField field_from_arrays(py::array_t<float, py::array::c_style | py::array::forcecast> values,
                                      py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> land,
                                      const std::string& time_origin, bool log10) {
  if (values.ndim() != 3) throw ConfigError("values must be a (T, H, W) array");
  const Dims d{static_cast<std::size_t>(values.shape(0)), static_cast<std::size_t>(values.shape(1)),
               static_cast<std::size_t>(values.shape(2))};
  if (land.ndim() != 2 || static_cast<std::size_t>(land.shape(0)) != d.h ||
      static_cast<std::size_t>(land.shape(1)) != d.w) {
    throw ConfigError("land must be an (H, W) array matching values");
  }
  FieldMeta meta;
  meta.time_origin = time_origin;
  meta.log10 = log10;
  SpatioTemporalField f(d, meta);
  std::copy(land.data(), land.data() + d.frame_size(), f.land().begin());
  const float* v = values.data();
  for (std::size_t t = 0; t < d.t; ++t) {
    for (std::size_t h = 0; h < d.h; ++h) {
      for (std::size_t w = 0; w < d.w; ++w) {
        const float x = v[d.index(t, h, w)];
        if (std::isfinite(x) && !f.is_land(h, w)) f.set(t, h, w, x);
      }
    }
  }
  return f;
}

std::vector<std::uint8_t> flat_mask(py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> m,
                                    std::size_t n) {
  if (static_cast<std::size_t>(m.size()) != n) throw ConfigError("domain size does not match the data");
  return {m.data(), m.data() + n};
}

}  // namespace

PYBIND11_MODULE(_gapfill, m) {
  m.doc() = "Gap filling of gappy satellite time series";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<SpatioTemporalField>(m, "Field")
      .def(py::init(&field_from_arrays), py::arg("values"), py::arg("land"), py::arg("time_origin") = "2017-01-01",
           py::arg("log10") = true, "Field from a (T, H, W) array with NaN gaps and an (H, W) land mask.")
      .def_property_readonly("dims", [](const SpatioTemporalField& f) {
        return py::make_tuple(f.dims().t, f.dims().h, f.dims().w);
      })
      .def_property_readonly("values", [](const SpatioTemporalField& f) { return cube<float>(f.dims(), f.values()); })
      .def_property_readonly("valid", [](const SpatioTemporalField& f) {
        return cube<std::uint8_t>(f.dims(), f.valid()).attr("astype")("bool");
      })
      .def_property_readonly("land", [](const SpatioTemporalField& f) {
        py::array_t<std::uint8_t> a({f.dims().h, f.dims().w});
        std::copy(f.land().begin(), f.land().end(), a.mutable_data());
        return a.attr("astype")("bool");
      })
      .def_property_readonly("time_origin", [](const SpatioTemporalField& f) { return f.meta().time_origin; })
      .def_property_readonly("log10", [](const SpatioTemporalField& f) { return f.meta().log10; })
      .def_property_readonly("sensor_names", [](const SpatioTemporalField& f) {
        return f.sensors() ? f.sensors()->sensor_names : std::vector<std::string>{};
      })
      .def("valid_count", &SpatioTemporalField::valid_count)
      .def("missing_ratio", [](const SpatioTemporalField& f, std::size_t t) { return missing_ratio(f, t); })
      .def("save", [](const SpatioTemporalField& f, const std::filesystem::path& p) { save_field(f, p); })
      .def_static("load", [](const std::filesystem::path& p) { return load_field(p); })
      .def("__eq__", [](const SpatioTemporalField& a, const SpatioTemporalField& b) { return bit_identical(a, b); });

  m.def(
      "generate_synthetic",
      [](const std::string& config_json, std::uint64_t seed) {
        auto cfg = synth::synth_config_from_json(nlohmann::json::parse(config_json));
        cfg.seed = seed;
        auto ds = synth::generate(cfg);
        return py::make_tuple(std::move(ds.truth), std::move(ds.gappy));
      },
      py::arg("config_json") = "{}", py::arg("seed") = 42, "Synthetic (truth, gappy) pair from a JSON configuration.");

  m.def(
      "dineof",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> data, int rank, int max_iter, double tol,
         int filter_width) {
        if (data.ndim() != 2) throw ConfigError("data must be a 2-D array");
        const auto rows = data.shape(0), cols = data.shape(1);
        dineof::DataMatrix d{dineof::Matrix(rows, cols), dineof::Mask(rows, cols)};
        const double* p = data.data();
        for (Eigen::Index i = 0; i < rows; ++i) {
          for (Eigen::Index j = 0; j < cols; ++j) {
            const double v = p[i * cols + j];
            const bool ok = std::isfinite(v);
            d.observed(i, j) = ok ? 1 : 0;
            d.x(i, j) = ok ? v : 0.0;
          }
        }
        const dineof::DineofConfig cfg{rank, max_iter, tol, filter_width > 1 ? filter_width : 3};
        dineof::DineofResult r;
        {
          py::gil_scoped_release release;
          r = filter_width > 1 ? dineof::edineof(d, cfg) : dineof::dineof(d, cfg);
        }
        py::array_t<double> out({rows, cols});
        double* o = out.mutable_data();
        for (Eigen::Index i = 0; i < rows; ++i) {
          for (Eigen::Index j = 0; j < cols; ++j) o[i * cols + j] = r.completed(i, j);
        }
        return py::make_tuple(out, r.iterations, r.final_change);
      },
      py::arg("data"), py::arg("rank"), py::arg("max_iter") = 200, py::arg("tol") = 1e-5, py::arg("filter_width") = 0,
      "Complete a (space, time) matrix with NaN gaps; filter_width > 1 selects the filtered variant. "
      "Returns (completed, iterations, final_change).");

  auto metric = [&m](const char* name, auto linear, auto logged) {
    m.def(
        name,
        [linear, logged](py::array_t<double, py::array::c_style | py::array::forcecast> truth,
                         py::array_t<double, py::array::c_style | py::array::forcecast> recon,
                         py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> domain, bool log10) {
          const auto n = static_cast<std::size_t>(truth.size());
          if (static_cast<std::size_t>(recon.size()) != n) throw ConfigError("truth and recon sizes differ");
          const auto dom = flat_mask(domain, n);
          const std::span<const double> t(truth.data(), n), r(recon.data(), n);
          return log10 ? logged(t, r, dom) : linear(t, r, dom);
        },
        py::arg("truth"), py::arg("recon"), py::arg("domain"), py::arg("log10") = false);
  };
  metric("rmsle", &metrics::rmsle_from_linear, &metrics::rmsle_from_log10);
  metric("mre", &metrics::mre_from_linear, &metrics::mre_from_log10);

  m.def(
      "run",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run one gapfill command line; returns (exit_code, stdout, stderr).");
}
