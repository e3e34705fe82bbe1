#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "scatfit/cli.hpp"
#include "scatfit/modelfile.hpp"

namespace py = pybind11;
using namespace scatfit;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> call_functor(const Functor& f, py::args args) {
  if (args.size() != f.arity())
    throw py::value_error(f.name() + " takes " + std::to_string(f.arity()) + " coordinate arrays");
  std::vector<Array> arrays;
  std::vector<std::span<const double>> cols;
  std::vector<py::ssize_t> shape;
  for (const auto& a : args) {
    arrays.push_back(Array::ensure(a));
    if (!arrays.back()) throw py::type_error("coordinates must be numeric arrays");
    const auto& arr = arrays.back();
    std::vector<py::ssize_t> s(arr.shape(), arr.shape() + arr.ndim());
    if (cols.empty()) shape = s;
    else if (s != shape) throw py::value_error("coordinate arrays differ in shape");
    cols.emplace_back(arr.data(), static_cast<std::size_t>(arr.size()));
  }
  std::vector<double> out;
  {
    py::gil_scoped_release release;
    out = f.evaluate(Functor::Columns(cols));
  }
  py::array_t<double> result(shape);
  std::copy(out.begin(), out.end(), result.mutable_data());
  return result;
}

py::dict fit_summary(const FitResult& r) {
  py::dict d;
  py::list params;
  for (std::size_t i = 0; i < r.parameters.size(); ++i) {
    py::dict p;
    p["id"] = r.parameters[i].id();
    p["raw_value"] = r.raw_values[i];
    p["error"] = i < r.errors.size() && r.errors[i] ? py::cast(*r.errors[i]) : py::none();
    params.append(p);
  }
  d["parameters"] = params;
  d["chi2"] = r.chi2();
  d["chi2_history"] = r.chi2_history;
  d["status"] = std::string(status_name(r.status));
  d["n_evaluations"] = r.n_evaluations;
  d["message"] = r.message;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Expression-graph scattering models and fitting";

  static py::exception<Error> base(m, "Error");
  static py::exception<SchemaError> schema(m, "SchemaError", base.ptr());
  static py::exception<ParseError> parse(m, "ParseError", base.ptr());
  static py::exception<FitError> fit(m, "FitError", base.ptr());
  static py::exception<EvalError> eval(m, "EvalError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const SchemaError& e) {
      schema(e.what());
    } catch (const ParseError& e) {
      parse(e.what());
    } catch (const FitError& e) {
      fit(e.what());
    } catch (const EvalError& e) {
      eval(e.what());
    } catch (const ValueError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const Error& e) {
      base(e.what());
    }
  });

  py::class_<Parameter>(m, "Parameter")
      .def_property_readonly("name", &Parameter::name)
      .def_property_readonly("id", &Parameter::id)
      .def_property_readonly("units", &Parameter::units)
      .def_property_readonly("scale", &Parameter::scale)
      .def_property_readonly("value", &Parameter::value)
      .def_property("raw_value", &Parameter::raw_value, &Parameter::set_raw_value)
      .def_property("fixed", &Parameter::fixed, &Parameter::set_fixed)
      .def_property(
          "bounds",
          [](const Parameter& p) -> std::optional<std::pair<double, double>> {
            if (auto b = p.bounds()) return std::pair{b->lo, b->hi};
            return std::nullopt;
          },
          [](Parameter& p, std::optional<std::pair<double, double>> b) {
            p.set_bounds(b ? std::optional<Bounds>(Bounds{b->first, b->second}) : std::nullopt);
          })
      .def_property_readonly("error", &Parameter::error)
      .def("__repr__", [](const Parameter& p) {
        std::ostringstream os;
        os << "<Parameter " << p.id() << " raw_value=" << p.raw_value() << (p.fixed() ? " fixed" : "") << ">";
        return os.str();
      });

  py::class_<Functor>(m, "Functor")
      .def_property_readonly("name", &Functor::name)
      .def_property_readonly("variables",
                             [](const Functor& f) {
                               std::vector<std::string> names;
                               for (const auto& v : f.variables()) names.push_back(v.name());
                               return names;
                             })
      .def("__call__", &call_functor);

  py::class_<ModelFile>(m, "ModelFile")
      .def_static("load", &ModelFile::load, py::arg("path"))
      .def_static(
          "from_json",
          [](const std::string& text, const std::filesystem::path& base_dir) {
            return ModelFile::from_json(Json::parse(text), base_dir);
          },
          py::arg("text"), py::arg("base_dir") = std::filesystem::path{})
      .def("to_json", [](const ModelFile& f) { return f.to_json().dump(2); })
      .def_property_readonly("parameters", &ModelFile::parameters)
      .def_property_readonly("functors",
                             [](const ModelFile& f) {
                               std::vector<std::string> names;
                               for (const auto& fn : f.functors()) names.push_back(fn.name());
                               return names;
                             })
      .def_property_readonly("models",
                             [](const ModelFile& f) {
                               std::vector<std::string> names;
                               for (const auto& mo : f.models()) names.push_back(mo->name());
                               return names;
                             })
      .def(
          "parameter",
          [](const ModelFile& f, const std::string& id) {
            if (const Parameter* p = f.find_parameter(id)) return *p;
            for (const auto& p : f.parameters())
              if (p.name() == id) return p;
            throw py::key_error(id);
          },
          py::arg("key"), "Looks a parameter up by id, then by name.")
      .def(
          "functor",
          [](const ModelFile& f, const std::string& name) {
            const Functor* fn = f.find_functor(name);
            if (!fn) throw py::key_error(name);
            return *fn;
          },
          py::arg("name"))
      .def("default_grid", &ModelFile::default_grid, py::arg("functor"))
      .def(
          "chi2",
          [](const ModelFile& f, const std::vector<std::string>& models) { return f.objective(models)->chi2(); },
          py::arg("models") = std::vector<std::string>{})
      .def(
          "residuals",
          [](const ModelFile& f, const std::vector<std::string>& models) {
            return f.objective(models)->residuals();
          },
          py::arg("models") = std::vector<std::string>{})
      .def(
          "fit",
          [](const ModelFile& f, std::optional<std::string> optimizer, std::vector<std::string> models,
             std::optional<std::uint64_t> seed) {
            const FitConfig& cfg = f.fit_config();
            const Optimizer opt = optimizer ? optimizer_from_name(*optimizer) : cfg.optimizer;
            const auto target = f.objective(models.empty() ? cfg.models : models);
            DEOptions de = cfg.de;
            if (seed) de.seed = *seed;
            FitResult r;
            {
              py::gil_scoped_release release;
              r = opt == Optimizer::de ? fit_de(*target, de) : fit_lm(*target, cfg.lm);
            }
            return fit_summary(r);
          },
          py::arg("optimizer") = py::none(), py::arg("models") = std::vector<std::string>{},
          py::arg("seed") = py::none());

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "scatfit");
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process; returns (exit code, stdout, stderr).");
}
