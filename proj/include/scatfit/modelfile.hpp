#pragma once

// Declarative JSON model files.
//
// {
//   "variables":  ["q"],
//   "parameters": [{"name": "R", "raw_value": 7.5, "scale": 1, "bounds": [1, 20],
//                   "fixed": false, "units": "nm"},
//                  {"name": "V", "expr": "4/3*pi*R^3"}],
//   "materials":  [{"name": "Si", "sld_re": 2.074e-4, "sld_im": 0}],
//   "samples":    [{"name": "film", "type": "multilayer", "ambient": "air",
//                   "substrate": {"material": "Si", "roughness": 0.3},
//                   "layers": [{"material": "Fe", "thickness": "d", "roughness": 0.5},
//                              {"repeats": 3, "layers": [...]}]},
//                  {"name": "fins", "type": "potential", "variables": ["qx", "qy", "qz"],
//                   "terms": [{"shape": {"type": "box", "size": ["wx", "wy", "wz"]},
//                              "material": "Si", "positions": [[0, 0, 0]],
//                              "op": "add", "factor": 1}]}],
//   "functors":   [{"name": "I", "expr": "N*pow(C*V*F, 2) + B", "variables": ["q"],
//                   "grid": ["q=0.001:4:0.001"]},
//                  {"name": "R", "type": "specrefl", "sample": "film", "variable": "q"}],
//   "datasets":   [{"name": "d", "file": "data.txt", "columns": "x,y,sigma",
//                   "mask": [{"range": [0, 5]}]}],
//   "models":     [{"name": "m", "functor": "I", "dataset": "d", "scaling": "log"}],
//   "fit":        {"optimizer": "lm", "models": ["m"], "lm": {...}, "de": {...}}
// }
//
// Numbers in expression positions may also be expression strings. Names of
// parameters, variables and functors share one namespace used by expression
// strings; references may point forward but must not form a cycle. A single
// "sample" object is accepted in place of the "samples" list.
//
// Functor types: expr (default), specrefl, pnrspec, lattice, formfactor, sas,
// integrate, average, convolve.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "scatfit/data.hpp"
#include "scatfit/fit.hpp"
#include "scatfit/model.hpp"
#include "scatfit/potential.hpp"
#include "scatfit/records.hpp"
#include "scatfit/reflect.hpp"

namespace scatfit {

using Sample = std::variant<Multilayer, Potential>;

struct NamedSample {
  std::string name;
  Sample sample;
};

struct DependentParameter {
  std::string name;
  Expr expr;
};

struct FitConfig {
  Optimizer optimizer = Optimizer::lm;
  LMOptions lm;
  DEOptions de;
  // Empty means every declared model.
  std::vector<std::string> models;
};

// Parses a fit section {optimizer, models, lm: {...}, de: {...}} on top of
// `base`. Model names are not checked here.
FitConfig parse_fit_config(const Json& j, const std::string& path = "fit", FitConfig base = {});

class ModelFile {
 public:
  // Relative data-file paths resolve against `base_dir`. Throws SchemaError
  // naming the offending field.
  static ModelFile from_json(const Json& doc, const std::filesystem::path& base_dir = {});
  static ModelFile load(const std::filesystem::path& path);

  // The document as loaded.
  const Json& document() const noexcept { return doc_; }
  // The document with the live parameter state written back into the
  // parameter records (raw_value, fixed, bounds, error, id).
  Json to_json() const;

  const std::vector<Variable>& variables() const noexcept { return variables_; }
  const std::vector<Parameter>& parameters() const noexcept { return parameters_; }
  const std::vector<DependentParameter>& dependents() const noexcept { return dependents_; }
  const std::vector<Material>& materials() const noexcept { return materials_; }
  const std::vector<NamedSample>& samples() const noexcept { return samples_; }
  const std::vector<Functor>& functors() const noexcept { return functors_; }
  const std::vector<std::shared_ptr<DataSet>>& datasets() const noexcept { return datasets_; }
  const std::vector<std::shared_ptr<Model>>& models() const noexcept { return models_; }
  const FitConfig& fit_config() const noexcept { return fit_; }

  const Parameter* find_parameter(std::string_view id) const;
  const Functor* find_functor(std::string_view name) const;
  const NamedSample* find_sample(std::string_view name) const;
  std::shared_ptr<Model> find_model(std::string_view name) const;
  // Default grid specs declared on the functor entry, if any.
  std::vector<std::string> default_grid(std::string_view functor) const;

  // The fit target for the named models (all models when empty): the model
  // itself for one, a MultiModel otherwise. Throws SchemaError for unknown
  // names or when there is nothing to fit.
  std::shared_ptr<const Objective> objective(const std::vector<std::string>& names = {}) const;

 private:
  friend class ModelFileBuilder;
  Json doc_;
  std::vector<Variable> variables_;
  std::vector<Parameter> parameters_;
  std::vector<DependentParameter> dependents_;
  std::vector<Material> materials_;
  std::vector<NamedSample> samples_;
  std::vector<Functor> functors_;
  std::map<std::string, std::vector<std::string>, std::less<>> grids_;
  std::vector<std::shared_ptr<DataSet>> datasets_;
  std::vector<std::shared_ptr<Model>> models_;
  FitConfig fit_;
};

}  // namespace scatfit
