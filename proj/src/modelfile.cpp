#include "scatfit/modelfile.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "scatfit/parser.hpp"
#include "scatfit/quad.hpp"

namespace scatfit {

namespace {

std::string at(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

void check_keys(const Json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw SchemaError(path + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw SchemaError(path + "." + key + ": unknown field");
  }
}

const Json* field(const Json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

std::string string_field(const Json& j, const char* key, const std::string& path,
                         std::optional<std::string> fallback = std::nullopt) {
  const Json* f = field(j, key);
  if (!f) {
    if (fallback) return *fallback;
    throw SchemaError(path + "." + key + ": required");
  }
  if (!f->is_string()) throw SchemaError(path + "." + key + ": expected a string");
  return f->get<std::string>();
}

double number_field(const Json& j, const char* key, const std::string& path,
                    std::optional<double> fallback = std::nullopt) {
  const Json* f = field(j, key);
  if (!f) {
    if (fallback) return *fallback;
    throw SchemaError(path + "." + key + ": required");
  }
  if (!f->is_number()) throw SchemaError(path + "." + key + ": expected a number");
  return f->get<double>();
}

int int_field(const Json& j, const char* key, const std::string& path, int fallback) {
  const Json* f = field(j, key);
  if (!f) return fallback;
  if (!f->is_number_integer()) throw SchemaError(path + "." + key + ": expected an integer");
  return f->get<int>();
}

bool bool_field(const Json& j, const char* key, const std::string& path, bool fallback) {
  const Json* f = field(j, key);
  if (!f) return fallback;
  if (!f->is_boolean()) throw SchemaError(path + "." + key + ": expected true or false");
  return f->get<bool>();
}

const Json& array_field(const Json& j, const char* key, const std::string& path) {
  static const Json empty = Json::array();
  const Json* f = field(j, key);
  if (!f) return empty;
  if (!f->is_array()) throw SchemaError(path + "." + key + ": expected an array");
  return *f;
}

std::vector<std::string> string_list(const Json& j, const std::string& path) {
  if (!j.is_array()) throw SchemaError(path + ": expected an array of strings");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_string()) throw SchemaError(at(path, i) + ": expected a string");
    out.push_back(j[i].get<std::string>());
  }
  return out;
}

// Identifiers appearing in an expression string, skipping numeric literals.
std::vector<std::string> identifiers(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
  auto ident_start = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; };
  auto ident_char = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
  while (i < s.size()) {
    const char c = s[i];
    if (digit(c) || (c == '.' && i + 1 < s.size() && digit(s[i + 1]))) {
      while (i < s.size() && (digit(s[i]) || s[i] == '.')) ++i;
      if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
        std::size_t j = i + 1;
        if (j < s.size() && (s[j] == '+' || s[j] == '-')) ++j;
        if (j < s.size() && digit(s[j])) {
          i = j;
          while (i < s.size() && digit(s[i])) ++i;
        }
      }
    } else if (ident_start(c)) {
      std::size_t j = i;
      while (j < s.size() && ident_char(s[j])) ++j;
      out.emplace_back(s.substr(i, j - i));
      i = j;
    } else {
      ++i;
    }
  }
  return out;
}

Formalism formalism_from(const std::string& s, const std::string& path) {
  if (s == "parratt") return Formalism::parratt;
  if (s == "matrix") return Formalism::matrix;
  throw SchemaError(path + ": unknown formalism '" + s + "' (expected parratt or matrix)");
}

IntegrationSpec integration_spec(const Json& j, const std::string& path) {
  IntegrationSpec spec;
  const std::string method = string_field(j, "method", path, "fixed");
  if (method == "fixed")
    spec.method = IntegrationSpec::Method::fixed;
  else if (method == "adaptive")
    spec.method = IntegrationSpec::Method::adaptive;
  else
    throw SchemaError(path + ".method: expected fixed or adaptive");
  spec.order = int_field(j, "order", path, spec.order);
  spec.rel_tol = number_field(j, "rel_tol", path, spec.rel_tol);
  spec.abs_tol = number_field(j, "abs_tol", path, spec.abs_tol);
  spec.max_depth = int_field(j, "max_depth", path, spec.max_depth);
  return spec;
}

}  // namespace

class ModelFileBuilder {
 public:
  ModelFileBuilder(ModelFile& out, std::filesystem::path base) : m_(out), base_(std::move(base)) {}

  void build() {
    const Json& doc = m_.doc_;
    check_keys(doc, "model",
               {"variables", "parameters", "materials", "sample", "samples", "functors", "datasets",
                "models", "fit", "description"});
    if (doc.contains("sample") && doc.contains("samples"))
      throw SchemaError("model.sample: use either sample or samples, not both");

    collect_variables();
    declare_parameters();
    declare("materials", material_entries_, material_order_);
    if (const Json* one = field(doc, "sample")) {
      sample_list_ = Json::array({*one});
      sample_path_ = "sample";
    } else {
      sample_list_ = array_field(doc, "samples", "model");
      sample_path_ = "samples";
    }
    for (std::size_t i = 0; i < sample_list_.size(); ++i) {
      const std::string path = sample_path_ == "sample" ? std::string("sample") : at("samples", i);
      const std::string name = string_field(sample_list_[i], "name", path);
      if (!sample_entries_.emplace(name, Pending{&sample_list_[i], path}).second)
        throw SchemaError(path + ".name: duplicate sample '" + name + "'");
      sample_order_.push_back(name);
    }
    const Json& functors = array_field(doc, "functors", "model");
    for (std::size_t i = 0; i < functors.size(); ++i) {
      const std::string path = at("functors", i);
      const std::string name = string_field(functors[i], "name", path);
      claim_name(name, path + ".name");
      functor_entries_.emplace(name, Pending{&functors[i], path});
      functor_order_.push_back(name);
    }

    for (const auto& name : dependent_order_) resolve_dependent(name);
    for (const auto& name : material_order_) resolve_material(name);
    for (const auto& name : sample_order_) resolve_sample(name);
    for (const auto& name : functor_order_) resolve_functor(name);

    for (const auto& name : dependent_order_) m_.dependents_.push_back({name, dependents_.at(name)});
    for (const auto& name : material_order_) m_.materials_.push_back(materials_.at(name));
    for (const auto& name : sample_order_) m_.samples_.push_back({name, samples_.at(name)});
    for (const auto& name : functor_order_) m_.functors_.push_back(functors_.at(name));

    build_datasets();
    build_models();
    build_fit();
  }

 private:
  struct Pending {
    const Json* json;
    std::string path;
  };

  void claim_name(const std::string& name, const std::string& path) {
    if (name.empty()) throw SchemaError(path + ": empty name");
    if (!names_.insert(name).second) throw SchemaError(path + ": duplicate name '" + name + "'");
  }

  void declare(const char* section, std::map<std::string, Pending>& entries,
               std::vector<std::string>& order) {
    const Json& list = array_field(m_.doc_, section, "model");
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string path = at(section, i);
      const std::string name = string_field(list[i], "name", path);
      if (!entries.emplace(name, Pending{&list[i], path}).second)
        throw SchemaError(path + ".name: duplicate name '" + name + "'");
      order.push_back(name);
    }
  }

  void collect_variables() {
    std::vector<std::pair<std::string, std::string>> found;
    if (const Json* v = field(m_.doc_, "variables"))
      for (const auto& n : string_list(*v, "variables")) found.emplace_back(n, "variables");
    auto scan = [&](const Json& list, const std::string& section) {
      if (!list.is_array()) return;
      for (std::size_t i = 0; i < list.size(); ++i) {
        if (!list[i].is_object()) continue;
        const std::string path = at(section, i);
        if (const Json* v = field(list[i], "variables"))
          for (const auto& n : string_list(*v, path + ".variables")) found.emplace_back(n, path);
        if (const Json* v = field(list[i], "variable"); v && v->is_string())
          found.emplace_back(v->get<std::string>(), path);
      }
    };
    scan(array_field(m_.doc_, "functors", "model"), "functors");
    if (const Json* one = field(m_.doc_, "sample"))
      scan(Json::array({*one}), "sample");
    else
      scan(array_field(m_.doc_, "samples", "model"), "samples");
    for (const auto& [name, path] : found) {
      if (env_.count(name)) continue;
      claim_name(name, path + ".variables");
      Variable v(name);
      m_.variables_.push_back(v);
      env_.emplace(name, Expr(v));
      variables_.emplace(name, v);
    }
  }

  void declare_parameters() {
    const Json& list = array_field(m_.doc_, "parameters", "model");
    std::set<std::string> ids;
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string path = at("parameters", i);
      const Json& j = list[i];
      const std::string name = string_field(j, "name", path);
      claim_name(name, path + ".name");
      if (field(j, "expr")) {
        check_keys(j, path, {"name", "expr", "units"});
        dependent_entries_.emplace(name, Pending{&j, path});
        dependent_order_.push_back(name);
        continue;
      }
      check_keys(j, path, {"id", "name", "raw_value", "scale", "error", "fixed", "bounds", "units"});
      const double raw = number_field(j, "raw_value", path);
      const double scale = number_field(j, "scale", path, 1.0);
      if (!(scale != 0.0) || !std::isfinite(scale))
        throw SchemaError(path + ".scale: must be finite and nonzero");
      ParameterUpdate u = parse_update(j, path, true);
      std::optional<Bounds> bounds = u.bounds ? *u.bounds : std::nullopt;
      try {
        Parameter p(name, raw, scale, std::nullopt, bool_field(j, "fixed", path, false),
                    string_field(j, "units", path, ""));
        p.set_id(string_field(j, "id", path, "p" + std::to_string(i)));
        if (!ids.insert(p.id()).second) throw SchemaError(path + ".id: duplicate id '" + p.id() + "'");
        if (bounds && !bounds->contains(raw))
          throw SchemaError(path + ".raw_value: outside bounds");
        p.set_bounds(bounds);
        if (u.error) p.set_error(*u.error);
        m_.parameters_.push_back(p);
        env_.emplace(name, Expr(p));
        params_by_name_.emplace(name, p);
      } catch (const ValueError& e) {
        throw SchemaError(path + ": " + e.what());
      }
    }
  }

  // Cycle guard shared by every lazily built entity.
  class Visit {
   public:
    Visit(ModelFileBuilder& b, std::string key) : b_(b) {
      auto& stack = b_.visiting_;
      if (std::find(stack.begin(), stack.end(), key) != stack.end()) {
        std::string chain;
        bool on = false;
        for (const auto& s : stack) {
          if (s == key) on = true;
          if (on) chain += s + " -> ";
        }
        throw SchemaError("reference cycle: " + chain + key);
      }
      stack.push_back(std::move(key));
    }
    ~Visit() { b_.visiting_.pop_back(); }

   private:
    ModelFileBuilder& b_;
  };

  Expr parse_expr(const std::string& text, const std::string& path) {
    for (const auto& id : identifiers(text)) {
      if (env_.count(id)) continue;
      if (dependent_entries_.count(id))
        resolve_dependent(id);
      else if (functor_entries_.count(id))
        resolve_functor(id);
    }
    try {
      return parse(text, env_);
    } catch (const ParseError& e) {
      throw SchemaError(path + ": " + e.what());
    } catch (const ValueError& e) {
      throw SchemaError(path + ": " + e.what());
    }
  }

  Expr expr_value(const Json& j, const std::string& path) {
    if (j.is_number()) return Expr(j.get<double>());
    if (j.is_string()) return parse_expr(j.get<std::string>(), path);
    throw SchemaError(path + ": expected a number or an expression string");
  }

  Expr expr_field(const Json& j, const char* key, const std::string& path,
                  std::optional<double> fallback = std::nullopt) {
    const Json* f = field(j, key);
    if (!f) {
      if (fallback) return Expr(*fallback);
      throw SchemaError(path + "." + key + ": required");
    }
    return expr_value(*f, path + "." + key);
  }

  Variable variable(const std::string& name, const std::string& path) {
    auto it = variables_.find(name);
    if (it == variables_.end()) throw SchemaError(path + ": unknown variable '" + name + "'");
    return it->second;
  }

  void resolve_dependent(const std::string& name) {
    if (dependents_.count(name)) return;
    Visit guard(*this, name);
    const Pending& p = dependent_entries_.at(name);
    Expr e = expr_field(*p.json, "expr", p.path);
    if (e.arity() != 0) throw SchemaError(p.path + ".expr: dependent parameters cannot use variables");
    dependents_.emplace(name, e);
    env_.emplace(name, e);
  }

  const Material& resolve_material(const std::string& name, const std::string& from = "") {
    if (auto it = materials_.find(name); it != materials_.end()) return it->second;
    auto entry = material_entries_.find(name);
    if (entry == material_entries_.end())
      throw SchemaError(from + ": unknown material '" + name + "'");
    Visit guard(*this, "material " + name);
    const auto& [j, path] = entry->second;
    check_keys(*j, path, {"name", "sld_re", "sld_im"});
    try {
      Material m = make_material(name, expr_field(*j, "sld_re", path),
                                 expr_field(*j, "sld_im", path, 0.0));
      return materials_.emplace(name, std::move(m)).first->second;
    } catch (const ValueError& e) {
      throw SchemaError(path + ": " + e.what());
    }
  }

  Material material_ref(const Json& j, const char* key, const std::string& path,
                        bool optional = false) {
    const Json* f = field(j, key);
    if (!f && optional) return make_material("vacuum", 0.0);
    const std::string name = string_field(j, key, path);
    return resolve_material(name, path + "." + key);
  }

  Layer layer_entry(const Json& j, const std::string& path) {
    check_keys(j, path, {"name", "material", "thickness", "roughness", "msld"});
    try {
      return make_layer(material_ref(j, "material", path), expr_field(j, "thickness", path),
                        expr_field(j, "roughness", path, 0.0), expr_field(j, "msld", path, 0.0),
                        string_field(j, "name", path, ""));
    } catch (const ValueError& e) {
      throw SchemaError(path + ": " + e.what());
    }
  }

  Multilayer multilayer_entry(const std::string& name, const Json& j, const std::string& path) {
    check_keys(j, path, {"name", "type", "ambient", "substrate", "layers"});
    Material ambient = material_ref(j, "ambient", path, true);
    const Json* sub = field(j, "substrate");
    if (!sub) throw SchemaError(path + ".substrate: required");
    Layer substrate;
    try {
      if (sub->is_string()) {
        substrate = make_layer(resolve_material(sub->get<std::string>(), path + ".substrate"), 0.0);
      } else {
        check_keys(*sub, path + ".substrate", {"material", "roughness", "msld"});
        substrate = make_layer(material_ref(*sub, "material", path + ".substrate"), 0.0,
                               expr_field(*sub, "roughness", path + ".substrate", 0.0),
                               expr_field(*sub, "msld", path + ".substrate", 0.0), "substrate");
      }
    } catch (const ValueError& e) {
      throw SchemaError(path + ".substrate: " + e.what());
    }
    Multilayer ml(name, ambient, substrate);
    const Json& layers = array_field(j, "layers", path);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string lp = at(path + ".layers", i);
      if (layers[i].is_object() && layers[i].contains("repeats")) {
        check_keys(layers[i], lp, {"repeats", "layers"});
        Stack st;
        st.repeats = expr_field(layers[i], "repeats", lp);
        const Json& inner = array_field(layers[i], "layers", lp);
        if (inner.empty()) throw SchemaError(lp + ".layers: a stack needs at least one layer");
        for (std::size_t k = 0; k < inner.size(); ++k)
          st.layers.push_back(layer_entry(inner[k], at(lp + ".layers", k)));
        try {
          ml.add(std::move(st));
        } catch (const ValueError& e) {
          throw SchemaError(lp + ": " + e.what());
        }
      } else {
        ml.add(layer_entry(layers[i], lp));
      }
    }
    return ml;
  }

  Position position_entry(const Json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 3) throw SchemaError(path + ": expected [x, y, z]");
    return Position{expr_value(j[0], path + "[0]"), expr_value(j[1], path + "[1]"),
                    expr_value(j[2], path + "[2]")};
  }

  Potential potential_entry(const Json& j, const std::string& path) {
    check_keys(j, path, {"name", "type", "variables", "terms"});
    const Json* vs = field(j, "variables");
    if (!vs) throw SchemaError(path + ".variables: required");
    const auto names = string_list(*vs, path + ".variables");
    if (names.size() != 3) throw SchemaError(path + ".variables: expected three names");
    const Variable qx = variable(names[0], path + ".variables");
    const Variable qy = variable(names[1], path + ".variables");
    const Variable qz = variable(names[2], path + ".variables");
    Potential total(qx, qy, qz);
    const Json& terms = array_field(j, "terms", path);
    if (terms.empty()) throw SchemaError(path + ".terms: at least one term required");
    for (std::size_t i = 0; i < terms.size(); ++i) {
      const std::string tp = at(path + ".terms", i);
      const Json& t = terms[i];
      check_keys(t, tp, {"shape", "material", "positions", "op", "factor"});
      const Material mat = material_ref(t, "material", tp);
      std::vector<Position> positions;
      if (const Json* ps = field(t, "positions")) {
        if (!ps->is_array() || ps->empty())
          throw SchemaError(tp + ".positions: expected a non-empty array");
        for (std::size_t k = 0; k < ps->size(); ++k)
          positions.push_back(position_entry((*ps)[k], at(tp + ".positions", k)));
      } else {
        positions.push_back(Position{});
      }
      const Json* shape = field(t, "shape");
      if (!shape) throw SchemaError(tp + ".shape: required");
      const std::string sp = tp + ".shape";
      const std::string type = string_field(*shape, "type", sp);
      std::optional<Potential> term;
      try {
        if (type == "box") {
          check_keys(*shape, sp, {"type", "size"});
          const Json* size = field(*shape, "size");
          if (!size || !size->is_array() || size->size() != 3)
            throw SchemaError(sp + ".size: expected [wx, wy, wz]");
          term = box(qx, qy, qz, mat, expr_value((*size)[0], sp + ".size[0]"),
                     expr_value((*size)[1], sp + ".size[1]"),
                     expr_value((*size)[2], sp + ".size[2]"), positions);
        } else if (type == "polyhedron") {
          check_keys(*shape, sp, {"type", "vertices", "faces"});
          std::vector<Point3> vertices;
          std::vector<std::vector<std::size_t>> faces;
          try {
            for (const auto& v : array_field(*shape, "vertices", sp))
              vertices.push_back(v.get<Point3>());
            for (const auto& f : array_field(*shape, "faces", sp))
              faces.push_back(f.get<std::vector<std::size_t>>());
          } catch (const nlohmann::json::exception&) {
            throw SchemaError(sp + ": vertices must be [x, y, z] numbers, faces index lists");
          }
          term = polyhedron(qx, qy, qz, mat,
                            std::make_shared<const Polyhedron>(std::move(vertices), std::move(faces)),
                            positions);
        } else {
          throw SchemaError(sp + ".type: unknown shape '" + type + "' (expected box or polyhedron)");
        }
        if (const Json* f = field(t, "factor")) *term = expr_value(*f, tp + ".factor") * *term;
        const std::string op = string_field(t, "op", tp, "add");
        if (op != "add" && op != "subtract")
          throw SchemaError(tp + ".op: expected add or subtract");
        total = combine(total, op == "add" ? CombineOp::add : CombineOp::subtract, *term);
      } catch (const ValueError& e) {
        throw SchemaError(tp + ": " + e.what());
      }
    }
    return total;
  }

  const Sample& resolve_sample(const std::string& name, const std::string& from = "") {
    if (auto it = samples_.find(name); it != samples_.end()) return it->second;
    auto entry = sample_entries_.find(name);
    if (entry == sample_entries_.end()) throw SchemaError(from + ": unknown sample '" + name + "'");
    Visit guard(*this, "sample " + name);
    const auto& [j, path] = entry->second;
    const std::string type = string_field(*j, "type", path);
    if (type == "multilayer")
      return samples_.emplace(name, multilayer_entry(name, *j, path)).first->second;
    if (type == "potential")
      return samples_.emplace(name, potential_entry(*j, path)).first->second;
    throw SchemaError(path + ".type: unknown sample type '" + type +
                      "' (expected multilayer or potential)");
  }

  template <class T>
  const T& sample_as(const Json& j, const std::string& path, const char* what) {
    const std::string name = string_field(j, "sample", path);
    const Sample& s = resolve_sample(name, path + ".sample");
    if (const T* v = std::get_if<T>(&s)) return *v;
    throw SchemaError(path + ".sample: '" + name + "' is not a " + what);
  }

  const Functor& functor_ref(const Json& j, const char* key, const std::string& path) {
    const std::string name = string_field(j, key, path);
    if (!functor_entries_.count(name)) throw SchemaError(path + "." + key + ": unknown functor '" + name + "'");
    resolve_functor(name);
    return functors_.at(name);
  }

  void resolve_functor(const std::string& name) {
    if (functors_.count(name)) return;
    Visit guard(*this, name);
    const auto& [jp, path] = functor_entries_.at(name);
    const Json& j = *jp;
    const std::string type = string_field(j, "type", path, "expr");
    std::optional<Functor> f;
    try {
      if (type == "expr") {
        check_keys(j, path, {"name", "type", "expr", "variables", "grid"});
        Expr body = expr_field(j, "expr", path);
        if (const Json* vs = field(j, "variables")) {
          std::vector<Variable> vars;
          for (const auto& n : string_list(*vs, path + ".variables"))
            vars.push_back(variable(n, path + ".variables"));
          f.emplace(name, body, std::move(vars));
        } else {
          f.emplace(name, body);
        }
      } else if (type == "specrefl" || type == "pnrspec") {
        const bool pnr = type == "pnrspec";
        if (pnr)
          check_keys(j, path, {"name", "type", "sample", "variable", "formalism", "p_i", "p_f", "grid"});
        else
          check_keys(j, path, {"name", "type", "sample", "variable", "formalism", "grid"});
        const Multilayer& s = sample_as<Multilayer>(j, path, "multilayer");
        const Variable q = variable(string_field(j, "variable", path, "q"), path + ".variable");
        const Formalism form = formalism_from(string_field(j, "formalism", path, "parratt"), path + ".formalism");
        if (pnr)
          f = pnrspec(q, s, expr_field(j, "p_i", path, 1.0), expr_field(j, "p_f", path, 1.0), form, name);
        else
          f = specrefl(q, s, form, name);
      } else if (type == "lattice") {
        check_keys(j, path, {"name", "type", "variable", "period", "count", "grid"});
        const Variable v = variable(string_field(j, "variable", path), path + ".variable");
        const Json* count = field(j, "count");
        if (!count || !count->is_number_integer()) throw SchemaError(path + ".count: expected an integer");
        f = lattice(v, expr_field(j, "period", path), count->get<int>(), name);
      } else if (type == "formfactor") {
        check_keys(j, path, {"name", "type", "sample", "grid"});
        const Potential& p = sample_as<Potential>(j, path, "potential");
        const auto& v = p.variables();
        f.emplace(name, form_factor(p), std::vector<Variable>{v[0], v[1], v[2]});
      } else if (type == "sas") {
        check_keys(j, path, {"name", "type", "sample", "lattice", "grid"});
        const Potential& p = sample_as<Potential>(j, path, "potential");
        if (field(j, "lattice"))
          f = sas(p, functor_ref(j, "lattice", path), name);
        else
          f = sas(p, Functor("unit", Expr(1.0), std::vector<Variable>{}), name);
      } else if (type == "integrate") {
        check_keys(j, path, {"name", "type", "functor", "variable", "from", "to", "method", "order",
                             "rel_tol", "abs_tol", "max_depth", "grid"});
        const Functor& inner = functor_ref(j, "functor", path);
        const Variable v = variable(string_field(j, "variable", path), path + ".variable");
        Functor r = integrate_variable(inner, v, expr_field(j, "from", path), expr_field(j, "to", path),
                                       integration_spec(j, path));
        f.emplace(name, r.body(), r.variables());
      } else if (type == "average") {
        check_keys(j, path, {"name", "type", "functor", "parameter", "fwhm", "span_sigmas", "method",
                             "order", "rel_tol", "abs_tol", "max_depth", "grid"});
        const Functor& inner = functor_ref(j, "functor", path);
        const std::string pname = string_field(j, "parameter", path);
        auto it = params_by_name_.find(pname);
        if (it == params_by_name_.end())
          throw SchemaError(path + ".parameter: unknown independent parameter '" + pname + "'");
        Functor r = average_parameter(inner, it->second, expr_field(j, "fwhm", path),
                                      integration_spec(j, path), number_field(j, "span_sigmas", path, 3.0));
        f.emplace(name, r.body(), r.variables());
      } else if (type == "convolve") {
        check_keys(j, path, {"name", "type", "functor", "variable", "fwhm", "span_sigmas", "method",
                             "order", "rel_tol", "abs_tol", "max_depth", "grid"});
        const Functor& inner = functor_ref(j, "functor", path);
        const Variable v = variable(string_field(j, "variable", path), path + ".variable");
        Functor r = convolve_variable(inner, v, expr_field(j, "fwhm", path), integration_spec(j, path),
                                      number_field(j, "span_sigmas", path, 3.0));
        f.emplace(name, r.body(), r.variables());
      } else {
        throw SchemaError(path + ".type: unknown functor type '" + type + "'");
      }
    } catch (const ValueError& e) {
      throw SchemaError(path + ": " + e.what());
    }
    if (const Json* g = field(j, "grid")) m_.grids_[name] = string_list(*g, path + ".grid");
    functors_.emplace(name, *f);
    env_.emplace(name, f->body());
  }

  void build_datasets() {
    const Json& list = array_field(m_.doc_, "datasets", "model");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string path = at("datasets", i);
      const Json& j = list[i];
      check_keys(j, path, {"name", "file", "columns", "comments", "coords", "intensity", "sigma", "mask"});
      const std::string name = string_field(j, "name", path);
      if (!seen.insert(name).second) throw SchemaError(path + ".name: duplicate dataset '" + name + "'");
      std::optional<DataSet> data;
      try {
        if (field(j, "file")) {
          if (field(j, "coords") || field(j, "intensity"))
            throw SchemaError(path + ": give either file or inline coords/intensity");
          std::filesystem::path file = string_field(j, "file", path);
          if (file.is_relative() && !base_.empty()) file = base_ / file;
          ColumnMap columns;
          if (field(j, "columns")) columns = ColumnMap::parse(string_field(j, "columns", path));
          std::vector<std::string> comments{"#"};
          if (const Json* c = field(j, "comments")) comments = string_list(*c, path + ".comments");
          DataSet loaded = load_text_file(file.string(), columns, comments);
          data.emplace(name, loaded.coords(), loaded.intensity(), loaded.sigma());
        } else {
          const Json* coords = field(j, "coords");
          const Json* inten = field(j, "intensity");
          if (!coords || !inten) throw SchemaError(path + ": need file or coords + intensity");
          std::vector<std::vector<double>> c;
          std::vector<double> y;
          std::optional<std::vector<double>> s;
          try {
            if (!coords->empty() && (*coords)[0].is_number())
              c.push_back(coords->get<std::vector<double>>());
            else
              c = coords->get<std::vector<std::vector<double>>>();
            y = inten->get<std::vector<double>>();
            if (const Json* sg = field(j, "sigma")) s = sg->get<std::vector<double>>();
          } catch (const nlohmann::json::exception&) {
            throw SchemaError(path + ": coords, intensity and sigma must be numeric arrays");
          }
          data.emplace(name, std::move(c), std::move(y), std::move(s));
        }
        const Json& mask = array_field(j, "mask", path);
        for (std::size_t k = 0; k < mask.size(); ++k) apply_mask(*data, mask[k], at(path + ".mask", k));
      } catch (const ValueError& e) {
        throw SchemaError(path + ": " + e.what());
      }
      m_.datasets_.push_back(std::make_shared<DataSet>(std::move(*data)));
    }
  }

  static void apply_mask(DataSet& d, const Json& j, const std::string& path) {
    check_keys(j, path, {"range", "box", "indices", "on"});
    const bool on = bool_field(j, "on", path, true);
    try {
      if (const Json* r = field(j, "range")) {
        const auto v = r->get<std::vector<std::size_t>>();
        if (v.size() != 2) throw SchemaError(path + ".range: expected [first, last]");
        d.mask_range(v[0], v[1], on);
      } else if (const Json* b = field(j, "box")) {
        std::vector<std::pair<double, double>> box;
        for (const auto& lh : b->get<std::vector<std::vector<double>>>()) {
          if (lh.size() != 2) throw SchemaError(path + ".box: expected [[lo, hi], ...]");
          box.emplace_back(lh[0], lh[1]);
        }
        d.mask_box(box, on);
      } else if (const Json* ix = field(j, "indices")) {
        const auto v = ix->get<std::vector<std::size_t>>();
        d.mask_indices(v, on);
      } else {
        throw SchemaError(path + ": expected range, box or indices");
      }
    } catch (const nlohmann::json::exception&) {
      throw SchemaError(path + ": malformed mask rule");
    }
  }

  void build_models() {
    const Json& list = array_field(m_.doc_, "models", "model");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string path = at("models", i);
      const Json& j = list[i];
      check_keys(j, path, {"name", "functor", "dataset", "scaling"});
      const std::string name = string_field(j, "name", path);
      if (!seen.insert(name).second) throw SchemaError(path + ".name: duplicate model '" + name + "'");
      const std::string fname = string_field(j, "functor", path);
      const Functor* f = m_.find_functor(fname);
      if (!f) throw SchemaError(path + ".functor: unknown functor '" + fname + "'");
      const std::string dname = string_field(j, "dataset", path);
      auto d = std::find_if(m_.datasets_.begin(), m_.datasets_.end(),
                            [&](const auto& p) { return p->name() == dname; });
      if (d == m_.datasets_.end()) throw SchemaError(path + ".dataset: unknown dataset '" + dname + "'");
      try {
        const Scaling sc = scaling_from_name(string_field(j, "scaling", path, "linear"));
        m_.models_.push_back(std::make_shared<Model>(name, *f, *d, sc));
      } catch (const ValueError& e) {
        throw SchemaError(path + ": " + e.what());
      }
    }
  }

  void build_fit() {
    const Json* fj = field(m_.doc_, "fit");
    if (!fj) return;
    m_.fit_ = parse_fit_config(*fj, "fit");
    for (const auto& n : m_.fit_.models)
      if (!m_.find_model(n)) throw SchemaError("fit.models: unknown model '" + n + "'");
  }

  ModelFile& m_;
  std::filesystem::path base_;
  Environment env_;
  std::set<std::string> names_;
  std::map<std::string, Variable> variables_;
  std::map<std::string, Parameter> params_by_name_;
  std::vector<std::string> visiting_;

  std::map<std::string, Pending> dependent_entries_, material_entries_, sample_entries_,
      functor_entries_;
  std::vector<std::string> dependent_order_, material_order_, sample_order_, functor_order_;
  Json sample_list_;
  std::string sample_path_;

  std::map<std::string, Expr> dependents_;
  std::map<std::string, Material> materials_;
  std::map<std::string, Sample> samples_;
  std::map<std::string, Functor> functors_;
};

FitConfig parse_fit_config(const Json& j, const std::string& path, FitConfig base) {
  check_keys(j, path, {"optimizer", "models", "lm", "de"});
  FitConfig c = base;
  try {
    if (field(j, "optimizer")) c.optimizer = optimizer_from_name(string_field(j, "optimizer", path));
  } catch (const ValueError& e) {
    throw SchemaError(path + ".optimizer: " + e.what());
  }
  if (const Json* ms = field(j, "models")) c.models = string_list(*ms, path + ".models");
  if (const Json* lm = field(j, "lm")) {
    const std::string p = path + ".lm";
    check_keys(*lm, p, {"max_iter", "gradient_tol", "step_tol", "lambda_init", "lambda_up",
                        "lambda_down", "estimate_errors"});
    c.lm.max_iter = int_field(*lm, "max_iter", p, c.lm.max_iter);
    c.lm.gradient_tol = number_field(*lm, "gradient_tol", p, c.lm.gradient_tol);
    c.lm.step_tol = number_field(*lm, "step_tol", p, c.lm.step_tol);
    c.lm.lambda_init = number_field(*lm, "lambda_init", p, c.lm.lambda_init);
    c.lm.lambda_up = number_field(*lm, "lambda_up", p, c.lm.lambda_up);
    c.lm.lambda_down = number_field(*lm, "lambda_down", p, c.lm.lambda_down);
    c.lm.estimate_errors = bool_field(*lm, "estimate_errors", p, c.lm.estimate_errors);
    try {
      c.lm.validate();
    } catch (const ValueError& e) {
      throw SchemaError(p + ": " + e.what());
    }
  }
  if (const Json* de = field(j, "de")) {
    const std::string p = path + ".de";
    check_keys(*de, p, {"population_size", "F", "Cr", "max_generations", "candidate_polish_iters",
                        "final_polish_iters", "seed", "tol", "estimate_errors"});
    c.de.population_size = int_field(*de, "population_size", p, c.de.population_size);
    c.de.F = number_field(*de, "F", p, c.de.F);
    c.de.Cr = number_field(*de, "Cr", p, c.de.Cr);
    c.de.max_generations = int_field(*de, "max_generations", p, c.de.max_generations);
    c.de.candidate_polish_iters = int_field(*de, "candidate_polish_iters", p, c.de.candidate_polish_iters);
    c.de.final_polish_iters = int_field(*de, "final_polish_iters", p, c.de.final_polish_iters);
    if (const Json* s = field(*de, "seed")) {
      if (!s->is_number_integer() || s->get<std::int64_t>() < 0) throw SchemaError(p + ".seed: expected a non-negative integer");
      c.de.seed = s->get<std::uint64_t>();
    }
    c.de.tol = number_field(*de, "tol", p, c.de.tol);
    c.de.estimate_errors = bool_field(*de, "estimate_errors", p, c.de.estimate_errors);
    try {
      c.de.validate();
    } catch (const ValueError& e) {
      throw SchemaError(p + ": " + e.what());
    }
  }
  return c;
}

ModelFile ModelFile::from_json(const Json& doc, const std::filesystem::path& base_dir) {
  ModelFile m;
  m.doc_ = doc;
  ModelFileBuilder b(m, base_dir);
  b.build();
  return m;
}

ModelFile ModelFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError(path.string() + ": cannot open model file");
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path.string() + ": invalid JSON: " + e.what());
  }
  return from_json(doc, path.parent_path());
}

Json ModelFile::to_json() const {
  Json out = doc_;
  if (!out.contains("parameters")) return out;
  Json& list = out["parameters"];
  std::size_t k = 0;
  for (auto& rec : list) {
    if (rec.contains("expr")) continue;
    const Parameter& p = parameters_.at(k++);
    const Json live = parameter_record(p);
    for (const char* key : {"id", "raw_value", "fixed", "bounds", "error"}) rec[key] = live[key];
  }
  return out;
}

const Parameter* ModelFile::find_parameter(std::string_view id) const {
  for (const auto& p : parameters_)
    if (p.id() == id) return &p;
  return nullptr;
}

const Functor* ModelFile::find_functor(std::string_view name) const {
  for (const auto& f : functors_)
    if (f.name() == name) return &f;
  return nullptr;
}

const NamedSample* ModelFile::find_sample(std::string_view name) const {
  for (const auto& s : samples_)
    if (s.name == name) return &s;
  return nullptr;
}

std::shared_ptr<Model> ModelFile::find_model(std::string_view name) const {
  for (const auto& m : models_)
    if (m->name() == name) return m;
  return nullptr;
}

std::vector<std::string> ModelFile::default_grid(std::string_view functor) const {
  auto it = grids_.find(functor);
  return it == grids_.end() ? std::vector<std::string>{} : it->second;
}

std::shared_ptr<const Objective> ModelFile::objective(const std::vector<std::string>& names) const {
  std::vector<std::shared_ptr<Model>> chosen;
  if (names.empty()) {
    chosen = models_;
  } else {
    for (const auto& n : names) {
      auto m = find_model(n);
      if (!m) throw SchemaError("fit.models: unknown model '" + n + "'");
      chosen.push_back(m);
    }
  }
  if (chosen.empty()) throw SchemaError("models: nothing to fit");
  if (chosen.size() == 1) return chosen.front();
  return std::make_shared<MultiModel>(std::move(chosen));
}

}  // namespace scatfit
