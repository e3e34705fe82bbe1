#include "scatfit/records.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <unordered_map>
#include <vector>

namespace scatfit {

namespace {

double number_field(const Json& j, const std::string& path) {
  if (!j.is_number()) throw SchemaError(path + ": expected a number");
  return j.get<double>();
}

}  // namespace

Json parameter_record(const Parameter& p) {
  Json r;
  r["id"] = p.id();
  r["name"] = p.name();
  r["raw_value"] = p.raw_value();
  r["scale"] = p.scale();
  if (auto e = p.error())
    r["error"] = *e;
  else
    r["error"] = nullptr;
  r["fixed"] = p.fixed();
  if (auto b = p.bounds())
    r["bounds"] = Json::array({b->lo, b->hi});
  else
    r["bounds"] = nullptr;
  r["units"] = p.units();
  return r;
}

ParameterUpdate parse_update(const Json& j, const std::string& path, bool record) {
  ParameterUpdate u;
  if (j.is_number()) {
    u.raw_value = j.get<double>();
    return u;
  }
  if (!j.is_object()) throw SchemaError(path + ": expected a number or an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    const bool known = key == "raw_value" || key == "fixed" || key == "bounds" || key == "error" ||
                       (record && (key == "id" || key == "name" || key == "scale" || key == "units"));
    if (!known) throw SchemaError(path + "." + key + ": unknown field");
  }
  if (auto it = j.find("raw_value"); it != j.end()) u.raw_value = number_field(*it, path + ".raw_value");
  if (auto it = j.find("fixed"); it != j.end()) {
    if (!it->is_boolean()) throw SchemaError(path + ".fixed: expected true or false");
    u.fixed = it->get<bool>();
  }
  if (auto it = j.find("bounds"); it != j.end()) {
    if (it->is_null()) {
      u.bounds = std::optional<Bounds>{};
    } else {
      if (!it->is_array() || it->size() != 2)
        throw SchemaError(path + ".bounds: expected [lo, hi] or null");
      const double lo = number_field((*it)[0], path + ".bounds[0]");
      const double hi = number_field((*it)[1], path + ".bounds[1]");
      if (!(lo <= hi)) throw SchemaError(path + ".bounds: lo must not exceed hi");
      u.bounds = std::optional<Bounds>{Bounds{lo, hi}};
    }
  }
  if (auto it = j.find("error"); it != j.end()) {
    if (it->is_null())
      u.error = std::optional<double>{};
    else
      u.error = std::optional<double>{number_field(*it, path + ".error")};
  }
  return u;
}

void validate_update(const Parameter& p, const ParameterUpdate& u) {
  const double raw = u.raw_value.value_or(p.raw_value());
  if (!std::isfinite(raw)) throw ValueError("parameter '" + p.name() + "': value must be finite");
  const std::optional<Bounds> b = u.bounds ? *u.bounds : p.bounds();
  if (b && !b->contains(raw))
    throw ValueError("parameter '" + p.name() + "': raw value " + std::to_string(raw) +
                     " outside bounds [" + std::to_string(b->lo) + ", " + std::to_string(b->hi) +
                     "]");
}

void apply_update(Parameter& p, const ParameterUpdate& u) {
  validate_update(p, u);
  const std::optional<Bounds> bounds = u.bounds ? *u.bounds : p.bounds();
  // Widen first so that a move into new bounds never trips the old ones.
  p.set_bounds(std::nullopt);
  if (u.raw_value) p.set_raw_value(*u.raw_value);
  p.set_bounds(bounds);
  if (u.fixed) p.set_fixed(*u.fixed);
  if (u.error) p.set_error(*u.error);
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Json snapshot_document(std::span<const Parameter> params, const FitResult* fit) {
  Json doc;
  doc["format"] = "scatfit-parameters";
  doc["version"] = 1;
  doc["timestamp"] = utc_timestamp();
  if (fit) {
    doc["chi2"] = fit->chi2();
    doc["status"] = std::string(status_name(fit->status));
  } else {
    doc["chi2"] = nullptr;
    doc["status"] = nullptr;
  }
  Json list = Json::array();
  for (const auto& p : params) list.push_back(parameter_record(p));
  doc["parameters"] = std::move(list);
  return doc;
}

void apply_snapshot(const Json& doc, std::span<const Parameter> params) {
  if (!doc.is_object()) throw SchemaError("snapshot: expected an object");
  if (auto f = doc.find("format"); f != doc.end() && *f != "scatfit-parameters")
    throw SchemaError("snapshot.format: expected \"scatfit-parameters\"");
  if (auto v = doc.find("version"); v != doc.end() && *v != 1)
    throw SchemaError("snapshot.version: unsupported version");
  auto it = doc.find("parameters");
  if (it == doc.end() || !it->is_array()) throw SchemaError("snapshot.parameters: expected an array");
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < params.size(); ++i) by_id.emplace(params[i].id(), i);

  std::vector<std::pair<std::size_t, ParameterUpdate>> updates;
  for (std::size_t k = 0; k < it->size(); ++k) {
    const Json& rec = (*it)[k];
    const std::string path = "snapshot.parameters[" + std::to_string(k) + "]";
    if (!rec.is_object() || !rec.contains("id") || !rec["id"].is_string())
      throw SchemaError(path + ".id: expected a string");
    const std::string id = rec["id"].get<std::string>();
    auto found = by_id.find(id);
    if (found == by_id.end()) throw SchemaError(path + ".id: unknown parameter id '" + id + "'");
    const Parameter& p = params[found->second];
    if (auto s = rec.find("scale"); s != rec.end() && s->is_number() && s->get<double>() != p.scale())
      throw SchemaError(path + ".scale: does not match parameter '" + p.name() + "'");
    ParameterUpdate u = parse_update(rec, path, true);
    validate_update(p, u);
    updates.emplace_back(found->second, std::move(u));
  }
  for (auto& [i, u] : updates) {
    Parameter p = params[i];
    apply_update(p, u);
  }
}

}  // namespace scatfit
