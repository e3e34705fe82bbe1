#pragma once

// Parameter save/load records and the snapshot document shared by the CLI
// and the service:
//
//   {"format": "scatfit-parameters", "version": 1, "timestamp": "...",
//    "chi2": 1.2, "status": "converged", "parameters": [record, ...]}
//
// A record is {id, name, raw_value, scale, error, fixed, bounds, units} with
// bounds = [lo, hi] or null and error = number or null.

#include <optional>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "scatfit/expr.hpp"
#include "scatfit/fit.hpp"

namespace scatfit {

using Json = nlohmann::ordered_json;

Json parameter_record(const Parameter& p);

// Fields of a record or a PATCH entry that may be changed on a live
// parameter. Absent fields are left alone.
struct ParameterUpdate {
  std::optional<double> raw_value;
  std::optional<bool> fixed;
  std::optional<std::optional<Bounds>> bounds;
  std::optional<std::optional<double>> error;
};

// Throws SchemaError on malformed or unknown fields. `path` prefixes
// messages. With `record`, the informational fields of a full record (id,
// name, scale, units) are accepted and ignored.
ParameterUpdate parse_update(const Json& j, const std::string& path, bool record = false);
// Throws ValueError (nothing applied) when the new raw value would fall
// outside the new bounds.
void validate_update(const Parameter& p, const ParameterUpdate& u);
void apply_update(Parameter& p, const ParameterUpdate& u);

Json snapshot_document(std::span<const Parameter> params, const FitResult* fit = nullptr);

// Applies every record whose id matches one of `params`. All records are
// validated before anything changes. Unknown ids throw SchemaError naming the
// id; bounds violations throw ValueError.
void apply_snapshot(const Json& doc, std::span<const Parameter> params);

std::string utc_timestamp();

}  // namespace scatfit
