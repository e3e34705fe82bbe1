#include "scatfit/model.hpp"

#include <cmath>

namespace scatfit {

double Objective::chi2(bool scaled) const {
  const auto r = residuals(scaled);
  double s = 0.0;
  for (double x : r) s += x * x;
  return s / normalization();
}

std::string_view scaling_name(Scaling s) noexcept {
  switch (s) {
    case Scaling::linear: return "linear";
    case Scaling::log: return "log";
    case Scaling::q2: return "q2";
    case Scaling::q4: return "q4";
  }
  return "linear";
}

Scaling scaling_from_name(std::string_view name) {
  if (name == "linear" || name == "lin") return Scaling::linear;
  if (name == "log") return Scaling::log;
  if (name == "q2") return Scaling::q2;
  if (name == "q4") return Scaling::q4;
  throw ValueError("unknown scaling '" + std::string(name) + "' (expected linear, log, q2, q4)");
}

Model::Model(std::string name, Functor functor, std::shared_ptr<DataSet> data, Scaling scaling)
    : name_(std::move(name)), functor_(std::move(functor)), data_(std::move(data)), scaling_(scaling) {
  if (!data_) throw ValueError("model '" + name_ + "': no data");
  if (functor_.is_complex())
    throw ValueError("model '" + name_ + "': functor '" + functor_.name() +
                     "' is complex; fit an intensity such as norm(...)");
  if (functor_.arity() != data_->dims())
    throw ValueError("model '" + name_ + "': functor has " + std::to_string(functor_.arity()) +
                     " variables, data has " + std::to_string(data_->dims()) + " dimensions");
}

std::vector<double> Model::model_values(EvalDiagnostics* diag) const {
  if (data_->active_count() == 0) throw ValueError("model '" + name_ + "': empty active set");
  return functor_.evaluate(data_->active_coords(), diag);
}

std::vector<Parameter> Model::parameters() const { return free_parameters(functor_.body()); }

std::vector<double> Model::residuals(bool scaled, EvalDiagnostics* diag) const {
  const auto idx = data_->active_indices();
  const auto mod = model_values(diag);
  const auto& iexp = data_->intensity();
  const auto& sig = data_->sigma();
  const auto& coords = data_->coords();
  const Scaling mode = scaled ? scaling_ : Scaling::linear;
  std::vector<double> r(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const std::size_t i = idx[k];
    const double e = iexp[i], m = mod[k], s = sig[i];
    if (!std::isfinite(m))
      throw EvalError("model '" + name_ + "': non-finite model value at point " +
                      std::to_string(i));
    switch (mode) {
      case Scaling::linear:
        r[k] = (e - m) / s;
        break;
      case Scaling::log:
        if (!(e > 0))
          throw ValueError("model '" + name_ + "': log scaling needs positive intensity, point " +
                           std::to_string(i) + " has " + std::to_string(e));
        r[k] = (std::log(e) - std::log(m)) / (s / e);
        break;
      case Scaling::q2:
      case Scaling::q4: {
        double q2 = 0.0;
        for (const auto& c : coords) q2 += c[i] * c[i];
        const double w = mode == Scaling::q2 ? q2 : q2 * q2;
        r[k] = (w * e - w * m) / (w * s);
        break;
      }
    }
    if (!std::isfinite(r[k]))
      throw EvalError("model '" + name_ + "': non-finite residual at point " + std::to_string(i));
  }
  return r;
}

double Model::normalization() const {
  const std::size_t n = data_->active_count();
  const std::size_t m = parameters().size();
  if (n <= m)
    throw ValueError("model '" + name_ + "': " + std::to_string(n) + " active points for " +
                     std::to_string(m) + " free parameters");
  return static_cast<double>(n - m);
}

MultiModel::MultiModel(std::vector<std::shared_ptr<Model>> models) : models_(std::move(models)) {
  if (models_.empty()) throw ValueError("multi-model needs at least one model");
  for (const auto& m : models_)
    if (!m) throw ValueError("multi-model: null model");
}

std::vector<Parameter> MultiModel::parameters() const {
  std::vector<Expr> bodies;
  for (const auto& m : models_) bodies.push_back(m->functor().body());
  return free_parameters(bodies);
}

std::vector<double> MultiModel::residuals(bool scaled, EvalDiagnostics* diag) const {
  std::vector<double> out;
  for (const auto& m : models_) {
    auto r = m->residuals(scaled, diag);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

double MultiModel::normalization() const {
  std::size_t n = 0;
  for (const auto& m : models_) n += m->data().active_count();
  const std::size_t p = parameters().size();
  if (n <= p)
    throw ValueError(std::to_string(n) + " active points for " + std::to_string(p) +
                     " free parameters");
  return static_cast<double>(n - p);
}

}  // namespace scatfit
