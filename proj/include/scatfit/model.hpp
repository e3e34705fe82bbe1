#pragma once

// Functor-vs-data comparison: scaled residuals and the normalized chi^2,
//   chi2 = sum r_i^2 / (N_active - M),
// for single models and for several models fitted together.

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "scatfit/data.hpp"
#include "scatfit/expr.hpp"

namespace scatfit {

// What optimizers minimize: a residual vector over a pool of free parameters.
class Objective {
 public:
  virtual ~Objective() = default;
  // Free parameter pool, each node once, in a stable order.
  virtual std::vector<Parameter> parameters() const = 0;
  // scaled = false forces plain (I_exp - I_mod) / sigma residuals.
  virtual std::vector<double> residuals(bool scaled = true,
                                        EvalDiagnostics* diag = nullptr) const = 0;
  // Divisor turning the raw residual sum into the reported chi^2.
  virtual double normalization() const = 0;

  double chi2(bool scaled = true) const;
};

// Residual transforms (T, T_sigma):
//   linear (I, sigma); log (ln I, sigma / I_exp); q2 (q^2 I, q^2 sigma);
//   q4 (q^4 I, q^4 sigma), q = euclidean norm of the coordinate tuple.
enum class Scaling { linear, log, q2, q4 };

std::string_view scaling_name(Scaling s) noexcept;
Scaling scaling_from_name(std::string_view name);

class Model : public Objective {
 public:
  Model(std::string name, Functor functor, std::shared_ptr<DataSet> data,
        Scaling scaling = Scaling::linear);

  const std::string& name() const noexcept { return name_; }
  const Functor& functor() const noexcept { return functor_; }
  DataSet& data() noexcept { return *data_; }
  const DataSet& data() const noexcept { return *data_; }
  const std::shared_ptr<DataSet>& data_ptr() const noexcept { return data_; }
  Scaling scaling() const noexcept { return scaling_; }
  void set_scaling(Scaling s) noexcept { scaling_ = s; }

  // Model intensities at the active points.
  std::vector<double> model_values(EvalDiagnostics* diag = nullptr) const;

  std::vector<Parameter> parameters() const override;
  std::vector<double> residuals(bool scaled = true, EvalDiagnostics* diag = nullptr) const override;
  double normalization() const override;

 private:
  std::string name_;
  Functor functor_;
  std::shared_ptr<DataSet> data_;
  Scaling scaling_;
};

// Several models sharing one parameter pool; residuals are concatenated in
// model order.
class MultiModel : public Objective {
 public:
  explicit MultiModel(std::vector<std::shared_ptr<Model>> models);

  const std::vector<std::shared_ptr<Model>>& models() const noexcept { return models_; }

  std::vector<Parameter> parameters() const override;
  std::vector<double> residuals(bool scaled = true, EvalDiagnostics* diag = nullptr) const override;
  double normalization() const override;

 private:
  std::vector<std::shared_ptr<Model>> models_;
};

}  // namespace scatfit
