#pragma once

// Levenberg-Marquardt and differential evolution over an Objective's free
// parameters, error estimation, and an interruptible background controller.
//
// Optimizers work on raw parameter values and minimize the raw residual sum
// S = sum r^2; everything they report (history, events, result) is the
// normalized chi^2 = S / objective.normalization().

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "scatfit/model.hpp"

namespace scatfit {

struct LMOptions {
  int max_iter = 200;
  double gradient_tol = 1e-12;
  double step_tol = 1e-12;
  double lambda_init = 1e-3;
  double lambda_up = 10.0;
  double lambda_down = 10.0;
  bool estimate_errors = true;
  void validate() const;
};

struct DEOptions {
  int population_size = 40;
  double F = 0.8;
  double Cr = 0.9;
  int max_generations = 200;
  int candidate_polish_iters = 0;
  int final_polish_iters = 100;
  std::uint64_t seed = 0;
  // Stop early once max - min population cost <= tol * (1 + |min|). 0 disables.
  double tol = 0.0;
  bool estimate_errors = true;
  void validate() const;
};

enum class FitStatus { converged, max_iter, interrupted, failed };
std::string_view status_name(FitStatus s) noexcept;

struct ProgressEvent {
  int iteration = 0;
  double chi2 = 0.0;
  double elapsed = 0.0;  // seconds since the fit started
  std::vector<double> raw_values;
};

using ProgressCallback = std::function<void(const ProgressEvent&)>;

struct FitHooks {
  const std::atomic<bool>* interrupt = nullptr;
  ProgressCallback progress;
};

struct FitResult {
  std::vector<Parameter> parameters;
  std::vector<double> raw_values;
  // Raw-value units; nullopt when the parameter is unidentifiable or errors
  // were not estimated.
  std::vector<std::optional<double>> errors;
  // Initial chi^2 followed by one entry per iteration (LM) or generation (DE).
  std::vector<double> chi2_history;
  FitStatus status = FitStatus::failed;
  std::size_t n_evaluations = 0;
  std::string message;
  double chi2() const { return chi2_history.empty() ? 0.0 : chi2_history.back(); }
};

FitResult fit_lm(const Objective& target, const LMOptions& opts = {}, const FitHooks& hooks = {});
FitResult fit_de(const Objective& target, const DEOptions& opts = {}, const FitHooks& hooks = {});

struct ErrorEstimate {
  std::vector<Parameter> parameters;
  std::vector<std::optional<double>> sigma;  // raw-value units
  std::vector<std::vector<double>> covariance;
  double chi2_reduced = 0.0;
};

// covariance = chi2_red * (J^T J)^-1 from central differences of the unscaled
// residuals at the current parameter values. Writes sigma back to each
// Parameter's error; unidentifiable parameters get no error.
ErrorEstimate estimate_errors(const Objective& target);

enum class Difference { forward, central };

// Finite-difference Jacobian d r_i / d raw_j at the current parameter values
// (row i, column j), using the optimizers' step rules. Parameters are left
// unchanged.
std::vector<std::vector<double>> numeric_jacobian(const Objective& target,
                                                  Difference kind = Difference::forward,
                                                  bool scaled = true);

// Residual vector from a plain callback, for optimizing test functions and
// hand-written costs. normalization() is 1, so chi^2 equals the raw sum.
class CallbackObjective : public Objective {
 public:
  using Fn = std::function<std::vector<double>(std::span<const double> values)>;
  CallbackObjective(std::vector<Parameter> params, Fn fn);
  std::vector<Parameter> parameters() const override;
  std::vector<double> residuals(bool scaled = true, EvalDiagnostics* diag = nullptr) const override;
  double normalization() const override { return 1.0; }

 private:
  std::vector<Parameter> params_;
  Fn fn_;
};

enum class Optimizer { lm, de };
Optimizer optimizer_from_name(std::string_view name);

// Runs one fit on a background thread. At most one running fit may own any
// given parameter; a second start on an overlapping pool throws FitError.
class FitController {
 public:
  FitController(std::shared_ptr<const Objective> target, Optimizer optimizer, LMOptions lm = {},
                DEOptions de = {});
  ~FitController();
  FitController(const FitController&) = delete;
  FitController& operator=(const FitController&) = delete;

  void start();
  void interrupt() noexcept { interrupt_.store(true); }
  bool running() const noexcept { return running_.load(); }
  bool finished() const;
  // Blocks until the fit ends.
  const FitResult& wait();

  // Progress events in iteration order, from index `from` on.
  std::vector<ProgressEvent> events(std::size_t from = 0) const;
  // Waits until more than `seen` events exist or the fit has finished.
  bool wait_for_events(std::size_t seen, std::chrono::milliseconds timeout) const;
  std::optional<FitResult> result() const;

 private:
  void run();

  std::shared_ptr<const Objective> target_;
  Optimizer optimizer_;
  LMOptions lm_;
  DEOptions de_;
  std::vector<const ParameterNode*> pool_;
  std::atomic<bool> interrupt_{false};
  std::atomic<bool> running_{false};
  bool started_ = false;
  mutable std::mutex mutex_;
  mutable std::condition_variable cv_;
  std::vector<ProgressEvent> events_;
  std::optional<FitResult> result_;
  std::thread worker_;
};

}  // namespace scatfit
