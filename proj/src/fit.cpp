#include "scatfit/fit.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

namespace scatfit {

void LMOptions::validate() const {
  if (max_iter < 0) throw ValueError("LM max_iter must be >= 0");
  if (!(lambda_init > 0) || !(lambda_up > 1) || !(lambda_down > 1))
    throw ValueError("LM damping: need lambda_init > 0, lambda_up > 1, lambda_down > 1");
  if (gradient_tol < 0 || step_tol < 0) throw ValueError("LM tolerances must be >= 0");
}

void DEOptions::validate() const {
  if (population_size < 4) throw ValueError("DE population_size must be >= 4");
  if (!(F > 0)) throw ValueError("DE mutation factor F must be > 0");
  if (!(Cr >= 0 && Cr <= 1)) throw ValueError("DE crossover probability Cr must be in [0, 1]");
  if (max_generations < 0 || candidate_polish_iters < 0 || final_polish_iters < 0)
    throw ValueError("DE iteration counts must be >= 0");
  if (tol < 0) throw ValueError("DE tol must be >= 0");
}

std::string_view status_name(FitStatus s) noexcept {
  switch (s) {
    case FitStatus::converged: return "converged";
    case FitStatus::max_iter: return "max-iter";
    case FitStatus::interrupted: return "interrupted";
    case FitStatus::failed: return "failed";
  }
  return "failed";
}

Optimizer optimizer_from_name(std::string_view name) {
  if (name == "lm") return Optimizer::lm;
  if (name == "de") return Optimizer::de;
  throw ValueError("unknown optimizer '" + std::string(name) + "' (expected lm or de)");
}

namespace {

using Clock = std::chrono::steady_clock;

// The free parameters as a box in raw-value space.
class Space {
 public:
  explicit Space(std::vector<Parameter> params) : params_(std::move(params)) {
    for (const auto& p : params_) {
      const auto b = p.bounds();
      lo_.push_back(b ? b->lo : -std::numeric_limits<double>::infinity());
      hi_.push_back(b ? b->hi : std::numeric_limits<double>::infinity());
    }
  }
  std::size_t size() const { return params_.size(); }
  const std::vector<Parameter>& params() const { return params_; }
  double lo(std::size_t j) const { return lo_[j]; }
  double hi(std::size_t j) const { return hi_[j]; }
  std::vector<double> current() const {
    std::vector<double> x;
    for (const auto& p : params_) x.push_back(p.raw_value());
    return x;
  }
  void apply(std::span<const double> x) const {
    for (std::size_t j = 0; j < params_.size(); ++j) params_[j].set_raw_value(x[j]);
  }
  double clamp(std::size_t j, double v) const { return std::clamp(v, lo_[j], hi_[j]); }

 private:
  mutable std::vector<Parameter> params_;
  std::vector<double> lo_, hi_;
};

double sum_squares(const std::vector<double>& r) {
  double s = 0.0;
  for (double v : r) s += v * v;
  return s;
}

struct Evaluator {
  const Objective& target;
  const Space& space;
  std::size_t count = 0;

  // Residuals at x; nullopt when evaluation faults or yields non-finite values.
  std::optional<std::vector<double>> residuals(std::span<const double> x, bool scaled = true) {
    space.apply(x);
    ++count;
    try {
      auto r = target.residuals(scaled);
      for (double v : r)
        if (!std::isfinite(v)) return std::nullopt;
      return r;
    } catch (const EvalError&) {
      return std::nullopt;
    }
  }
  double cost(std::span<const double> x) {
    auto r = residuals(x);
    return r ? sum_squares(*r) : std::numeric_limits<double>::infinity();
  }
};

struct Emitter {
  const FitHooks& hooks;
  Clock::time_point t0 = Clock::now();
  int offset = 0;
  // A continuation (DE polish) already reported its starting point.
  bool skip_initial = false;

  bool interrupted() const { return hooks.interrupt && hooks.interrupt->load(); }
  void emit(int iteration, double chi2, std::vector<double> raw) const {
    if (!hooks.progress || (skip_initial && iteration == 0)) return;
    ProgressEvent ev;
    ev.iteration = iteration + offset;
    ev.chi2 = chi2;
    ev.elapsed = std::chrono::duration<double>(Clock::now() - t0).count();
    ev.raw_values = std::move(raw);
    hooks.progress(ev);
  }
};

void fill_errors(const Objective& target, FitResult& res, bool enabled) {
  res.errors.assign(res.parameters.size(), std::nullopt);
  if (!enabled) return;
  try {
    const ErrorEstimate est = estimate_errors(target);
    res.errors = est.sigma;
  } catch (const Error&) {
    // Errors are best effort; a fit with N <= M or faulting unscaled
    // residuals still reports its parameters.
  }
}

// Keeps parameters at `best` if an exception escapes the optimizer.
struct Restore {
  const Space& space;
  const std::vector<double>& best;
  bool armed = true;
  ~Restore() {
    if (!armed) return;
    try {
      space.apply(best);
    } catch (...) {
    }
  }
};

// Forward: h = sqrt(eps) max(|x|, 1), stepping backwards at an upper bound.
// Central: h = eps^(1/3) max(|x|, 1), one-sided where a bound cuts in.
// Columns of parameters pinned by their bounds are zero.
bool difference_jacobian(Evaluator& ev, const Space& space, const std::vector<double>& x,
                         const std::vector<double>& r, bool scaled, Difference kind,
                         Eigen::MatrixXd& J) {
  const std::size_t n = r.size();
  const double eps = std::numeric_limits<double>::epsilon();
  std::vector<double> xp, xm;
  for (std::size_t j = 0; j < space.size(); ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    xp = x;
    xm = x;
    if (kind == Difference::forward) {
      double h = std::sqrt(eps) * std::max(std::abs(x[j]), 1.0);
      if (x[j] + h > space.hi(j)) h = -h;
      xp[j] = space.clamp(j, x[j] + h);
    } else {
      const double h = std::cbrt(eps) * std::max(std::abs(x[j]), 1.0);
      xp[j] = space.clamp(j, x[j] + h);
      xm[j] = space.clamp(j, x[j] - h);
    }
    const double width = xp[j] - xm[j];
    if (width == 0.0) {
      J.col(col).setZero();
      continue;
    }
    std::optional<std::vector<double>> rp, rm;
    rp = xp[j] != x[j] ? ev.residuals(xp, scaled) : std::optional<std::vector<double>>(r);
    rm = xm[j] != x[j] ? ev.residuals(xm, scaled) : std::optional<std::vector<double>>(r);
    if (!rp || !rm || rp->size() != n || rm->size() != n) return false;
    for (std::size_t i = 0; i < n; ++i)
      J(static_cast<Eigen::Index>(i), col) = ((*rp)[i] - (*rm)[i]) / width;
  }
  return true;
}

// Near the optimum S(x) is flat to within its own rounding noise, so plain
// decrease tests stop roughly sqrt(eps) short in the parameters. One
// undamped Gauss-Newton step with a central-difference Jacobian lands on the
// least-squares point of the local linear model; it is kept when S does not
// rise beyond rounding. S keeps its previous value in that case.
void gauss_newton_polish(Evaluator& ev, const Space& space, std::vector<double>& x,
                         std::vector<double>& r, double& S) {
  const std::size_t n = r.size(), m = space.size();
  Eigen::MatrixXd J(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  if (!difference_jacobian(ev, space, x, r, true, Difference::central, J)) return;
  const Eigen::Map<const Eigen::VectorXd> rv(r.data(), static_cast<Eigen::Index>(n));
  const Eigen::MatrixXd A = J.transpose() * J;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-12) return;
  const Eigen::VectorXd delta = ldlt.solve(-(J.transpose() * rv));
  std::vector<double> xn(m);
  bool moved = false;
  for (std::size_t j = 0; j < m; ++j) {
    if (!std::isfinite(delta(j))) return;
    xn[j] = space.clamp(j, x[j] + delta(j));
    moved = moved || xn[j] != x[j];
  }
  if (!moved) return;
  auto rn = ev.residuals(xn);
  if (!rn) return;
  const double Sn = sum_squares(*rn);
  const double noise = 8.0 * static_cast<double>(n) * std::numeric_limits<double>::epsilon() * S;
  if (Sn > S + noise) return;
  x = std::move(xn);
  r = std::move(*rn);
  S = std::min(S, Sn);
}

FitResult run_lm(const Objective& target, const Space& space, const LMOptions& opts, Emitter& em) {
  const double norm = target.normalization();
  const std::size_t m = space.size();
  std::vector<double> x = space.current();
  Restore restore{space, x};
  Evaluator ev{target, space};

  auto r0 = ev.residuals(x);
  if (!r0) throw FitError("non-finite residuals at the initial point");
  std::vector<double> r = std::move(*r0);
  const std::size_t n = r.size();
  double S = sum_squares(r);

  FitResult res;
  res.parameters = space.params();
  res.chi2_history.push_back(S / norm);
  em.emit(0, S / norm, x);

  double lambda = opts.lambda_init;
  FitStatus status = FitStatus::max_iter;
  std::string message = "maximum iterations reached";
  Eigen::MatrixXd J(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  // Forward differences drive the fit. Once they stop making progress, a
  // short refinement with central differences removes the O(sqrt(eps))
  // Jacobian error from the final point.
  Difference scheme = Difference::forward;

  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    if (em.interrupted()) {
      status = FitStatus::interrupted;
      message = "interrupted";
      break;
    }
    if (S == 0.0) {
      status = FitStatus::converged;
      message = "zero residuals";
      break;
    }
    if (!difference_jacobian(ev, space, x, r, true, scheme, J))
      throw FitError("non-finite residuals in Jacobian evaluation");
    const Eigen::Map<const Eigen::VectorXd> rv(r.data(), static_cast<Eigen::Index>(n));
    const Eigen::VectorXd g = J.transpose() * rv;
    const Eigen::MatrixXd A = J.transpose() * J;

    std::string done;
    if (g.lpNorm<Eigen::Infinity>() <= opts.gradient_tol * (1.0 + S)) {
      done = "gradient tolerance reached";
    } else {
      Eigen::VectorXd D = A.diagonal();
      const double dmax = std::max(D.maxCoeff(), std::numeric_limits<double>::min());
      for (Eigen::Index j = 0; j < D.size(); ++j) D(j) = std::max(D(j), 1e-12 * dmax);

      bool accepted = false;
      std::vector<double> step(m, 0.0);
      for (;;) {
        Eigen::MatrixXd Ad = A;
        Ad.diagonal() += lambda * D;
        const Eigen::VectorXd delta = Ad.ldlt().solve(-g);
        std::vector<double> xn(m);
        bool moved = false;
        for (std::size_t j = 0; j < m; ++j) {
          xn[j] = std::isfinite(delta(j)) ? space.clamp(j, x[j] + delta(j)) : x[j];
          moved = moved || xn[j] != x[j];
        }
        if (moved) {
          if (auto rn = ev.residuals(xn)) {
            // S - S_new as sum (r - r_new)(r + r_new): resolves decreases far
            // below the rounding of S itself.
            double reduction = 0.0;
            for (std::size_t i = 0; i < n; ++i) reduction += (r[i] - (*rn)[i]) * (r[i] + (*rn)[i]);
            if (reduction > 0.0) {
              const double Sn = sum_squares(*rn);
              for (std::size_t j = 0; j < m; ++j) step[j] = xn[j] - x[j];
              x = std::move(xn);
              r = std::move(*rn);
              S = Sn < S ? Sn : std::max(0.0, S - reduction);
              lambda = std::max(lambda / opts.lambda_down, 1e-20);
              accepted = true;
              break;
            }
          }
        }
        lambda *= opts.lambda_up;
        if (lambda > 1e20) break;
      }
      res.chi2_history.push_back(S / norm);
      em.emit(static_cast<int>(res.chi2_history.size()) - 1, S / norm, x);
      if (!accepted) {
        done = "no further decrease possible";
      } else {
        double sn = 0.0, xn = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          sn += step[j] * step[j];
          xn += x[j] * x[j];
        }
        if (std::sqrt(sn) <= opts.step_tol * (std::sqrt(xn) + opts.step_tol))
          done = "step tolerance reached";
      }
    }
    if (!done.empty()) {
      if (scheme == Difference::forward) {
        scheme = Difference::central;
        lambda = opts.lambda_init;
        continue;
      }
      status = FitStatus::converged;
      message = done;
      const double before = S;
      gauss_newton_polish(ev, space, x, r, S);
      if (S < before) {
        res.chi2_history.push_back(S / norm);
        em.emit(static_cast<int>(res.chi2_history.size()) - 1, S / norm, x);
      }
      break;
    }
  }
  restore.armed = false;
  space.apply(x);
  res.raw_values = x;
  res.status = status;
  res.message = message;
  res.n_evaluations = ev.count;
  return res;
}

// Mirror v into [lo, hi] across whichever bound it violates, repeatedly.
double reflect_into(double v, double lo, double hi) {
  const double w = hi - lo;
  if (!(w > 0)) return lo;
  double y = std::fmod(v - lo, 2.0 * w);
  if (y < 0) y += 2.0 * w;
  if (y > w) y = 2.0 * w - y;
  return lo + y;
}

}  // namespace

FitResult fit_lm(const Objective& target, const LMOptions& opts, const FitHooks& hooks) {
  opts.validate();
  Space space(target.parameters());
  if (space.size() == 0) throw FitError("no free parameters");
  Emitter em{hooks};
  FitResult res = run_lm(target, space, opts, em);
  fill_errors(target, res, opts.estimate_errors);
  return res;
}

FitResult fit_de(const Objective& target, const DEOptions& opts, const FitHooks& hooks) {
  opts.validate();
  Space space(target.parameters());
  if (space.size() == 0) throw FitError("no free parameters");
  for (std::size_t j = 0; j < space.size(); ++j)
    if (!std::isfinite(space.lo(j)) || !std::isfinite(space.hi(j)))
      throw ValueError("parameter '" + space.params()[j].name() +
                       "' needs finite bounds for differential evolution");
  const double norm = target.normalization();
  const std::size_t m = space.size();
  const int np = opts.population_size;
  Emitter em{hooks};
  Evaluator ev{target, space};
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, np - 1);
  std::uniform_int_distribution<std::size_t> pick_dim(0, m - 1);

  std::vector<std::vector<double>> pop(np, std::vector<double>(m));
  std::vector<double> cost(np);
  pop[0] = space.current();
  Restore restore{space, pop[0]};
  for (int i = 1; i < np; ++i)
    for (std::size_t j = 0; j < m; ++j)
      pop[i][j] = space.lo(j) + unit(rng) * (space.hi(j) - space.lo(j));
  for (int i = 0; i < np; ++i) cost[i] = ev.cost(pop[i]);
  auto best_index = [&] {
    return static_cast<int>(std::min_element(cost.begin(), cost.end()) - cost.begin());
  };
  int best = best_index();
  if (!std::isfinite(cost[best])) throw FitError("no finite cost in the initial population");

  FitResult res;
  res.parameters = space.params();
  res.chi2_history.push_back(cost[best] / norm);
  em.emit(0, cost[best] / norm, pop[best]);

  LMOptions polish;
  polish.estimate_errors = false;
  FitStatus status = FitStatus::max_iter;
  std::string message = "maximum generations reached";
  std::vector<std::vector<double>> trial(np, std::vector<double>(m));
  std::vector<double> trial_cost(np);
  int generation = 0;

  for (int gen = 1; gen <= opts.max_generations; ++gen) {
    if (em.interrupted()) {
      status = FitStatus::interrupted;
      message = "interrupted";
      break;
    }
    for (int i = 0; i < np; ++i) {
      int a, b, c;
      do a = pick(rng); while (a == i);
      do b = pick(rng); while (b == i || b == a);
      do c = pick(rng); while (c == i || c == a || c == b);
      const std::size_t forced = pick_dim(rng);
      for (std::size_t j = 0; j < m; ++j) {
        const bool cross = unit(rng) < opts.Cr || j == forced;
        trial[i][j] = cross ? reflect_into(pop[a][j] + opts.F * (pop[b][j] - pop[c][j]),
                                           space.lo(j), space.hi(j))
                            : pop[i][j];
      }
    }
    for (int i = 0; i < np; ++i) {
      trial_cost[i] = ev.cost(trial[i]);
      if (opts.candidate_polish_iters > 0 && trial_cost[i] <= cost[i]) {
        polish.max_iter = opts.candidate_polish_iters;
        space.apply(trial[i]);
        try {
          Emitter quiet{FitHooks{}};
          FitResult pr = run_lm(target, space, polish, quiet);
          ev.count += pr.n_evaluations;
          const double pc = pr.chi2() * norm;
          if (pc <= trial_cost[i]) {
            trial[i] = pr.raw_values;
            trial_cost[i] = pc;
          }
        } catch (const FitError&) {
        }
      }
    }
    for (int i = 0; i < np; ++i)
      if (trial_cost[i] <= cost[i]) {
        pop[i] = trial[i];
        cost[i] = trial_cost[i];
      }
    best = best_index();
    generation = gen;
    res.chi2_history.push_back(cost[best] / norm);
    em.emit(gen, cost[best] / norm, pop[best]);
    if (opts.tol > 0) {
      const double worst = *std::max_element(cost.begin(), cost.end());
      if (worst - cost[best] <= opts.tol * (1.0 + std::abs(cost[best]))) {
        status = FitStatus::converged;
        message = "population converged";
        break;
      }
    }
  }
  space.apply(pop[best]);
  restore.armed = false;
  res.raw_values = pop[best];

  if (status != FitStatus::interrupted && opts.final_polish_iters > 0) {
    polish.max_iter = opts.final_polish_iters;
    Emitter pem{hooks, em.t0, generation, true};
    try {
      FitResult pr = run_lm(target, space, polish, pem);
      res.chi2_history.insert(res.chi2_history.end(), pr.chi2_history.begin() + 1,
                              pr.chi2_history.end());
      res.raw_values = pr.raw_values;
      ev.count += pr.n_evaluations;
      if (pr.status == FitStatus::interrupted) {
        status = FitStatus::interrupted;
        message = "interrupted during polish";
      } else if (pr.status == FitStatus::converged) {
        status = FitStatus::converged;
        message = "polish " + pr.message;
      }
    } catch (const FitError&) {
      space.apply(res.raw_values);
    }
  }
  res.status = status;
  res.message = message;
  res.n_evaluations = ev.count;
  fill_errors(target, res, opts.estimate_errors);
  return res;
}

ErrorEstimate estimate_errors(const Objective& target) {
  Space space(target.parameters());
  if (space.size() == 0) throw FitError("no free parameters");
  const double norm = target.normalization();
  const std::size_t m = space.size();
  const std::vector<double> x0 = space.current();
  Restore restore{space, x0};
  Evaluator ev{target, space};
  auto r0 = ev.residuals(x0, false);
  if (!r0) throw FitError("non-finite unscaled residuals at the current parameters");
  const std::size_t n = r0->size();

  Eigen::MatrixXd J(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  if (!difference_jacobian(ev, space, x0, *r0, false, Difference::central, J))
    throw FitError("non-finite unscaled residuals in error estimation");
  space.apply(x0);
  restore.armed = false;

  ErrorEstimate est;
  est.parameters = space.params();
  est.chi2_reduced = sum_squares(*r0) / norm;
  est.sigma.assign(m, std::nullopt);
  est.covariance.assign(m, std::vector<double>(m, std::numeric_limits<double>::quiet_NaN()));

  std::vector<Eigen::Index> ident;
  for (std::size_t j = 0; j < m; ++j)
    if (J.col(static_cast<Eigen::Index>(j)).cwiseAbs().maxCoeff() > 0) ident.push_back(j);
  if (!ident.empty()) {
    const Eigen::Index k = static_cast<Eigen::Index>(ident.size());
    Eigen::MatrixXd Jr(static_cast<Eigen::Index>(n), k);
    for (Eigen::Index c = 0; c < k; ++c) Jr.col(c) = J.col(ident[c]);
    const Eigen::MatrixXd A = Jr.transpose() * Jr;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.rcond() > 1e-15) {
      const Eigen::MatrixXd cov =
          est.chi2_reduced * ldlt.solve(Eigen::MatrixXd::Identity(k, k));
      for (Eigen::Index a = 0; a < k; ++a) {
        for (Eigen::Index b = 0; b < k; ++b) est.covariance[ident[a]][ident[b]] = cov(a, b);
        if (cov(a, a) >= 0 && std::isfinite(cov(a, a))) est.sigma[ident[a]] = std::sqrt(cov(a, a));
      }
    }
  }
  for (std::size_t j = 0; j < m; ++j) est.parameters[j].set_error(est.sigma[j]);
  return est;
}

std::vector<std::vector<double>> numeric_jacobian(const Objective& target, Difference kind,
                                                bool scaled) {
  Space space(target.parameters());
  const std::vector<double> x0 = space.current();
  Restore restore{space, x0};
  Evaluator ev{target, space};
  auto r0 = ev.residuals(x0, scaled);
  if (!r0) throw FitError("non-finite residuals at the current parameters");
  Eigen::MatrixXd J(static_cast<Eigen::Index>(r0->size()), static_cast<Eigen::Index>(space.size()));
  if (!difference_jacobian(ev, space, x0, *r0, scaled, kind, J))
    throw FitError("non-finite residuals in Jacobian evaluation");
  std::vector<std::vector<double>> out(r0->size(), std::vector<double>(space.size()));
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < space.size(); ++j)
      out[i][j] = J(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  return out;
}

CallbackObjective::CallbackObjective(std::vector<Parameter> params, Fn fn)
    : params_(std::move(params)), fn_(std::move(fn)) {
  std::vector<Parameter> unique;
  for (const auto& p : params_)
    if (std::find(unique.begin(), unique.end(), p) == unique.end()) unique.push_back(p);
  params_ = std::move(unique);
}

std::vector<Parameter> CallbackObjective::parameters() const {
  std::vector<Parameter> out;
  for (const auto& p : params_)
    if (!p.fixed()) out.push_back(p);
  return out;
}

std::vector<double> CallbackObjective::residuals(bool, EvalDiagnostics*) const {
  std::vector<double> v;
  for (const auto& p : params_) v.push_back(p.value());
  return fn_(v);
}

namespace {

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}
std::set<const ParameterNode*>& registry() {
  static std::set<const ParameterNode*> s;
  return s;
}

}  // namespace

FitController::FitController(std::shared_ptr<const Objective> target, Optimizer optimizer,
                             LMOptions lm, DEOptions de)
    : target_(std::move(target)), optimizer_(optimizer), lm_(lm), de_(de) {
  if (!target_) throw ValueError("fit controller needs a target");
  lm_.validate();
  de_.validate();
}

FitController::~FitController() {
  interrupt();
  if (worker_.joinable()) worker_.join();
}

void FitController::start() {
  if (started_) throw FitError("fit already started");
  std::vector<const ParameterNode*> pool;
  for (const auto& p : target_->parameters()) pool.push_back(p.node());
  {
    std::lock_guard lock(registry_mutex());
    for (const auto* p : pool)
      if (registry().count(p))
        throw FitError("another fit is running on parameter '" +
                       Parameter::from_node(p).name() + "'");
    registry().insert(pool.begin(), pool.end());
  }
  pool_ = std::move(pool);
  started_ = true;
  running_.store(true);
  try {
    worker_ = std::thread([this] { run(); });
  } catch (...) {
    std::lock_guard lock(registry_mutex());
    for (const auto* p : pool_) registry().erase(p);
    running_.store(false);
    throw;
  }
}

void FitController::run() {
  FitHooks hooks;
  hooks.interrupt = &interrupt_;
  hooks.progress = [this](const ProgressEvent& e) {
    {
      std::lock_guard lock(mutex_);
      events_.push_back(e);
    }
    cv_.notify_all();
  };
  FitResult res;
  try {
    res = optimizer_ == Optimizer::lm ? fit_lm(*target_, lm_, hooks) : fit_de(*target_, de_, hooks);
  } catch (const std::exception& e) {
    res.status = FitStatus::failed;
    res.message = e.what();
    try {
      res.parameters = target_->parameters();
      for (const auto& p : res.parameters) res.raw_values.push_back(p.raw_value());
      res.errors.assign(res.parameters.size(), std::nullopt);
    } catch (...) {
    }
  }
  {
    std::lock_guard lock(registry_mutex());
    for (const auto* p : pool_) registry().erase(p);
  }
  {
    std::lock_guard lock(mutex_);
    result_ = std::move(res);
    running_.store(false);
  }
  cv_.notify_all();
}

bool FitController::finished() const {
  std::lock_guard lock(mutex_);
  return result_.has_value();
}

const FitResult& FitController::wait() {
  if (!started_) throw FitError("fit not started");
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [this] { return result_.has_value(); });
  return *result_;
}

std::vector<ProgressEvent> FitController::events(std::size_t from) const {
  std::lock_guard lock(mutex_);
  if (from >= events_.size()) return {};
  return {events_.begin() + static_cast<std::ptrdiff_t>(from), events_.end()};
}

bool FitController::wait_for_events(std::size_t seen, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mutex_);
  return cv_.wait_for(lock, timeout,
                      [&] { return events_.size() > seen || result_.has_value(); });
}

std::optional<FitResult> FitController::result() const {
  std::lock_guard lock(mutex_);
  return result_;
}

}  // namespace scatfit
