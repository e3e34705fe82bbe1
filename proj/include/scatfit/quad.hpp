#pragma once

// Integral functors: definite integration over a variable, gaussian averaging
// over a parameter, and gaussian resolution smearing along a variable. Each
// comes in a fixed-order Gauss-Legendre flavour and an adaptive one.

#include <cmath>
#include <cstddef>
#include <vector>

#include "scatfit/expr.hpp"

namespace scatfit {

struct IntegrationSpec {
  enum class Method { fixed, adaptive };

  Method method = Method::fixed;
  // Fixed: number of nodes. Adaptive: base order n of the n / 2n rule pair.
  int order = 16;
  double rel_tol = 1e-8;
  double abs_tol = 1e-12;
  int max_depth = 40;

  static IntegrationSpec fixed_order(int order) {
    IntegrationSpec s;
    s.method = Method::fixed;
    s.order = order;
    return s;
  }
  static IntegrationSpec adaptive(double rel_tol, double abs_tol = 1e-12, int order = 7,
                                  int max_depth = 40) {
    IntegrationSpec s;
    s.method = Method::adaptive;
    s.order = order;
    s.rel_tol = rel_tol;
    s.abs_tol = abs_tol;
    s.max_depth = max_depth;
    return s;
  }
  void validate() const;
};

// Nodes and weights on [-1, 1], computed by Newton iteration on the Legendre
// polynomial and cached per order for the lifetime of the process.
class GaussLegendre {
 public:
  static const GaussLegendre& rule(int order);

  int order() const noexcept { return static_cast<int>(nodes_.size()); }
  const std::vector<double>& nodes() const noexcept { return nodes_; }
  const std::vector<double>& weights() const noexcept { return weights_; }

  template <class F>
  auto integrate(F&& f, double a, double b) const -> decltype(f(a)) {
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    decltype(f(a)) sum{};
    for (std::size_t i = 0; i < nodes_.size(); ++i) sum += weights_[i] * f(mid + half * nodes_[i]);
    return half * sum;
  }

  explicit GaussLegendre(int order);

 private:
  std::vector<double> nodes_;
  std::vector<double> weights_;
};

template <class T>
struct QuadResult {
  T value{};
  bool converged = true;
  std::size_t evaluations = 0;
};

namespace detail {

template <class T, class F>
void adaptive_step(F& f, double a, double b, int depth, const GaussLegendre& coarse,
                   const GaussLegendre& fine, const IntegrationSpec& spec, QuadResult<T>& out) {
  const T lo = coarse.integrate(f, a, b);
  const T hi = fine.integrate(f, a, b);
  out.evaluations += static_cast<std::size_t>(coarse.order() + fine.order());
  const double diff = std::abs(hi - lo);
  const double tol = std::max(spec.abs_tol, spec.rel_tol * std::abs(hi));
  if (diff <= tol || !std::isfinite(diff)) {
    out.value += hi;
    return;
  }
  if (depth >= spec.max_depth) {
    out.converged = false;
    out.value += hi;
    return;
  }
  const double mid = 0.5 * (a + b);
  adaptive_step<T>(f, a, mid, depth + 1, coarse, fine, spec, out);
  adaptive_step<T>(f, mid, b, depth + 1, coarse, fine, spec, out);
}

}  // namespace detail

// Recursive bisection: each interval compares the order-n and order-2n rules
// and is accepted when they agree within max(abs_tol, rel_tol * |estimate|).
template <class T, class F>
QuadResult<T> integrate_adaptive(F&& f, double a, double b, const IntegrationSpec& spec) {
  QuadResult<T> out;
  const GaussLegendre& coarse = GaussLegendre::rule(spec.order);
  const GaussLegendre& fine = GaussLegendre::rule(2 * spec.order);
  detail::adaptive_step<T>(f, a, b, 0, coarse, fine, spec, out);
  return out;
}

template <class T, class F>
QuadResult<T> integrate(F&& f, double a, double b, const IntegrationSpec& spec) {
  if (spec.method == IntegrationSpec::Method::adaptive) return integrate_adaptive<T>(f, a, b, spec);
  const GaussLegendre& rule = GaussLegendre::rule(spec.order);
  return {rule.integrate(f, a, b), true, static_cast<std::size_t>(rule.order())};
}

// ∫_a^b f dv. `v` must be free in `f`; `a` and `b` must not depend on `v`.
Expr integrate_variable(const Expr& f, const Variable& v, const Expr& a, const Expr& b,
                        const IntegrationSpec& spec);
// Same as a functor; the result drops `v` from the variable list.
Functor integrate_variable(const Functor& f, const Variable& v, const Expr& a, const Expr& b,
                           const IntegrationSpec& spec);

// Gaussian average of `f` over parameter `p`, centred on p's current
// effective value, truncated at ±span_sigmas·σ and renormalised over that
// window. The parameter itself is never modified.
Expr average_parameter(const Expr& f, const Parameter& p, const Expr& fwhm,
                       const IntegrationSpec& spec, double span_sigmas = 3.0);
Functor average_parameter(const Functor& f, const Parameter& p, const Expr& fwhm,
                          const IntegrationSpec& spec, double span_sigmas = 3.0);

// Gaussian smearing of `f` along `v` with a width that may itself depend on
// `v` (evaluated at the output coordinate).
Expr convolve_variable(const Expr& f, const Variable& v, const Expr& fwhm,
                       const IntegrationSpec& spec, double span_sigmas = 3.0);
Functor convolve_variable(const Functor& f, const Variable& v, const Expr& fwhm,
                          const IntegrationSpec& spec, double span_sigmas = 3.0);

// FWHM -> standard deviation of a gaussian.
inline double fwhm_to_sigma(double fwhm) { return fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0))); }

}  // namespace scatfit
