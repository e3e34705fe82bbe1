#include "scatfit/quad.hpp"

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

namespace scatfit {

void IntegrationSpec::validate() const {
  if (order < 1) throw ValueError("integration order must be >= 1");
  if (method == Method::adaptive) {
    if (!(rel_tol > 0) || !(abs_tol > 0))
      throw ValueError("adaptive integration tolerances must be > 0");
    if (max_depth < 0) throw ValueError("adaptive integration max_depth must be >= 0");
  }
}

GaussLegendre::GaussLegendre(int order) : nodes_(order), weights_(order) {
  const int n = order;
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1.0;
      // p1 = P_n(x), p0 = P_{n-1}(x)
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // Re-evaluate the derivative at the converged root for the weight.
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = n * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    nodes_[i] = -x;
    nodes_[n - 1 - i] = x;
    weights_[i] = w;
    weights_[n - 1 - i] = w;
  }
  if (n % 2 == 1) nodes_[n / 2] = 0.0;
}

const GaussLegendre& GaussLegendre::rule(int order) {
  if (order < 1) throw ValueError("Gauss-Legendre order must be >= 1");
  static std::mutex mutex;
  static std::map<int, std::unique_ptr<GaussLegendre>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[order];
  if (!slot) slot = std::make_unique<GaussLegendre>(order);
  return *slot;
}

namespace {

void note_nonconverged(const EvalContext& ctx) {
  if (auto* d = ctx.diagnostics()) ++d->nonconverged_integrals;
}

template <class T>
T integrate_node(const Node& f, const VariableNode* v, double a, double b,
                 const IntegrationSpec& spec, const EvalContext& ctx) {
  auto g = [&](double t) -> T {
    const EvalContext inner = ctx.with_variable(v, t);
    if constexpr (std::is_same_v<T, double>)
      return f.eval_real(inner);
    else
      return evaluate_node(f, inner);
  };
  QuadResult<T> r = integrate<T>(g, a, b, spec);
  if (!r.converged) note_nonconverged(ctx);
  return r.value;
}

class VariableIntegralNode final : public Node {
 public:
  VariableIntegralNode(const Expr& f, const Variable& v, const Expr& a, const Expr& b,
                       const IntegrationSpec& spec)
      : Node(NodeKind::special, f.is_complex(), {f.node(), a.node(), b.node()},
             remaining_variables(f, v, a, b)),
        f_(f.node()),
        a_(a.node()),
        b_(b.node()),
        v_(v.node()),
        spec_(spec) {
    spec_.validate();
    GaussLegendre::rule(spec_.order);
    if (spec_.method == IntegrationSpec::Method::adaptive) GaussLegendre::rule(2 * spec_.order);
  }

  double eval_real(const EvalContext& ctx) const override {
    if (is_complex()) return Node::eval_real(ctx);
    return integrate_node<double>(*f_, v_, a_->eval_real(ctx), b_->eval_real(ctx), spec_, ctx);
  }
  Complex eval_complex(const EvalContext& ctx) const override {
    if (!is_complex()) return eval_real(ctx);
    return integrate_node<Complex>(*f_, v_, a_->eval_real(ctx), b_->eval_real(ctx), spec_, ctx);
  }

 private:
  static std::vector<const VariableNode*> remaining_variables(const Expr& f, const Variable& v,
                                                              const Expr& a, const Expr& b) {
    const auto& fv = f.node()->free_variables();
    if (std::find(fv.begin(), fv.end(), v.node()) == fv.end())
      throw ValueError("integration variable '" + v.name() + "' is not free in the integrand");
    for (const Expr* limit : {&a, &b}) {
      if (limit->is_complex()) throw ValueError("integration limits must be real");
      const auto& lv = limit->node()->free_variables();
      if (std::find(lv.begin(), lv.end(), v.node()) != lv.end())
        throw ValueError("integration limits must not depend on the integration variable");
    }
    std::vector<const VariableNode*> out;
    for (const auto* x : fv)
      if (x != v.node()) out.push_back(x);
    for (const Expr* limit : {&a, &b})
      for (const auto* x : limit->node()->free_variables())
        if (std::find(out.begin(), out.end(), x) == out.end()) out.push_back(x);
    return out;
  }

  NodePtr f_, a_, b_;
  const VariableNode* v_;
  IntegrationSpec spec_;
};

double gaussian_weight(double u, double sigma) { return std::exp(-0.5 * (u / sigma) * (u / sigma)); }

// Normalised gaussian mean of g(u) over u in [-k sigma, k sigma].
template <class T, class G>
T gaussian_mean(G&& g, double sigma, double span, const IntegrationSpec& spec,
                const EvalContext& ctx) {
  const double half = span * sigma;
  if (spec.method == IntegrationSpec::Method::fixed) {
    // Same rule for numerator and denominator: constants map to themselves exactly.
    const GaussLegendre& rule = GaussLegendre::rule(spec.order);
    T num{};
    double den = 0.0;
    for (int i = 0; i < rule.order(); ++i) {
      const double u = half * rule.nodes()[i];
      const double w = rule.weights()[i] * gaussian_weight(u, sigma);
      num += w * g(u);
      den += w;
    }
    return num / den;
  }
  auto weighted = [&](double u) -> T { return gaussian_weight(u, sigma) * g(u); };
  QuadResult<T> r = integrate_adaptive<T>(weighted, -half, half, spec);
  if (!r.converged) note_nonconverged(ctx);
  const double den = sigma * std::sqrt(2.0 * std::numbers::pi) * std::erf(span / std::sqrt(2.0));
  return r.value / den;
}

double checked_sigma(const Node& fwhm, const EvalContext& ctx) {
  const double w = fwhm.eval_real(ctx);
  if (!(w > 0.0)) throw EvalError("distribution FWHM must be > 0, got " + std::to_string(w));
  return fwhm_to_sigma(w);
}

class ParameterAverageNode final : public Node {
 public:
  ParameterAverageNode(const Expr& f, const Parameter& p, const Expr& fwhm,
                       const IntegrationSpec& spec, double span)
      : Node(NodeKind::special, f.is_complex(), {f.node(), fwhm.node(), Expr(p).node()}),
        f_(f.node()),
        fwhm_(fwhm.node()),
        p_(p.node()),
        spec_(spec),
        span_(span) {
    spec_.validate();
    if (!(span_ > 0)) throw ValueError("span_sigmas must be > 0");
    if (fwhm.is_complex()) throw ValueError("FWHM must be real");
    const auto params = all_parameters(f);
    if (std::find(params.begin(), params.end(), p) == params.end())
      throw ValueError("parameter '" + p.name() + "' is not reachable from the averaged functor");
    if (fwhm.node()->free_variables().empty() && !(fwhm.value() > 0))
      throw ValueError("distribution FWHM must be > 0");
  }

  double eval_real(const EvalContext& ctx) const override {
    if (is_complex()) return Node::eval_real(ctx);
    return average<double>(ctx);
  }
  Complex eval_complex(const EvalContext& ctx) const override {
    if (!is_complex()) return eval_real(ctx);
    return average<Complex>(ctx);
  }

 private:
  template <class T>
  T average(const EvalContext& ctx) const {
    const double sigma = checked_sigma(*fwhm_, ctx);
    const double centre = p_->eval_real(ctx);
    auto g = [&](double u) -> T {
      const EvalContext inner = ctx.with_override(p_, centre + u);
      if constexpr (std::is_same_v<T, double>)
        return f_->eval_real(inner);
      else
        return evaluate_node(*f_, inner);
    };
    return gaussian_mean<T>(g, sigma, span_, spec_, ctx);
  }

  NodePtr f_, fwhm_;
  const ParameterNode* p_;
  IntegrationSpec spec_;
  double span_;
};

class VariableConvolutionNode final : public Node {
 public:
  VariableConvolutionNode(const Expr& f, const Variable& v, const Expr& fwhm,
                          const IntegrationSpec& spec, double span)
      : Node(NodeKind::special, f.is_complex(), {f.node(), fwhm.node(), Expr(v).node()}),
        f_(f.node()),
        fwhm_(fwhm.node()),
        v_(v.node()),
        spec_(spec),
        span_(span) {
    spec_.validate();
    if (!(span_ > 0)) throw ValueError("span_sigmas must be > 0");
    if (fwhm.is_complex()) throw ValueError("FWHM must be real");
  }

  double eval_real(const EvalContext& ctx) const override {
    if (is_complex()) return Node::eval_real(ctx);
    return smear<double>(ctx);
  }
  Complex eval_complex(const EvalContext& ctx) const override {
    if (!is_complex()) return eval_real(ctx);
    return smear<Complex>(ctx);
  }

 private:
  template <class T>
  T smear(const EvalContext& ctx) const {
    const double centre = ctx.variable(v_);
    const double sigma = checked_sigma(*fwhm_, ctx);
    auto g = [&](double u) -> T {
      const EvalContext inner = ctx.with_variable(v_, centre + u);
      if constexpr (std::is_same_v<T, double>)
        return f_->eval_real(inner);
      else
        return evaluate_node(*f_, inner);
    };
    return gaussian_mean<T>(g, sigma, span_, spec_, ctx);
  }

  NodePtr f_, fwhm_;
  const VariableNode* v_;
  IntegrationSpec spec_;
  double span_;
};

}  // namespace

Expr integrate_variable(const Expr& f, const Variable& v, const Expr& a, const Expr& b,
                        const IntegrationSpec& spec) {
  return Expr(std::make_shared<VariableIntegralNode>(f, v, a, b, spec));
}

Functor integrate_variable(const Functor& f, const Variable& v, const Expr& a, const Expr& b,
                           const IntegrationSpec& spec) {
  const auto& vars = f.variables();
  if (std::find(vars.begin(), vars.end(), v) == vars.end())
    throw ValueError("integration variable '" + v.name() + "' is not a variable of functor '" +
                     f.name() + "'");
  std::vector<Variable> rest;
  for (const auto& x : vars)
    if (!(x == v)) rest.push_back(x);
  Expr body = integrate_variable(f.body(), v, a, b, spec);
  for (const Variable& x : free_variables(body))
    if (std::find(rest.begin(), rest.end(), x) == rest.end()) rest.push_back(x);
  return Functor(f.name(), body, rest);
}

Expr average_parameter(const Expr& f, const Parameter& p, const Expr& fwhm,
                       const IntegrationSpec& spec, double span_sigmas) {
  return Expr(std::make_shared<ParameterAverageNode>(f, p, fwhm, spec, span_sigmas));
}

Functor average_parameter(const Functor& f, const Parameter& p, const Expr& fwhm,
                          const IntegrationSpec& spec, double span_sigmas) {
  return Functor(f.name(), average_parameter(f.body(), p, fwhm, spec, span_sigmas), f.variables());
}

Expr convolve_variable(const Expr& f, const Variable& v, const Expr& fwhm,
                       const IntegrationSpec& spec, double span_sigmas) {
  return Expr(std::make_shared<VariableConvolutionNode>(f, v, fwhm, spec, span_sigmas));
}

Functor convolve_variable(const Functor& f, const Variable& v, const Expr& fwhm,
                          const IntegrationSpec& spec, double span_sigmas) {
  std::vector<Variable> vars = f.variables();
  Expr body = convolve_variable(f.body(), v, fwhm, spec, span_sigmas);
  for (const Variable& x : free_variables(body))
    if (std::find(vars.begin(), vars.end(), x) == vars.end()) vars.push_back(x);
  return Functor(f.name(), body, vars);
}

}  // namespace scatfit
