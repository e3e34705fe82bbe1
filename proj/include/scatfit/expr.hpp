#pragma once

// Parameter / variable / functor expression graph.
//
// Every object a user composes (parameters, variables, arithmetic on them,
// reflectivity and form-factor functors) is a node of one shared acyclic
// graph. Nodes are immutable except for independent parameter values, which
// are read at evaluation time: mutating a parameter changes every expression
// that references it. Evaluation is eager and side-effect free.

#include <array>
#include <atomic>
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scatfit/errors.hpp"

namespace scatfit {

using Complex = std::complex<double>;

inline constexpr std::size_t kMaxVariables = 5;

class Node;
class ParameterNode;
class VariableNode;
using NodePtr = std::shared_ptr<const Node>;

struct EvalDiagnostics {
  std::size_t nonconverged_integrals = 0;
};

// Per-evaluation state: variable bindings and temporary parameter overrides.
// Small and copyable; integral functors copy it to bind their integration
// variable, so nothing shared is ever mutated during evaluation.
class EvalContext {
 public:
  static constexpr std::size_t kCapacity = 8;

  double variable(const VariableNode* v) const;
  bool has_variable(const VariableNode* v) const noexcept;
  const double* override_for(const ParameterNode* p) const noexcept {
    for (std::size_t i = 0; i < n_overrides_; ++i)
      if (overrides_[i].first == p) return &overrides_[i].second;
    return nullptr;
  }
  bool has_overrides() const noexcept { return n_overrides_ != 0; }

  // Binds or rebinds `v` in place.
  void bind(const VariableNode* v, double value);
  EvalContext with_variable(const VariableNode* v, double value) const {
    EvalContext c = *this;
    c.bind(v, value);
    return c;
  }
  // `effective_value` replaces raw_value * scale of `p` for this evaluation only.
  EvalContext with_override(const ParameterNode* p, double effective_value) const;

  EvalDiagnostics* diagnostics() const noexcept { return diagnostics_; }
  void set_diagnostics(EvalDiagnostics* d) noexcept { diagnostics_ = d; }

 private:
  std::array<std::pair<const VariableNode*, double>, kCapacity> vars_{};
  std::size_t n_vars_ = 0;
  std::array<std::pair<const ParameterNode*, double>, kCapacity> overrides_{};
  std::size_t n_overrides_ = 0;
  EvalDiagnostics* diagnostics_ = nullptr;
};

enum class NodeKind { parameter, variable, constant, unary, binary, special };

class Node {
 public:
  virtual ~Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  NodeKind kind() const noexcept { return kind_; }
  bool is_complex() const noexcept { return complex_; }
  const std::vector<NodePtr>& children() const noexcept { return children_; }
  // Distinct variable leaves reachable from this node, minus any bound by an
  // integral over a variable. Cached at construction.
  const std::vector<const VariableNode*>& free_variables() const noexcept { return free_vars_; }

  // Real-valued nodes implement eval_real; complex nodes override eval_complex
  // and leave eval_real throwing.
  virtual double eval_real(const EvalContext& ctx) const;
  virtual Complex eval_complex(const EvalContext& ctx) const { return eval_real(ctx); }

  // Writes a form accepted by the expression parser. Special functors have no
  // textual form and throw ValueError.
  virtual void print(std::ostream& os) const;

 protected:
  Node(NodeKind kind, bool is_complex, std::vector<NodePtr> children);
  Node(NodeKind kind, bool is_complex, std::vector<NodePtr> children,
       std::vector<const VariableNode*> free_vars);

 private:
  NodeKind kind_;
  bool complex_;
  std::vector<NodePtr> children_;
  std::vector<const VariableNode*> free_vars_;
};

inline Complex evaluate_node(const Node& n, const EvalContext& ctx) {
  return n.is_complex() ? n.eval_complex(ctx) : Complex(n.eval_real(ctx), 0.0);
}

// Union of the free variables of `nodes`, in first-seen order. Throws
// ValueError when the union exceeds kMaxVariables.
std::vector<const VariableNode*> union_variables(std::span<const NodePtr> nodes);

struct Bounds {
  double lo;
  double hi;
  bool contains(double v) const noexcept { return v >= lo && v <= hi; }
  bool finite() const noexcept;
};

class ParameterNode final : public Node, public std::enable_shared_from_this<ParameterNode> {
 public:
  ParameterNode(std::string name, double raw_value, double scale, std::optional<Bounds> bounds,
                bool fixed, std::string units);

  double eval_real(const EvalContext& ctx) const override {
    if (ctx.has_overrides())
      if (const double* v = ctx.override_for(this)) return *v;
    return raw_.load(std::memory_order_relaxed) * scale_;
  }
  void print(std::ostream& os) const override;

 private:
  friend class Parameter;
  std::atomic<double> raw_;
  const double scale_;
  std::atomic<bool> fixed_;
  mutable std::mutex meta_mutex_;
  std::string name_;
  std::string id_;
  std::string units_;
  std::optional<Bounds> bounds_;
  std::optional<double> error_;
};

class VariableNode final : public Node,
                           public std::enable_shared_from_this<VariableNode> {
 public:
  explicit VariableNode(std::string name);
  const std::string& name() const noexcept { return name_; }
  double eval_real(const EvalContext& ctx) const override { return ctx.variable(this); }
  void print(std::ostream& os) const override;

 private:
  std::string name_;
};

class Expr;

// Handle to an independent (fittable) parameter. Copies share the node.
class Parameter {
 public:
  Parameter(std::string name, double value, double scale = 1.0,
            std::optional<Bounds> bounds = std::nullopt, bool fixed = false,
            std::string units = "");

  std::string name() const;
  std::string id() const;
  void set_id(std::string id);
  std::string units() const;

  double value() const noexcept { return raw_value() * scale(); }
  double raw_value() const noexcept { return node_->raw_.load(std::memory_order_relaxed); }
  double scale() const noexcept { return node_->scale_; }
  // Throws ValueError if `raw` lies outside the bounds; nothing is clamped.
  void set_raw_value(double raw);
  void set_value(double effective) { set_raw_value(effective / scale()); }

  std::optional<Bounds> bounds() const;
  void set_bounds(std::optional<Bounds> bounds);
  bool fixed() const noexcept { return node_->fixed_.load(std::memory_order_relaxed); }
  void set_fixed(bool fixed) noexcept { node_->fixed_.store(fixed, std::memory_order_relaxed); }
  std::optional<double> error() const;
  void set_error(std::optional<double> error);

  const ParameterNode* node() const noexcept { return node_.get(); }
  friend bool operator==(const Parameter& a, const Parameter& b) noexcept {
    return a.node_ == b.node_;
  }

  // Re-wraps a node found in the graph.
  static Parameter from_node(const ParameterNode* node);

 private:
  explicit Parameter(std::shared_ptr<ParameterNode> node) : node_(std::move(node)) {}
  friend class Expr;
  std::shared_ptr<ParameterNode> node_;
};

inline Parameter make_param(std::string name, double value, double scale = 1.0,
                            std::optional<Bounds> bounds = std::nullopt, bool fixed = false,
                            std::string units = "") {
  return Parameter(std::move(name), value, scale, bounds, fixed, std::move(units));
}

class Variable {
 public:
  explicit Variable(std::string name);
  const std::string& name() const noexcept { return node_->name(); }
  const VariableNode* node() const noexcept { return node_.get(); }
  friend bool operator==(const Variable& a, const Variable& b) noexcept {
    return a.node_ == b.node_;
  }
  static Variable from_node(const VariableNode* node);

 private:
  explicit Variable(std::shared_ptr<const VariableNode> node) : node_(std::move(node)) {}
  friend class Expr;
  std::shared_ptr<const VariableNode> node_;
};

// Value handle to an expression node. Implicitly built from constants,
// parameters and variables so formulas read like the math.
class Expr {
 public:
  Expr() : Expr(0.0) {}
  Expr(double c);   // NOLINT(google-explicit-constructor)
  Expr(Complex c);  // NOLINT(google-explicit-constructor)
  Expr(const Parameter& p) : node_(p.node_) {}  // NOLINT(google-explicit-constructor)
  Expr(const Variable& v) : node_(v.node_) {}   // NOLINT(google-explicit-constructor)
  explicit Expr(NodePtr node);

  const NodePtr& node() const noexcept { return node_; }
  bool is_complex() const noexcept { return node_->is_complex(); }
  std::size_t arity() const noexcept { return node_->free_variables().size(); }

  // Evaluation of variable-free expressions (or with explicit bindings).
  double value(const EvalContext& ctx = {}) const { return node_->eval_real(ctx); }
  Complex complex_value(const EvalContext& ctx = {}) const { return evaluate_node(*node_, ctx); }

 private:
  NodePtr node_;
};

enum class UnaryOp {
  neg, sin, cos, tan, asin, acos, atan, sinh, cosh, tanh,
  exp, log, log10, sqrt, abs, conj, re, im, norm, arg, step, sinc
};
enum class BinaryOp { add, sub, mul, div, pow, complex };

std::string_view op_name(UnaryOp op) noexcept;
std::string_view op_name(BinaryOp op) noexcept;
std::optional<UnaryOp> unary_op_from_name(std::string_view name) noexcept;

// New node referencing (not copying) the operands.
Expr compose(UnaryOp op, const Expr& a);
Expr compose(BinaryOp op, const Expr& a, const Expr& b);

inline Expr operator+(const Expr& a, const Expr& b) { return compose(BinaryOp::add, a, b); }
inline Expr operator-(const Expr& a, const Expr& b) { return compose(BinaryOp::sub, a, b); }
inline Expr operator*(const Expr& a, const Expr& b) { return compose(BinaryOp::mul, a, b); }
inline Expr operator/(const Expr& a, const Expr& b) { return compose(BinaryOp::div, a, b); }
inline Expr operator-(const Expr& a) { return compose(UnaryOp::neg, a); }

inline Expr pow(const Expr& a, const Expr& b) { return compose(BinaryOp::pow, a, b); }
inline Expr make_complex(const Expr& re, const Expr& im) {
  return compose(BinaryOp::complex, re, im);
}
inline Expr sin(const Expr& a) { return compose(UnaryOp::sin, a); }
inline Expr cos(const Expr& a) { return compose(UnaryOp::cos, a); }
inline Expr tan(const Expr& a) { return compose(UnaryOp::tan, a); }
inline Expr asin(const Expr& a) { return compose(UnaryOp::asin, a); }
inline Expr acos(const Expr& a) { return compose(UnaryOp::acos, a); }
inline Expr atan(const Expr& a) { return compose(UnaryOp::atan, a); }
inline Expr sinh(const Expr& a) { return compose(UnaryOp::sinh, a); }
inline Expr cosh(const Expr& a) { return compose(UnaryOp::cosh, a); }
inline Expr tanh(const Expr& a) { return compose(UnaryOp::tanh, a); }
inline Expr exp(const Expr& a) { return compose(UnaryOp::exp, a); }
inline Expr log(const Expr& a) { return compose(UnaryOp::log, a); }
inline Expr log10(const Expr& a) { return compose(UnaryOp::log10, a); }
inline Expr sqrt(const Expr& a) { return compose(UnaryOp::sqrt, a); }
inline Expr abs(const Expr& a) { return compose(UnaryOp::abs, a); }
inline Expr conj(const Expr& a) { return compose(UnaryOp::conj, a); }
inline Expr re(const Expr& a) { return compose(UnaryOp::re, a); }
inline Expr im(const Expr& a) { return compose(UnaryOp::im, a); }
// |a|^2
inline Expr norm(const Expr& a) { return compose(UnaryOp::norm, a); }
inline Expr arg(const Expr& a) { return compose(UnaryOp::arg, a); }
// Heaviside step, step(0) = 1/2.
inline Expr step(const Expr& a) { return compose(UnaryOp::step, a); }
// sin(x)/x with sinc(0) = 1.
inline Expr sinc(const Expr& a) { return compose(UnaryOp::sinc, a); }

// Independent, non-fixed parameter leaves reachable from the expressions,
// in depth-first discovery order, each node once.
std::vector<Parameter> free_parameters(const Expr& e);
std::vector<Parameter> free_parameters(std::span<const Expr> exprs);
// Same, including fixed parameters.
std::vector<Parameter> all_parameters(const Expr& e);
std::vector<Parameter> all_parameters(std::span<const Expr> exprs);
std::vector<Variable> free_variables(const Expr& e);

// An expression bound to an ordered list of (at most five) variables. The
// order fixes which coordinate array feeds which variable.
class Functor {
 public:
  using Columns = std::span<const std::span<const double>>;

  // `variables` must contain every free variable of `body`; extra variables
  // are allowed (the functor is then constant along them).
  Functor(std::string name, Expr body, std::vector<Variable> variables);
  // Variables in discovery order.
  Functor(std::string name, Expr body);

  const std::string& name() const noexcept { return name_; }
  const Expr& body() const noexcept { return body_; }
  const std::vector<Variable>& variables() const noexcept { return variables_; }
  std::size_t arity() const noexcept { return variables_.size(); }
  bool is_complex() const noexcept { return body_.is_complex(); }

  std::vector<double> evaluate(Columns coords, EvalDiagnostics* diag = nullptr) const;
  std::vector<double> evaluate(const std::vector<std::vector<double>>& coords,
                               EvalDiagnostics* diag = nullptr) const;
  std::vector<Complex> evaluate_complex(Columns coords, EvalDiagnostics* diag = nullptr) const;
  std::vector<Complex> evaluate_complex(const std::vector<std::vector<double>>& coords,
                                        EvalDiagnostics* diag = nullptr) const;

  double operator()(std::initializer_list<double> point) const;
  Complex call_complex(std::initializer_list<double> point) const;

 private:
  std::size_t check_columns(Columns coords) const;
  EvalContext bind(std::span<const double> point) const;

  std::string name_;
  Expr body_;
  std::vector<Variable> variables_;
};

}  // namespace scatfit
