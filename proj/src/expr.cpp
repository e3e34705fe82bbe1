#include "scatfit/expr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <unordered_set>

namespace scatfit {

// ---------------------------------------------------------------------------
// EvalContext

double EvalContext::variable(const VariableNode* v) const {
  for (std::size_t i = 0; i < n_vars_; ++i)
    if (vars_[i].first == v) return vars_[i].second;
  throw EvalError("variable '" + v->name() + "' is not bound");
}

bool EvalContext::has_variable(const VariableNode* v) const noexcept {
  for (std::size_t i = 0; i < n_vars_; ++i)
    if (vars_[i].first == v) return true;
  return false;
}

void EvalContext::bind(const VariableNode* v, double value) {
  for (std::size_t i = 0; i < n_vars_; ++i) {
    if (vars_[i].first == v) {
      vars_[i].second = value;
      return;
    }
  }
  if (n_vars_ == kCapacity) throw EvalError("too many nested variable bindings");
  vars_[n_vars_++] = {v, value};
}

EvalContext EvalContext::with_override(const ParameterNode* p, double effective_value) const {
  EvalContext c = *this;
  for (std::size_t i = 0; i < c.n_overrides_; ++i) {
    if (c.overrides_[i].first == p) {
      c.overrides_[i].second = effective_value;
      return c;
    }
  }
  if (c.n_overrides_ == kCapacity) throw EvalError("too many nested parameter overrides");
  c.overrides_[c.n_overrides_++] = {p, effective_value};
  return c;
}

// ---------------------------------------------------------------------------
// Node

Node::Node(NodeKind kind, bool is_complex, std::vector<NodePtr> children)
    : kind_(kind), complex_(is_complex), children_(std::move(children)) {
  if (kind == NodeKind::variable)
    free_vars_ = {static_cast<const VariableNode*>(this)};
  else
    free_vars_ = union_variables(children_);
}

Node::Node(NodeKind kind, bool is_complex, std::vector<NodePtr> children,
           std::vector<const VariableNode*> free_vars)
    : kind_(kind),
      complex_(is_complex),
      children_(std::move(children)),
      free_vars_(std::move(free_vars)) {
  if (free_vars_.size() > kMaxVariables)
    throw ValueError("functors support at most 5 variables");
}

double Node::eval_real(const EvalContext&) const {
  throw EvalError("complex expression used where a real value is required");
}

void Node::print(std::ostream&) const {
  throw ValueError("expression contains a functor without a textual form");
}

std::vector<const VariableNode*> union_variables(std::span<const NodePtr> nodes) {
  std::vector<const VariableNode*> out;
  for (const auto& n : nodes) {
    for (const auto* v : n->free_variables())
      if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  }
  if (out.size() > kMaxVariables) throw ValueError("functors support at most 5 variables");
  return out;
}

bool Bounds::finite() const noexcept { return std::isfinite(lo) && std::isfinite(hi); }

namespace {

void print_number(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  if (v < 0)
    os << '(' << buf << ')';
  else
    os << buf;
}

std::string next_parameter_id() {
  static std::atomic<unsigned long> counter{0};
  return "p" + std::to_string(counter.fetch_add(1, std::memory_order_relaxed));
}

class ConstantNode final : public Node {
 public:
  explicit ConstantNode(Complex v) : Node(NodeKind::constant, v.imag() != 0.0, {}), value_(v) {}
  double eval_real(const EvalContext&) const override { return value_.real(); }
  Complex eval_complex(const EvalContext&) const override { return value_; }
  void print(std::ostream& os) const override {
    if (value_.imag() == 0.0) {
      print_number(os, value_.real());
    } else {
      os << "complex(";
      print_number(os, value_.real());
      os << ", ";
      print_number(os, value_.imag());
      os << ')';
    }
  }

 private:
  Complex value_;
};

bool yields_real(UnaryOp op) {
  switch (op) {
    case UnaryOp::abs:
    case UnaryOp::re:
    case UnaryOp::im:
    case UnaryOp::norm:
    case UnaryOp::arg:
      return true;
    default:
      return false;
  }
}

double real_sinc(double x) {
  if (std::abs(x) < 1e-4) {
    const double x2 = x * x;
    return 1.0 - x2 / 6.0 + x2 * x2 / 120.0;
  }
  return std::sin(x) / x;
}

Complex complex_sinc(Complex z) {
  if (std::abs(z) < 1e-4) {
    const Complex z2 = z * z;
    return 1.0 - z2 / 6.0 + z2 * z2 / 120.0;
  }
  return std::sin(z) / z;
}

double apply_real(UnaryOp op, double x) {
  switch (op) {
    case UnaryOp::neg: return -x;
    case UnaryOp::sin: return std::sin(x);
    case UnaryOp::cos: return std::cos(x);
    case UnaryOp::tan: return std::tan(x);
    case UnaryOp::asin: return std::asin(x);
    case UnaryOp::acos: return std::acos(x);
    case UnaryOp::atan: return std::atan(x);
    case UnaryOp::sinh: return std::sinh(x);
    case UnaryOp::cosh: return std::cosh(x);
    case UnaryOp::tanh: return std::tanh(x);
    case UnaryOp::exp: return std::exp(x);
    case UnaryOp::log: return std::log(x);
    case UnaryOp::log10: return std::log10(x);
    case UnaryOp::sqrt: return std::sqrt(x);
    case UnaryOp::abs: return std::abs(x);
    case UnaryOp::conj: return x;
    case UnaryOp::re: return x;
    case UnaryOp::im: return 0.0;
    case UnaryOp::norm: return x * x;
    case UnaryOp::arg: return x < 0 ? std::numbers::pi : (std::isnan(x) ? x : 0.0);
    case UnaryOp::step:
      if (std::isnan(x)) return x;
      return x > 0 ? 1.0 : (x < 0 ? 0.0 : 0.5);
    case UnaryOp::sinc: return real_sinc(x);
  }
  return std::numeric_limits<double>::quiet_NaN();
}

Complex apply_complex(UnaryOp op, Complex z) {
  switch (op) {
    case UnaryOp::neg: return -z;
    case UnaryOp::sin: return std::sin(z);
    case UnaryOp::cos: return std::cos(z);
    case UnaryOp::tan: return std::tan(z);
    case UnaryOp::asin: return std::asin(z);
    case UnaryOp::acos: return std::acos(z);
    case UnaryOp::atan: return std::atan(z);
    case UnaryOp::sinh: return std::sinh(z);
    case UnaryOp::cosh: return std::cosh(z);
    case UnaryOp::tanh: return std::tanh(z);
    case UnaryOp::exp: return std::exp(z);
    case UnaryOp::log: return std::log(z);
    case UnaryOp::log10: return std::log10(z);
    case UnaryOp::sqrt: return std::sqrt(z);
    case UnaryOp::conj: return std::conj(z);
    case UnaryOp::abs: return std::abs(z);
    case UnaryOp::re: return z.real();
    case UnaryOp::im: return z.imag();
    case UnaryOp::norm: return std::norm(z);
    case UnaryOp::arg: return std::arg(z);
    case UnaryOp::sinc: return complex_sinc(z);
    case UnaryOp::step: break;
  }
  return {std::numeric_limits<double>::quiet_NaN(), 0.0};
}

class UnaryNode final : public Node {
 public:
  UnaryNode(UnaryOp op, NodePtr a)
      : Node(NodeKind::unary, a->is_complex() && !yields_real(op), {a}), op_(op), arg_(a.get()) {}

  double eval_real(const EvalContext& ctx) const override {
    if (is_complex()) return Node::eval_real(ctx);
    if (arg_->is_complex()) return apply_complex(op_, arg_->eval_complex(ctx)).real();
    return apply_real(op_, arg_->eval_real(ctx));
  }
  Complex eval_complex(const EvalContext& ctx) const override {
    if (arg_->is_complex()) return apply_complex(op_, arg_->eval_complex(ctx));
    return apply_real(op_, arg_->eval_real(ctx));
  }
  void print(std::ostream& os) const override {
    if (op_ == UnaryOp::neg) {
      os << "(-";
      arg_->print(os);
      os << ')';
      return;
    }
    os << op_name(op_) << '(';
    arg_->print(os);
    os << ')';
  }

 private:
  UnaryOp op_;
  const Node* arg_;
};

double apply_real(BinaryOp op, double a, double b) {
  switch (op) {
    case BinaryOp::add: return a + b;
    case BinaryOp::sub: return a - b;
    case BinaryOp::mul: return a * b;
    case BinaryOp::div: return a / b;
    case BinaryOp::pow: return std::pow(a, b);
    case BinaryOp::complex: return a;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

Complex apply_complex(BinaryOp op, Complex a, Complex b) {
  switch (op) {
    case BinaryOp::add: return a + b;
    case BinaryOp::sub: return a - b;
    case BinaryOp::mul: return a * b;
    case BinaryOp::div: return a / b;
    case BinaryOp::pow:
      if (b.imag() == 0.0) return std::pow(a, b.real());
      return std::pow(a, b);
    case BinaryOp::complex: return {a.real(), b.real()};
  }
  return {std::numeric_limits<double>::quiet_NaN(), 0.0};
}

class BinaryNode final : public Node {
 public:
  BinaryNode(BinaryOp op, NodePtr a, NodePtr b)
      : Node(NodeKind::binary,
             op == BinaryOp::complex || a->is_complex() || b->is_complex(), {a, b}),
        op_(op),
        lhs_(a.get()),
        rhs_(b.get()) {}

  double eval_real(const EvalContext& ctx) const override {
    if (is_complex()) return Node::eval_real(ctx);
    return apply_real(op_, lhs_->eval_real(ctx), rhs_->eval_real(ctx));
  }
  Complex eval_complex(const EvalContext& ctx) const override {
    if (!is_complex()) return eval_real(ctx);
    return apply_complex(op_, evaluate_node(*lhs_, ctx), evaluate_node(*rhs_, ctx));
  }
  void print(std::ostream& os) const override {
    if (op_ == BinaryOp::pow || op_ == BinaryOp::complex) {
      os << op_name(op_) << '(';
      lhs_->print(os);
      os << ", ";
      rhs_->print(os);
      os << ')';
      return;
    }
    os << '(';
    lhs_->print(os);
    os << ' ' << op_name(op_) << ' ';
    rhs_->print(os);
    os << ')';
  }

 private:
  BinaryOp op_;
  const Node* lhs_;
  const Node* rhs_;
};

template <class Visit>
void depth_first(std::span<const Expr> roots, Visit&& visit) {
  std::unordered_set<const Node*> seen;
  std::vector<const Node*> stack;
  for (auto it = roots.rbegin(); it != roots.rend(); ++it) stack.push_back(it->node().get());
  while (!stack.empty()) {
    const Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    visit(n);
    const auto& ch = n->children();
    for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(it->get());
  }
}

std::vector<Parameter> collect_parameters(std::span<const Expr> exprs, bool include_fixed) {
  std::vector<Parameter> out;
  depth_first(exprs, [&](const Node* n) {
    if (n->kind() != NodeKind::parameter) return;
    Parameter p = Parameter::from_node(static_cast<const ParameterNode*>(n));
    if (include_fixed || !p.fixed()) out.push_back(std::move(p));
  });
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameter

ParameterNode::ParameterNode(std::string name, double raw_value, double scale,
                             std::optional<Bounds> bounds, bool fixed, std::string units)
    : Node(NodeKind::parameter, false, {}),
      raw_(raw_value),
      scale_(scale),
      fixed_(fixed),
      name_(std::move(name)),
      id_(next_parameter_id()),
      units_(std::move(units)),
      bounds_(bounds) {}

void ParameterNode::print(std::ostream& os) const {
  std::lock_guard lock(meta_mutex_);
  os << name_;
}

Parameter::Parameter(std::string name, double value, double scale, std::optional<Bounds> bounds,
                     bool fixed, std::string units) {
  if (scale == 0.0 || !std::isfinite(scale))
    throw ValueError("parameter '" + name + "': scale must be finite and non-zero");
  if (!std::isfinite(value)) throw ValueError("parameter '" + name + "': value must be finite");
  if (bounds) {
    if (!(bounds->lo <= bounds->hi))
      throw ValueError("parameter '" + name + "': lower bound exceeds upper bound");
    if (!bounds->contains(value))
      throw ValueError("parameter '" + name + "': value outside bounds");
  }
  node_ = std::make_shared<ParameterNode>(std::move(name), value, scale, bounds, fixed,
                                          std::move(units));
}

Parameter Parameter::from_node(const ParameterNode* node) {
  return Parameter(std::const_pointer_cast<ParameterNode>(node->shared_from_this()));
}

std::string Parameter::name() const {
  std::lock_guard lock(node_->meta_mutex_);
  return node_->name_;
}

std::string Parameter::id() const {
  std::lock_guard lock(node_->meta_mutex_);
  return node_->id_;
}

void Parameter::set_id(std::string id) {
  std::lock_guard lock(node_->meta_mutex_);
  node_->id_ = std::move(id);
}

std::string Parameter::units() const {
  std::lock_guard lock(node_->meta_mutex_);
  return node_->units_;
}

void Parameter::set_raw_value(double raw) {
  if (!std::isfinite(raw)) throw ValueError("parameter '" + name() + "': value must be finite");
  {
    std::lock_guard lock(node_->meta_mutex_);
    if (node_->bounds_ && !node_->bounds_->contains(raw))
      throw ValueError("parameter '" + node_->name_ + "': value " + std::to_string(raw) +
                       " outside bounds [" + std::to_string(node_->bounds_->lo) + ", " +
                       std::to_string(node_->bounds_->hi) + "]");
  }
  node_->raw_.store(raw, std::memory_order_relaxed);
}

std::optional<Bounds> Parameter::bounds() const {
  std::lock_guard lock(node_->meta_mutex_);
  return node_->bounds_;
}

void Parameter::set_bounds(std::optional<Bounds> bounds) {
  std::lock_guard lock(node_->meta_mutex_);
  if (bounds) {
    if (!(bounds->lo <= bounds->hi))
      throw ValueError("parameter '" + node_->name_ + "': lower bound exceeds upper bound");
    if (!bounds->contains(node_->raw_.load()))
      throw ValueError("parameter '" + node_->name_ + "': current value outside new bounds");
  }
  node_->bounds_ = bounds;
}

std::optional<double> Parameter::error() const {
  std::lock_guard lock(node_->meta_mutex_);
  return node_->error_;
}

void Parameter::set_error(std::optional<double> error) {
  std::lock_guard lock(node_->meta_mutex_);
  node_->error_ = error;
}

// ---------------------------------------------------------------------------
// Variable

VariableNode::VariableNode(std::string name)
    : Node(NodeKind::variable, false, {}), name_(std::move(name)) {}

void VariableNode::print(std::ostream& os) const { os << name_; }

Variable::Variable(std::string name) : node_(std::make_shared<VariableNode>(std::move(name))) {}

Variable Variable::from_node(const VariableNode* node) {
  return Variable(node->shared_from_this());
}

// ---------------------------------------------------------------------------
// Expr

Expr::Expr(double c) : node_(std::make_shared<ConstantNode>(Complex(c, 0.0))) {}
Expr::Expr(Complex c) : node_(std::make_shared<ConstantNode>(c)) {}
Expr::Expr(NodePtr node) : node_(std::move(node)) {
  if (!node_) throw ValueError("null expression node");
}

std::string_view op_name(UnaryOp op) noexcept {
  switch (op) {
    case UnaryOp::neg: return "-";
    case UnaryOp::sin: return "sin";
    case UnaryOp::cos: return "cos";
    case UnaryOp::tan: return "tan";
    case UnaryOp::asin: return "asin";
    case UnaryOp::acos: return "acos";
    case UnaryOp::atan: return "atan";
    case UnaryOp::sinh: return "sinh";
    case UnaryOp::cosh: return "cosh";
    case UnaryOp::tanh: return "tanh";
    case UnaryOp::exp: return "exp";
    case UnaryOp::log: return "log";
    case UnaryOp::log10: return "log10";
    case UnaryOp::sqrt: return "sqrt";
    case UnaryOp::abs: return "abs";
    case UnaryOp::conj: return "conj";
    case UnaryOp::re: return "re";
    case UnaryOp::im: return "im";
    case UnaryOp::norm: return "norm";
    case UnaryOp::arg: return "arg";
    case UnaryOp::step: return "step";
    case UnaryOp::sinc: return "sinc";
  }
  return "?";
}

std::string_view op_name(BinaryOp op) noexcept {
  switch (op) {
    case BinaryOp::add: return "+";
    case BinaryOp::sub: return "-";
    case BinaryOp::mul: return "*";
    case BinaryOp::div: return "/";
    case BinaryOp::pow: return "pow";
    case BinaryOp::complex: return "complex";
  }
  return "?";
}

std::optional<UnaryOp> unary_op_from_name(std::string_view name) noexcept {
  static constexpr UnaryOp all[] = {
      UnaryOp::sin,  UnaryOp::cos,  UnaryOp::tan,   UnaryOp::asin, UnaryOp::acos, UnaryOp::atan,
      UnaryOp::sinh, UnaryOp::cosh, UnaryOp::tanh,  UnaryOp::exp,  UnaryOp::log,  UnaryOp::log10,
      UnaryOp::sqrt, UnaryOp::abs,  UnaryOp::conj,  UnaryOp::re,   UnaryOp::im,   UnaryOp::norm,
      UnaryOp::arg,  UnaryOp::step, UnaryOp::sinc};
  for (UnaryOp op : all)
    if (op_name(op) == name) return op;
  return std::nullopt;
}

Expr compose(UnaryOp op, const Expr& a) {
  if (op == UnaryOp::step && a.is_complex())
    throw ValueError("step() is defined for real arguments only");
  return Expr(std::make_shared<UnaryNode>(op, a.node()));
}

Expr compose(BinaryOp op, const Expr& a, const Expr& b) {
  if (op == BinaryOp::complex && (a.is_complex() || b.is_complex()))
    throw ValueError("complex(re, im) takes real arguments");
  return Expr(std::make_shared<BinaryNode>(op, a.node(), b.node()));
}

std::vector<Parameter> free_parameters(const Expr& e) {
  return collect_parameters(std::span<const Expr>(&e, 1), false);
}
std::vector<Parameter> free_parameters(std::span<const Expr> exprs) {
  return collect_parameters(exprs, false);
}
std::vector<Parameter> all_parameters(const Expr& e) {
  return collect_parameters(std::span<const Expr>(&e, 1), true);
}
std::vector<Parameter> all_parameters(std::span<const Expr> exprs) {
  return collect_parameters(exprs, true);
}

std::vector<Variable> free_variables(const Expr& e) {
  std::vector<Variable> out;
  for (const auto* v : e.node()->free_variables()) out.push_back(Variable::from_node(v));
  return out;
}

// ---------------------------------------------------------------------------
// Functor

Functor::Functor(std::string name, Expr body, std::vector<Variable> variables)
    : name_(std::move(name)), body_(std::move(body)), variables_(std::move(variables)) {
  if (variables_.size() > kMaxVariables)
    throw ValueError("functor '" + name_ + "': at most 5 variables are supported");
  for (std::size_t i = 0; i < variables_.size(); ++i)
    for (std::size_t j = i + 1; j < variables_.size(); ++j)
      if (variables_[i] == variables_[j])
        throw ValueError("functor '" + name_ + "': variable '" + variables_[i].name() +
                         "' listed twice");
  for (const Variable& v : free_variables(body_)) {
    if (std::find(variables_.begin(), variables_.end(), v) == variables_.end())
      throw ValueError("functor '" + name_ + "': free variable '" + v.name() +
                       "' is not among the functor variables");
  }
}

Functor::Functor(std::string name, Expr body)
    : Functor(name, body, free_variables(body)) {}

std::size_t Functor::check_columns(Columns coords) const {
  if (coords.size() != variables_.size())
    throw ValueError("functor '" + name_ + "' expects " + std::to_string(variables_.size()) +
                     " coordinate arrays, got " + std::to_string(coords.size()));
  if (coords.empty()) return 1;
  const std::size_t n = coords[0].size();
  for (const auto& c : coords)
    if (c.size() != n) throw ValueError("functor '" + name_ + "': coordinate length mismatch");
  return n;
}

EvalContext Functor::bind(std::span<const double> point) const {
  EvalContext ctx;
  for (std::size_t k = 0; k < variables_.size(); ++k) ctx.bind(variables_[k].node(), point[k]);
  return ctx;
}

std::vector<double> Functor::evaluate(Columns coords, EvalDiagnostics* diag) const {
  if (is_complex())
    throw ValueError("functor '" + name_ + "' is complex-valued; use evaluate_complex");
  const std::size_t n = check_columns(coords);
  const std::size_t n_out = coords.empty() ? 0 : n;
  std::vector<double> out(n_out);
  std::array<double, kMaxVariables> point{};
  for (std::size_t i = 0; i < n_out; ++i) {
    for (std::size_t k = 0; k < coords.size(); ++k) point[k] = coords[k][i];
    EvalContext ctx = bind(std::span<const double>(point.data(), coords.size()));
    ctx.set_diagnostics(diag);
    out[i] = body_.node()->eval_real(ctx);
  }
  return out;
}

std::vector<Complex> Functor::evaluate_complex(Columns coords, EvalDiagnostics* diag) const {
  const std::size_t n = check_columns(coords);
  const std::size_t n_out = coords.empty() ? 0 : n;
  std::vector<Complex> out(n_out);
  std::array<double, kMaxVariables> point{};
  for (std::size_t i = 0; i < n_out; ++i) {
    for (std::size_t k = 0; k < coords.size(); ++k) point[k] = coords[k][i];
    EvalContext ctx = bind(std::span<const double>(point.data(), coords.size()));
    ctx.set_diagnostics(diag);
    out[i] = evaluate_node(*body_.node(), ctx);
  }
  return out;
}

namespace {
std::vector<std::span<const double>> as_spans(const std::vector<std::vector<double>>& coords) {
  std::vector<std::span<const double>> spans;
  spans.reserve(coords.size());
  for (const auto& c : coords) spans.emplace_back(c);
  return spans;
}
}  // namespace

std::vector<double> Functor::evaluate(const std::vector<std::vector<double>>& coords,
                                      EvalDiagnostics* diag) const {
  auto spans = as_spans(coords);
  return evaluate(Columns(spans), diag);
}

std::vector<Complex> Functor::evaluate_complex(const std::vector<std::vector<double>>& coords,
                                               EvalDiagnostics* diag) const {
  auto spans = as_spans(coords);
  return evaluate_complex(Columns(spans), diag);
}

double Functor::operator()(std::initializer_list<double> point) const {
  if (point.size() != variables_.size())
    throw ValueError("functor '" + name_ + "': wrong number of coordinates");
  if (is_complex())
    throw ValueError("functor '" + name_ + "' is complex-valued; use call_complex");
  return body_.node()->eval_real(bind(std::span<const double>(point.begin(), point.size())));
}

Complex Functor::call_complex(std::initializer_list<double> point) const {
  if (point.size() != variables_.size())
    throw ValueError("functor '" + name_ + "': wrong number of coordinates");
  return evaluate_node(*body_.node(), bind(std::span<const double>(point.begin(), point.size())));
}

}  // namespace scatfit
