#include "scatfit/reflect.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>

namespace scatfit {

namespace {

constexpr double kFourPi = 4.0 * std::numbers::pi;

void check_expr(const Expr& e, const std::string& what) {
  if (e.is_complex()) throw ValueError(what + " must be real");
  if (e.arity() != 0) throw ValueError(what + " must not depend on a variable");
}

bool is_constant(const Expr& e) { return all_parameters(e).empty(); }

void check_material(const Material& m) {
  check_expr(m.sld_re, "material '" + m.name + "' sld_re");
  check_expr(m.sld_im, "material '" + m.name + "' sld_im");
}

void check_layer(const Layer& l) {
  check_material(l.material);
  const std::string who = "layer '" + l.name + "' ";
  check_expr(l.thickness, who + "thickness");
  check_expr(l.roughness, who + "roughness");
  check_expr(l.msld, who + "msld");
  if (is_constant(l.thickness) && !(l.thickness.value() >= 0))
    throw ValueError(who + "thickness must be >= 0");
  if (is_constant(l.roughness) && !(l.roughness.value() >= 0))
    throw ValueError(who + "roughness must be >= 0");
}

std::size_t repeat_count(double r) {
  const double n = std::round(r);
  if (!std::isfinite(r) || std::abs(r - n) > 1e-9 || n < 1)
    throw EvalError("stack repeats must be an integer >= 1, got " + std::to_string(r));
  return static_cast<std::size_t>(n);
}

double finite(const Expr& e, const EvalContext& ctx, const std::string& what) {
  const double v = e.value(ctx);
  if (!std::isfinite(v)) throw EvalError(what + " is not finite");
  return v;
}

LayerValues material_values(const Material& m, const EvalContext& ctx) {
  LayerValues v;
  v.sld_re = finite(m.sld_re, ctx, "material '" + m.name + "' sld_re");
  v.sld_im = finite(m.sld_im, ctx, "material '" + m.name + "' sld_im");
  return v;
}

LayerValues layer_values(const Layer& l, const EvalContext& ctx) {
  LayerValues v = material_values(l.material, ctx);
  const std::string who = "layer '" + l.name + "' ";
  v.msld = finite(l.msld, ctx, who + "msld");
  v.thickness = finite(l.thickness, ctx, who + "thickness");
  v.roughness = finite(l.roughness, ctx, who + "roughness");
  if (v.thickness < 0) throw EvalError(who + "thickness must be >= 0");
  if (v.roughness < 0) throw EvalError(who + "roughness must be >= 0");
  return v;
}

// Media ambient, layers..., substrate as one indexable sequence.
struct Media {
  const FlatSample& s;
  std::size_t size() const { return s.layers.size() + 2; }
  const LayerValues& operator[](std::size_t j) const {
    if (j == 0) return s.ambient;
    if (j == size() - 1) return s.substrate;
    return s.layers[j - 1];
  }
};

Complex wavevector(const LayerValues& m, const LayerValues& amb, double half_q, int magnetic) {
  const double re = m.sld_re + magnetic * m.msld - amb.sld_re;
  const Complex k2(half_q * half_q - kFourPi * re, kFourPi * (m.sld_im - amb.sld_im));
  Complex k = std::sqrt(k2);
  if (k.imag() < 0) k = -k;
  return k;
}

// Fresnel coefficient of the interface above medium j+1, with Névot–Croce damping.
Complex interface_r(Complex kj, Complex kn, double sigma) {
  const Complex den = kj + kn;
  if (den == Complex(0.0, 0.0)) return 0.0;
  Complex r = (kj - kn) / den;
  if (sigma > 0) r *= std::exp(-2.0 * kj * kn * sigma * sigma);
  return r;
}

using Mat2 = std::array<Complex, 4>;

Mat2 multiply(const Mat2& a, const Mat2& b) {
  return {a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3], a[2] * b[0] + a[3] * b[2],
          a[2] * b[1] + a[3] * b[3]};
}

// Only the ratio of entries matters; keeps the product in range for thick or
// strongly absorbing stacks.
void renormalize(Mat2& m) {
  double big = 0;
  for (const Complex& c : m) big = std::max(big, std::abs(c));
  if (big > 0 && std::isfinite(big))
    for (Complex& c : m) c /= big;
}

class ReflectivityNode final : public Node {
 public:
  ReflectivityNode(const Variable& q, Multilayer sample, Formalism f, std::optional<Expr> p_i,
                   std::optional<Expr> p_f)
      : Node(NodeKind::special, false, children(q, sample, p_i, p_f), {q.node()}),
        q_(q.node()),
        sample_(std::move(sample)),
        formalism_(f),
        p_i_(std::move(p_i)),
        p_f_(std::move(p_f)) {}

  double eval_real(const EvalContext& ctx) const override {
    const double Q = ctx.variable(q_);
    if (!std::isfinite(Q)) throw EvalError("reflectivity evaluated at non-finite Q");
    const FlatSample s = flatten(sample_, ctx);
    if (!p_i_) return reflectivity(s, Q, formalism_);
    const double pi = p_i_->value(ctx);
    const double pf = p_f_->value(ctx);
    if (!(std::abs(pi) <= 1) || !(std::abs(pf) <= 1))
      throw EvalError("polarization efficiencies must lie in [-1, 1]");
    const double rpp = reflectivity(s, Q, formalism_, +1);
    const double rmm = reflectivity(s, Q, formalism_, -1);
    return mix_channels(rpp, 0.0, 0.0, rmm, pi, pf);
  }

 private:
  static std::vector<NodePtr> children(const Variable& q, const Multilayer& s,
                                       const std::optional<Expr>& p_i,
                                       const std::optional<Expr>& p_f) {
    std::vector<NodePtr> out;
    for (const Expr& e : s.expressions()) out.push_back(e.node());
    for (const auto* p : {&p_i, &p_f})
      if (*p) {
        check_expr(**p, "polarization efficiency");
        if (is_constant(**p) && !(std::abs((*p)->value()) <= 1))
          throw ValueError("polarization efficiencies must lie in [-1, 1]");
        out.push_back((*p)->node());
      }
    out.push_back(Expr(q).node());
    return out;
  }

  const VariableNode* q_;
  Multilayer sample_;
  Formalism formalism_;
  std::optional<Expr> p_i_;
  std::optional<Expr> p_f_;
};

}  // namespace

Material make_material(std::string name, Expr sld_re, Expr sld_im) {
  Material m{std::move(name), std::move(sld_re), std::move(sld_im)};
  check_material(m);
  return m;
}

std::pair<double, double> refractive_terms(const Material& m, double wavelength) {
  if (!(wavelength > 0) || !std::isfinite(wavelength))
    throw ValueError("wavelength must be > 0");
  const LayerValues v = material_values(m, {});
  const double f = wavelength * wavelength / (2.0 * std::numbers::pi);
  return {f * v.sld_re, f * v.sld_im};
}

Layer make_layer(Material material, Expr thickness, Expr roughness, Expr msld, std::string name) {
  if (name.empty()) name = material.name;
  Layer l{std::move(name), std::move(material), std::move(thickness), std::move(roughness),
          std::move(msld)};
  check_layer(l);
  return l;
}

Multilayer::Multilayer(std::string name, Material ambient, Layer substrate)
    : name_(std::move(name)), ambient_(std::move(ambient)), substrate_(std::move(substrate)) {
  check_material(ambient_);
  check_layer(substrate_);
}

Multilayer& Multilayer::add(Layer layer) {
  check_layer(layer);
  items_.emplace_back(std::move(layer));
  return *this;
}

Multilayer& Multilayer::add(Stack stack) {
  if (stack.layers.empty()) throw ValueError("stack has no layers");
  for (const Layer& l : stack.layers) check_layer(l);
  check_expr(stack.repeats, "stack repeats");
  if (is_constant(stack.repeats)) {
    try {
      repeat_count(stack.repeats.value());
    } catch (const EvalError& e) {
      throw ValueError(e.what());
    }
  }
  items_.emplace_back(std::move(stack));
  return *this;
}

std::vector<Expr> Multilayer::expressions() const {
  std::vector<Expr> out;
  auto material = [&](const Material& m) {
    out.push_back(m.sld_re);
    out.push_back(m.sld_im);
  };
  auto layer = [&](const Layer& l) {
    material(l.material);
    out.push_back(l.thickness);
    out.push_back(l.roughness);
    out.push_back(l.msld);
  };
  material(ambient_);
  for (const Item& it : items_) {
    if (const auto* l = std::get_if<Layer>(&it)) {
      layer(*l);
    } else {
      const auto& s = std::get<Stack>(it);
      for (const Layer& l2 : s.layers) layer(l2);
      out.push_back(s.repeats);
    }
  }
  layer(substrate_);
  return out;
}

std::vector<Layer> Multilayer::layers(const EvalContext& ctx) const {
  std::vector<Layer> out;
  for (const Item& it : items_) {
    if (const auto* l = std::get_if<Layer>(&it)) {
      out.push_back(*l);
      continue;
    }
    const auto& s = std::get<Stack>(it);
    const std::size_t n = repeat_count(s.repeats.value(ctx));
    for (std::size_t r = 0; r < n; ++r) out.insert(out.end(), s.layers.begin(), s.layers.end());
  }
  return out;
}

FlatSample flatten(const Multilayer& s, const EvalContext& ctx) {
  FlatSample out;
  out.ambient = material_values(s.ambient(), ctx);
  for (const auto& it : s.items()) {
    if (const auto* l = std::get_if<Layer>(&it)) {
      out.layers.push_back(layer_values(*l, ctx));
      continue;
    }
    const auto& st = std::get<Stack>(it);
    const std::size_t n = repeat_count(st.repeats.value(ctx));
    std::vector<LayerValues> block;
    for (const Layer& l : st.layers) block.push_back(layer_values(l, ctx));
    for (std::size_t r = 0; r < n; ++r) out.layers.insert(out.layers.end(), block.begin(), block.end());
  }
  out.substrate = layer_values(s.substrate(), ctx);
  out.substrate.thickness = 0;
  return out;
}

Complex reflection_amplitude(const FlatSample& s, double Q, Formalism f, int magnetic) {
  const Media media{s};
  const std::size_t n = media.size();
  const double half_q = 0.5 * std::abs(Q);
  std::vector<Complex> k(n);
  for (std::size_t j = 0; j < n; ++j) k[j] = wavevector(media[j], s.ambient, half_q, magnetic);

  if (f == Formalism::parratt) {
    Complex x = 0.0;
    for (std::size_t j = n - 1; j-- > 0;) {
      const Complex r = interface_r(k[j], k[j + 1], media[j + 1].roughness);
      if (j + 1 == n - 1) {
        x = r;
        continue;
      }
      const Complex xe = x * std::exp(Complex(0.0, 2.0) * k[j + 1] * media[j + 1].thickness);
      x = (r + xe) / (1.0 + r * xe);
    }
    return x;
  }

  auto interface = [&](std::size_t j) {
    const Complex r = interface_r(k[j], k[j + 1], media[j + 1].roughness);
    return Mat2{1.0, r, r, 1.0};
  };
  Mat2 m = interface(0);
  for (std::size_t j = 1; j + 1 < n; ++j) {
    const Complex phase = std::exp(Complex(0.0, 1.0) * k[j] * media[j].thickness);
    const Mat2 p{1.0 / phase, 0.0, 0.0, phase};
    m = multiply(multiply(m, p), interface(j));
    renormalize(m);
  }
  return m[2] / m[0];
}

double reflectivity(const FlatSample& s, double Q, Formalism f, int magnetic) {
  const double r = std::norm(reflection_amplitude(s, Q, f, magnetic));
  if (!std::isfinite(r)) throw EvalError("reflectivity is not finite");
  return r;
}

Functor specrefl(const Variable& q, const Multilayer& s, Formalism f, std::string name) {
  Expr body(std::make_shared<ReflectivityNode>(q, s, f, std::nullopt, std::nullopt));
  return Functor(std::move(name), std::move(body), {q});
}

double mix_channels(double rpp, double rpm, double rmp, double rmm, double p_i, double p_f) {
  if (!(std::abs(p_i) <= 1) || !(std::abs(p_f) <= 1))
    throw ValueError("polarization efficiencies must lie in [-1, 1]");
  const double ip = (1 + p_i) / 2, im = (1 - p_i) / 2;
  const double fp = (1 + p_f) / 2, fm = (1 - p_f) / 2;
  return ip * fp * rpp + ip * fm * rpm + im * fp * rmp + im * fm * rmm;
}

Functor pnrspec(const Variable& q, const Multilayer& s, const Expr& p_i, const Expr& p_f,
                Formalism f, std::string name) {
  Expr body(std::make_shared<ReflectivityNode>(q, s, f, p_i, p_f));
  return Functor(std::move(name), std::move(body), {q});
}

std::vector<double> sld_profile(const Multilayer& s, std::span<const double> z,
                                ProfileComponent c, const EvalContext& ctx) {
  const FlatSample fs = flatten(s, ctx);
  const Media media{fs};
  auto pick = [c](const LayerValues& v) {
    switch (c) {
      case ProfileComponent::sld_im: return v.sld_im;
      case ProfileComponent::msld: return v.msld;
      case ProfileComponent::sld_re: break;
    }
    return v.sld_re;
  };

  struct Step {
    double z, delta, sigma;
  };
  std::vector<Step> steps;
  double depth = 0;
  for (std::size_t j = 1; j < media.size(); ++j) {
    steps.push_back({depth, pick(media[j]) - pick(media[j - 1]), media[j].roughness});
    depth += media[j].thickness;
  }

  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    double v = pick(fs.ambient);
    for (const Step& st : steps) {
      const double d = z[i] - st.z;
      double w;
      if (st.sigma > 0)
        w = 0.5 * (1.0 + std::erf(d / (std::numbers::sqrt2 * st.sigma)));
      else
        w = d > 0 ? 1.0 : (d < 0 ? 0.0 : 0.5);
      v += st.delta * w;
    }
    out[i] = v;
  }
  return out;
}

}  // namespace scatfit
