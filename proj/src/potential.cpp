#include "scatfit/potential.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <string>

namespace scatfit {

namespace {

constexpr Complex kI{0.0, 1.0};

Point3 sub(const Point3& a, const Point3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double dot(const Point3& a, const Point3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Point3 cross(const Point3& a, const Point3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Point3 scaled(const Point3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double length(const Point3& a) { return std::sqrt(dot(a, a)); }

double sinc(double x) {
  if (std::abs(x) < 1e-4) return 1.0 - x * x / 6.0;
  return std::sin(x) / x;
}

Complex phase(double x) { return {std::cos(x), std::sin(x)}; }

// Σ_k i^k s_k for a power series whose k-th real coefficient is produced by
// `next(k)`; `bound(k)` caps |s_j| for all j >= k.
template <class Next, class Bound>
Complex imaginary_series(Next&& next, Bound&& bound) {
  Complex acc = 0.0;
  static constexpr Complex kPowers[4] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
  for (int k = 0; k < 200; ++k) {
    acc += kPowers[k % 4] * next(k);
    if (k >= 2 && bound(k + 1) <= 1e-18 * std::abs(acc)) break;
  }
  return acc;
}

// Orientation of c relative to segment ab in 2D.
double orient(const std::array<double, 2>& a, const std::array<double, 2>& b,
              const std::array<double, 2>& c) {
  return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
}

bool on_segment(const std::array<double, 2>& a, const std::array<double, 2>& b,
                const std::array<double, 2>& p) {
  return std::min(a[0], b[0]) <= p[0] && p[0] <= std::max(a[0], b[0]) &&
         std::min(a[1], b[1]) <= p[1] && p[1] <= std::max(a[1], b[1]);
}

bool segments_touch(const std::array<double, 2>& a, const std::array<double, 2>& b,
                    const std::array<double, 2>& c, const std::array<double, 2>& d) {
  const double o1 = orient(a, b, c), o2 = orient(a, b, d);
  const double o3 = orient(c, d, a), o4 = orient(c, d, b);
  if (((o1 > 0 && o2 < 0) || (o1 < 0 && o2 > 0)) && ((o3 > 0 && o4 < 0) || (o3 < 0 && o4 > 0)))
    return true;
  return (o1 == 0 && on_segment(a, b, c)) || (o2 == 0 && on_segment(a, b, d)) ||
         (o3 == 0 && on_segment(c, d, a)) || (o4 == 0 && on_segment(c, d, b));
}

void check_real_constant(const Expr& e, const std::string& what) {
  if (e.is_complex()) throw ValueError(what + " must be real");
  if (e.arity() != 0) throw ValueError(what + " must not depend on a variable");
}

Expr amplitude_of(const Material& m) {
  check_real_constant(m.sld_re, "material sld_re");
  check_real_constant(m.sld_im, "material sld_im");
  return make_complex(m.sld_re, m.sld_im);
}

void check_positions(const std::vector<Position>& positions) {
  if (positions.empty()) throw ValueError("potential needs at least one position");
  for (const Position& p : positions) {
    check_real_constant(p.x, "position");
    check_real_constant(p.y, "position");
    check_real_constant(p.z, "position");
  }
}

bool same_variables(const Potential& a, const Potential& b) {
  return a.variables() == b.variables();
}

}  // namespace

// ---------------------------------------------------------------------------
// Polyhedron

Polyhedron::Polyhedron(std::vector<Point3> vertices, std::vector<std::vector<std::size_t>> faces)
    : vertices_(std::move(vertices)), faces_(std::move(faces)) {
  if (vertices_.size() < 4) throw ValueError("polyhedron needs at least 4 vertices");
  if (faces_.size() < 4) throw ValueError("polyhedron needs at least 4 faces");
  Point3 lo = vertices_[0], hi = vertices_[0];
  for (const Point3& v : vertices_) {
    for (int i = 0; i < 3; ++i) {
      if (!std::isfinite(v[i])) throw ValueError("polyhedron vertex is not finite");
      lo[i] = std::min(lo[i], v[i]);
      hi[i] = std::max(hi[i], v[i]);
      ref_[i] += v[i] / static_cast<double>(vertices_.size());
    }
  }
  const double scale = length(sub(hi, lo));
  if (!(scale > 0)) throw ValueError("polyhedron vertices are all coincident");
  for (const Point3& v : vertices_) radius_ = std::max(radius_, length(sub(v, ref_)));

  std::map<std::pair<std::size_t, std::size_t>, int> directed;
  for (std::size_t fi = 0; fi < faces_.size(); ++fi) {
    const auto& ring = faces_[fi];
    const std::string where = "face " + std::to_string(fi);
    if (ring.size() < 3) throw ValueError(where + " has fewer than 3 vertices");
    for (std::size_t i = 0; i < ring.size(); ++i) {
      if (ring[i] >= vertices_.size()) throw ValueError(where + " references a missing vertex");
      for (std::size_t j = i + 1; j < ring.size(); ++j)
        if (ring[i] == ring[j]) throw ValueError(where + " repeats a vertex");
    }

    Point3 normal{};
    for (std::size_t i = 0; i < ring.size(); ++i)
      normal = [&] {
        const Point3 c = cross(vertices_[ring[i]], vertices_[ring[(i + 1) % ring.size()]]);
        return Point3{normal[0] + c[0], normal[1] + c[1], normal[2] + c[2]};
      }();
    const double twice_area = length(normal);
    if (!(twice_area > 1e-12 * scale * scale)) throw ValueError(where + " has zero area");
    const Point3 n = scaled(normal, 1.0 / twice_area);

    const Point3& v0 = vertices_[ring[0]];
    for (std::size_t i : ring)
      if (std::abs(dot(n, sub(vertices_[i], v0))) > 1e-9 * scale)
        throw ValueError(where + " is not planar");

    // Simplicity in the projection that drops the dominant normal axis.
    int drop = 0;
    for (int i = 1; i < 3; ++i)
      if (std::abs(n[i]) > std::abs(n[drop])) drop = i;
    const int u = (drop + 1) % 3, w = (drop + 2) % 3;
    auto flat = [&](std::size_t k) {
      const Point3& p = vertices_[ring[k % ring.size()]];
      return std::array<double, 2>{p[u], p[w]};
    };
    const std::size_t m = ring.size();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 2; j < m; ++j) {
        if (i == 0 && j == m - 1) continue;
        if (segments_touch(flat(i), flat(i + 1), flat(j), flat(j + 1)))
          throw ValueError(where + " is not a simple polygon");
      }

    for (std::size_t i = 0; i < m; ++i) {
      const auto key = std::make_pair(ring[i], ring[(i + 1) % m]);
      if (++directed[key] > 1)
        throw ValueError("edge " + std::to_string(key.first) + "-" + std::to_string(key.second) +
                         " is traversed twice in the same direction (inconsistent orientation)");
    }

    Face f;
    f.origin = sub(v0, ref_);
    f.n = n;
    f.radius = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const Point3 a = sub(vertices_[ring[i]], v0);
      const Point3 b = sub(vertices_[ring[(i + 1) % m]], v0);
      f.radius = std::max(f.radius, length(a));
      const Point3 t = sub(b, a);
      f.edges.push_back({scaled(Point3{a[0] + b[0], a[1] + b[1], a[2] + b[2]}, 0.5), t, cross(t, n)});
      if (i >= 1 && i + 1 < m) f.triangles.push_back({a, b, 0.5 * dot(cross(a, b), n)});
    }
    for (const Triangle& t : f.triangles) {
      const Point3 a = f.origin;
      const Point3 b{a[0] + t.a[0], a[1] + t.a[1], a[2] + t.a[2]};
      const Point3 c{a[0] + t.b[0], a[1] + t.b[1], a[2] + t.b[2]};
      const double vol = dot(a, cross(b, c)) / 6.0;
      tetras_.push_back({a, b, c, vol});
      volume_ += vol;
    }
    face_data_.push_back(std::move(f));
  }
  for (const auto& [key, count] : directed) {
    (void)count;
    if (!directed.count({key.second, key.first}))
      throw ValueError("surface is not closed: edge " + std::to_string(key.first) + "-" +
                       std::to_string(key.second) + " has no opposite");
  }
  if (!(volume_ > 1e-12 * scale * scale * scale))
    throw ValueError(volume_ < 0 ? "polyhedron faces are oriented inward"
                                 : "polyhedron has zero volume");
}

// Face integral of exp(i q.r) relative to the solid's reference point.
Complex Polyhedron::face_integral(const Face& f, const Point3& q) const {
  const double qn = dot(q, f.n);
  const Point3 q_par{q[0] - qn * f.n[0], q[1] - qn * f.n[1], q[2] - qn * f.n[2]};
  const double par2 = dot(q_par, q_par);
  const Complex origin_phase = phase(dot(q, f.origin));

  if (std::sqrt(par2) * f.radius < 1.0) {
    // Moment series: ∫_T (q.s)^k dS = 2 A k!/(k+2)! h_k(q.a, q.b).
    const std::size_t nt = f.triangles.size();
    std::vector<double> x(nt), y(nt), h1(nt, 0.0), h2(nt, 0.0);
    double total = 0;
    for (std::size_t t = 0; t < nt; ++t) {
      x[t] = dot(q, f.triangles[t].a);
      y[t] = dot(q, f.triangles[t].b);
      total += std::abs(2.0 * f.triangles[t].area);
    }
    const double rho = std::sqrt(par2) * f.radius;
    double inv_fact = 0.5;  // 1/(k+2)!
    const Complex sum = imaginary_series(
        [&](int k) {
          if (k > 0) inv_fact /= (k + 2);
          double s = 0;
          for (std::size_t t = 0; t < nt; ++t) {
            const double h = k == 0 ? 1.0 : (x[t] + y[t]) * h1[t] - x[t] * y[t] * h2[t];
            h2[t] = h1[t];
            h1[t] = h;
            s += 2.0 * f.triangles[t].area * h;
          }
          return s * inv_fact;
        },
        [&](int k) {
          double b = total * (k + 1) * std::pow(rho, k);
          for (int j = 1; j <= k + 2; ++j) b /= j;
          return b;
        });
    return origin_phase * sum;
  }

  Complex sum = 0.0;
  for (const Edge& e : f.edges)
    sum += dot(q, e.normal) * phase(dot(q, e.mid)) * sinc(0.5 * dot(q, e.vec));
  return origin_phase * sum / (kI * par2);
}

Complex Polyhedron::transform(const Point3& q) const {
  const double q2 = dot(q, q);
  const double rho = std::sqrt(q2) * radius_;
  Complex local;
  if (rho < 1.0) {
    // ∫_tet (q.s)^k dV = 6 V k!/(k+3)! h_k(q.a, q.b, q.c)
    const std::size_t nt = tetras_.size();
    std::vector<std::array<double, 3>> e(nt);
    std::vector<std::array<double, 3>> h(nt, {0.0, 0.0, 0.0});  // h_{k-1}, h_{k-2}, h_{k-3}
    double total = 0;
    for (std::size_t t = 0; t < nt; ++t) {
      const double a = dot(q, tetras_[t].a), b = dot(q, tetras_[t].b), c = dot(q, tetras_[t].c);
      e[t] = {a + b + c, a * b + b * c + c * a, a * b * c};
      total += std::abs(6.0 * tetras_[t].volume);
    }
    double inv_fact = 1.0 / 6.0;  // 1/(k+3)!
    local = imaginary_series(
        [&](int k) {
          if (k > 0) inv_fact /= (k + 3);
          double s = 0;
          for (std::size_t t = 0; t < nt; ++t) {
            auto& hk = h[t];
            const double v = k == 0 ? 1.0 : e[t][0] * hk[0] - e[t][1] * hk[1] + e[t][2] * hk[2];
            hk = {v, hk[0], hk[1]};
            s += 6.0 * tetras_[t].volume * v;
          }
          return s * inv_fact;
        },
        [&](int k) {
          double b = total * 0.5 * (k + 1) * (k + 2) * std::pow(rho, k);
          for (int j = 1; j <= k + 3; ++j) b /= j;
          return b;
        });
  } else {
    Complex sum = 0.0;
    for (const Face& f : face_data_) {
      const double qn = dot(q, f.n);
      if (qn != 0.0) sum += qn * face_integral(f, q);
    }
    local = sum / (kI * q2);
  }
  return phase(dot(q, ref_)) * local;
}

// ---------------------------------------------------------------------------
// Potential

Potential& Potential::add_term(PotentialTerm t) {
  check_positions(t.positions);
  if (t.amplitude.arity() != 0) throw ValueError("amplitude must not depend on a variable");
  if (const auto* b = std::get_if<BoxShape>(&t.shape)) {
    for (const Expr* w : {&b->wx, &b->wy, &b->wz}) {
      check_real_constant(*w, "box width");
      if (all_parameters(*w).empty() && !(w->value() > 0))
        throw ValueError("box widths must be > 0");
    }
  } else if (!std::get<std::shared_ptr<const Polyhedron>>(t.shape)) {
    throw ValueError("polyhedron shape is null");
  }
  terms_.push_back(std::move(t));
  return *this;
}

Complex Potential::form_factor(const Point3& q, const EvalContext& ctx) const {
  Complex total = 0.0;
  for (const PotentialTerm& t : terms_) {
    Complex shape;
    if (const auto* b = std::get_if<BoxShape>(&t.shape)) {
      const double wx = b->wx.value(ctx), wy = b->wy.value(ctx), wz = b->wz.value(ctx);
      if (!(wx > 0) || !(wy > 0) || !(wz > 0)) throw EvalError("box widths must be > 0");
      shape = wx * wy * wz * sinc(0.5 * q[0] * wx) * sinc(0.5 * q[1] * wy) * sinc(0.5 * q[2] * wz);
    } else {
      shape = std::get<std::shared_ptr<const Polyhedron>>(t.shape)->transform(q);
    }
    Complex lattice_sum = 0.0;
    for (const Position& p : t.positions)
      lattice_sum += phase(q[0] * p.x.value(ctx) + q[1] * p.y.value(ctx) + q[2] * p.z.value(ctx));
    total += t.amplitude.complex_value(ctx) * shape * lattice_sum;
  }
  return total;
}

std::vector<Expr> Potential::expressions() const {
  std::vector<Expr> out;
  for (const PotentialTerm& t : terms_) {
    out.push_back(t.amplitude);
    if (const auto* b = std::get_if<BoxShape>(&t.shape)) {
      out.push_back(b->wx);
      out.push_back(b->wy);
      out.push_back(b->wz);
    }
    for (const Position& p : t.positions) {
      out.push_back(p.x);
      out.push_back(p.y);
      out.push_back(p.z);
    }
  }
  return out;
}

Potential box(const Variable& qx, const Variable& qy, const Variable& qz, const Material& m,
              const Expr& wx, const Expr& wy, const Expr& wz, std::vector<Position> positions) {
  Potential v(qx, qy, qz);
  v.add_term({BoxShape{wx, wy, wz}, amplitude_of(m), std::move(positions)});
  return v;
}

Potential polyhedron(const Variable& qx, const Variable& qy, const Variable& qz,
                     const Material& m, std::shared_ptr<const Polyhedron> shape,
                     std::vector<Position> positions) {
  Potential v(qx, qy, qz);
  v.add_term({std::move(shape), amplitude_of(m), std::move(positions)});
  return v;
}

Potential combine(const Potential& a, CombineOp op, const Potential& b) {
  if (!same_variables(a, b)) throw ValueError("potentials use different variables");
  Potential out = a;
  for (PotentialTerm t : b.terms()) {
    if (op == CombineOp::subtract) t.amplitude = -t.amplitude;
    out.add_term(std::move(t));
  }
  return out;
}

Potential operator*(const Expr& alpha, const Potential& v) {
  if (alpha.arity() != 0) throw ValueError("potential scale must not depend on a variable");
  const auto& q = v.variables();
  Potential out(q[0], q[1], q[2]);
  for (PotentialTerm t : v.terms()) {
    t.amplitude = alpha * t.amplitude;
    out.add_term(std::move(t));
  }
  return out;
}

namespace {

class FormFactorNode final : public Node {
 public:
  explicit FormFactorNode(Potential v)
      : Node(NodeKind::special, true, children(v),
             {v.variables()[0].node(), v.variables()[1].node(), v.variables()[2].node()}),
        v_(std::move(v)) {}

  Complex eval_complex(const EvalContext& ctx) const override {
    const auto& q = v_.variables();
    return v_.form_factor(
        {ctx.variable(q[0].node()), ctx.variable(q[1].node()), ctx.variable(q[2].node())}, ctx);
  }

 private:
  static std::vector<NodePtr> children(const Potential& v) {
    const auto& q = v.variables();
    if (q[0] == q[1] || q[1] == q[2] || q[0] == q[2])
      throw ValueError("potential variables must be distinct");
    std::vector<NodePtr> out;
    for (const Expr& e : v.expressions()) out.push_back(e.node());
    for (const Variable& x : q) out.push_back(Expr(x).node());
    return out;
  }

  Potential v_;
};

class LatticeNode final : public Node {
 public:
  LatticeNode(const Variable& v, const Expr& period, int count)
      : Node(NodeKind::special, false, {period.node(), Expr(v).node()}, {v.node()}),
        v_(v.node()),
        period_(period.node()),
        n_(count) {
    check_real_constant(period, "lattice period");
    if (count < 1) throw ValueError("lattice count must be >= 1");
    if (all_parameters(period).empty() && !(period.value() > 0))
      throw ValueError("lattice period must be > 0");
  }

  double eval_real(const EvalContext& ctx) const override {
    const double t = period_->eval_real(ctx);
    if (!(t > 0)) throw EvalError("lattice period must be > 0");
    const double x = 0.5 * ctx.variable(v_) * t;
    // Reduce by multiples of π so the removable singularities sit at δ = 0.
    constexpr double pi_hi = 3.141592653589793116;
    constexpr double pi_lo = 1.2246467991473532e-16;
    const double m = std::round(x / std::numbers::pi);
    const double delta = (x - m * pi_hi) - m * pi_lo;
    const double n = n_;
    const double s = std::sin(delta);
    if (std::abs(s) < 1e-12) return n * n;
    const double r = std::sin(n * delta) / s;
    return r * r;
  }

 private:
  const VariableNode* v_;
  NodePtr period_;
  int n_;
};

}  // namespace

Expr form_factor(const Potential& v) { return Expr(std::make_shared<FormFactorNode>(v)); }

Functor lattice(const Variable& v, const Expr& period, int count, std::string name) {
  return Functor(std::move(name), Expr(std::make_shared<LatticeNode>(v, period, count)), {v});
}

Functor sas(const Potential& v, const Functor& l, std::string name) {
  const auto& q = v.variables();
  for (const Variable& x : l.variables())
    if (std::find(q.begin(), q.end(), x) == q.end())
      throw ValueError("lattice variable '" + x.name() + "' is not one of the potential's");
  if (l.is_complex()) throw ValueError("lattice functor must be real");
  Expr body = norm(form_factor(v)) * l.body();
  return Functor(std::move(name), std::move(body), {q[0], q[1], q[2]});
}

}  // namespace scatfit
