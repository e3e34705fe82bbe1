#pragma once

// Structured samples: sums of positioned shapes carrying an SLD amplitude,
// their Fourier transforms, one-dimensional lattice factors and small-angle
// scattering intensity.
//
//   F(q) = sum over terms  sign * amplitude * ∫_shape exp(i q.r) d³r * sum_pos exp(i q.r_pos)
//
// Overlapping terms are not detected; they simply add.

#include <array>
#include <cstddef>
#include <memory>
#include <variant>
#include <vector>

#include "scatfit/expr.hpp"
#include "scatfit/reflect.hpp"

namespace scatfit {

using Point3 = std::array<double, 3>;

struct Position {
  Expr x = 0.0, y = 0.0, z = 0.0;
};

// Closed polyhedral surface. Faces are vertex-index rings, counter-clockwise
// when seen from outside. Construction validates planarity, simplicity,
// closure and orientation and throws ValueError otherwise.
class Polyhedron {
 public:
  Polyhedron(std::vector<Point3> vertices, std::vector<std::vector<std::size_t>> faces);

  const std::vector<Point3>& vertices() const noexcept { return vertices_; }
  const std::vector<std::vector<std::size_t>>& faces() const noexcept { return faces_; }
  double volume() const noexcept { return volume_; }

  // ∫ exp(i q.r) over the solid, in the vertices' own frame.
  Complex transform(const Point3& q) const;

 private:
  struct Triangle {
    Point3 a, b;  // relative to the face origin
    double area;  // signed against the face normal
  };
  struct Edge {
    Point3 mid;     // relative to the face origin
    Point3 vec;
    Point3 normal;  // vec x n
  };
  struct Face {
    Point3 origin;  // relative to the solid's reference point
    Point3 n;
    double radius;
    std::vector<Triangle> triangles;
    std::vector<Edge> edges;
  };
  struct Tetra {
    Point3 a, b, c;
    double volume;
  };

  Complex face_integral(const Face& f, const Point3& q) const;

  std::vector<Point3> vertices_;
  std::vector<std::vector<std::size_t>> faces_;
  Point3 ref_{};
  double radius_ = 0;
  double volume_ = 0;
  std::vector<Face> face_data_;
  std::vector<Tetra> tetras_;
};

struct BoxShape {
  Expr wx, wy, wz;
};

using Shape = std::variant<BoxShape, std::shared_ptr<const Polyhedron>>;

struct PotentialTerm {
  Shape shape;
  Expr amplitude;
  std::vector<Position> positions;
};

class Potential {
 public:
  Potential(const Variable& qx, const Variable& qy, const Variable& qz)
      : vars_{qx, qy, qz} {}

  const std::array<Variable, 3>& variables() const noexcept { return vars_; }
  const std::vector<PotentialTerm>& terms() const noexcept { return terms_; }
  Potential& add_term(PotentialTerm t);

  Complex form_factor(const Point3& q, const EvalContext& ctx = {}) const;
  std::vector<Expr> expressions() const;

 private:
  std::array<Variable, 3> vars_;
  std::vector<PotentialTerm> terms_;
};

// Box centred on each position. Amplitude is the material SLD re + i·im.
Potential box(const Variable& qx, const Variable& qy, const Variable& qz, const Material& m,
              const Expr& wx, const Expr& wy, const Expr& wz,
              std::vector<Position> positions = {Position{}});

// Vertices in the shape's own frame, translated to each position.
Potential polyhedron(const Variable& qx, const Variable& qy, const Variable& qz,
                     const Material& m, std::shared_ptr<const Polyhedron> shape,
                     std::vector<Position> positions = {Position{}});

enum class CombineOp { add, subtract };

// Term-list concatenation; the right operand's amplitudes are negated for
// subtraction. Throws ValueError when the variable triples differ.
Potential combine(const Potential& a, CombineOp op, const Potential& b);
inline Potential operator+(const Potential& a, const Potential& b) {
  return combine(a, CombineOp::add, b);
}
inline Potential operator-(const Potential& a, const Potential& b) {
  return combine(a, CombineOp::subtract, b);
}
Potential operator*(const Expr& alpha, const Potential& v);

// F(qx, qy, qz) as a complex expression of the potential's variables.
Expr form_factor(const Potential& v);

// |sin(N q T/2) / sin(q T/2)|², equal to N² where the denominator vanishes.
Functor lattice(const Variable& v, const Expr& period, int count, std::string name = "lattice");

// I = |F|² · L. L's variables must be a subset of the potential's.
Functor sas(const Potential& v, const Functor& lattice, std::string name = "sas");

}  // namespace scatfit
