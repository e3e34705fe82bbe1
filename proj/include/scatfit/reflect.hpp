#pragma once

// Layered samples and specular reflectivity.
//
// Units: SLD in nm^-2, lengths in nm, Q in nm^-1. Depth z = 0 is the
// ambient / first-layer interface and grows into the sample.
//
// Absorption convention: sld_im >= 0 is absorbing. The perpendicular
// wavevector in medium j is
//   k_j = sqrt((Q/2)^2 - 4 pi (sld_re_j - sld_re_0) + 4 pi i (sld_im_j - sld_im_0))
// on the principal branch, so Im k_j >= 0 and waves decay into the sample.

#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "scatfit/expr.hpp"

namespace scatfit {

struct Material {
  std::string name;
  Expr sld_re;
  Expr sld_im = 0.0;
};

Material make_material(std::string name, Expr sld_re, Expr sld_im = 0.0);

// (delta, beta) of n = 1 - delta + i beta: lambda^2 / (2 pi) * SLD.
std::pair<double, double> refractive_terms(const Material& m, double wavelength);

struct Layer {
  std::string name;
  Material material;
  Expr thickness = 0.0;
  // rms roughness of this layer's upper interface
  Expr roughness = 0.0;
  // signed collinear magnetic SLD
  Expr msld = 0.0;
};

Layer make_layer(Material material, Expr thickness, Expr roughness = 0.0, Expr msld = 0.0,
                 std::string name = "");

struct Stack {
  std::vector<Layer> layers;
  Expr repeats = 1.0;
};

class Multilayer {
 public:
  using Item = std::variant<Layer, Stack>;

  // The substrate's thickness is ignored; its roughness is the roughness of
  // the interface above it.
  Multilayer(std::string name, Material ambient, Layer substrate);

  // Inserted between the last added item and the substrate, so items run
  // top (just below the ambient) to bottom.
  Multilayer& add(Layer layer);
  Multilayer& add(Stack stack);

  const std::string& name() const noexcept { return name_; }
  const Material& ambient() const noexcept { return ambient_; }
  const Layer& substrate() const noexcept { return substrate_; }
  const std::vector<Item>& items() const noexcept { return items_; }

  // Every expression the sample depends on.
  std::vector<Expr> expressions() const;
  // Items with stacks expanded, in order; layers are shared, not copied.
  std::vector<Layer> layers(const EvalContext& ctx = {}) const;

 private:
  std::string name_;
  Material ambient_;
  Layer substrate_;
  std::vector<Item> items_;
};

struct LayerValues {
  double sld_re = 0, sld_im = 0, msld = 0, thickness = 0, roughness = 0;
};

// Numeric snapshot of a multilayer: ambient, expanded layers, substrate.
struct FlatSample {
  LayerValues ambient;
  std::vector<LayerValues> layers;
  LayerValues substrate;
};

FlatSample flatten(const Multilayer& s, const EvalContext& ctx = {});

enum class Formalism { parratt, matrix };

// Complex reflection amplitude and |r|^2 for a numeric sample. `magnetic`
// adds sign * msld to every SLD (0 for the nuclear curve).
Complex reflection_amplitude(const FlatSample& s, double Q, Formalism f = Formalism::parratt,
                             int magnetic = 0);
double reflectivity(const FlatSample& s, double Q, Formalism f = Formalism::parratt,
                    int magnetic = 0);

// R(Q) = |r|^2 as a functor of q.
Functor specrefl(const Variable& q, const Multilayer& s, Formalism f = Formalism::parratt,
                 std::string name = "specrefl");

// Measured intensity with polarizer / analyzer efficiencies (signed, |p| <= 1).
double mix_channels(double rpp, double rpm, double rmp, double rmm, double p_i, double p_f);

// Collinear polarized reflectivity: R++ = R(rho + msld), R-- = R(rho - msld),
// spin-flip channels zero, mixed with w+(p) = (1+p)/2, w-(p) = (1-p)/2.
Functor pnrspec(const Variable& q, const Multilayer& s, const Expr& p_i, const Expr& p_f,
                Formalism f = Formalism::parratt, std::string name = "pnrspec");

enum class ProfileComponent { sld_re, sld_im, msld };

// Erf-smeared step profile over the flattened sample.
std::vector<double> sld_profile(const Multilayer& s, std::span<const double> z,
                                ProfileComponent c = ProfileComponent::sld_re,
                                const EvalContext& ctx = {});

}  // namespace scatfit
