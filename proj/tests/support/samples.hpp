#pragma once

// Random and reference layered samples.

#include <cmath>
#include <numbers>

#include "gen.hpp"
#include "scatfit/reflect.hpp"

namespace scatfit::testing {

inline constexpr double kSiSld = 2.074e-4;
inline constexpr double kFeSld = 8.024e-4;

inline Material air() { return make_material("Air", 0.0, 0.0); }
inline Layer si_substrate(double sigma = 0.0) {
  return make_layer(make_material("Si", kSiSld, 0.0), 0.0, sigma, 0.0, "Substrate: Si");
}

// 1-10 layers, mild absorption, roughness up to 1 nm.
inline FlatSample random_flat(Gen& g, int min_layers = 1, int max_layers = 10) {
  FlatSample s;
  const int n = g.integer(min_layers, max_layers);
  for (int i = 0; i < n; ++i) {
    LayerValues l;
    l.sld_re = g.uniform(-1e-4, 1e-3);
    l.sld_im = g.coin() ? g.uniform(0, 2e-5) : 0.0;
    l.thickness = g.uniform(0.5, 30.0);
    l.roughness = g.coin() ? g.uniform(0, 1.0) : 0.0;
    s.layers.push_back(l);
  }
  s.substrate.sld_re = g.uniform(0, 1e-3);
  s.substrate.sld_im = g.coin() ? g.uniform(0, 1e-6) : 0.0;
  s.substrate.roughness = g.coin() ? g.uniform(0, 1.0) : 0.0;
  return s;
}

inline Multilayer to_multilayer(const FlatSample& s) {
  Multilayer m("random", make_material("amb", s.ambient.sld_re, s.ambient.sld_im),
               make_layer(make_material("sub", s.substrate.sld_re, s.substrate.sld_im), 0.0,
                          s.substrate.roughness, s.substrate.msld));
  for (const auto& l : s.layers)
    m.add(make_layer(make_material("m", l.sld_re, l.sld_im), l.thickness, l.roughness, l.msld));
  return m;
}

}  // namespace scatfit::testing
