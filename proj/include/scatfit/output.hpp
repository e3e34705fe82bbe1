#pragma once

// Evaluation grids, CSV tables and basic PNG plots.

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "scatfit/expr.hpp"

namespace scatfit {

// One axis per spec:
//   "q=0.001:4:0.001"  start:stop:step, stop included when within half a step
//   "qx=-0.1:0.1/200"  200 evenly spaced points including both ends
//   "qz=0"             a single value
struct GridAxis {
  std::string name;
  std::vector<double> values;
};

GridAxis parse_axis(std::string_view spec);

// Cartesian product of axes, ordered to match `variables` (every variable
// needs exactly one axis). The last variable runs fastest. Returns one column
// per variable plus the per-axis sizes.
struct GridColumns {
  std::vector<std::vector<double>> columns;
  std::vector<std::size_t> shape;
};
GridColumns grid_columns(const std::vector<GridAxis>& axes, const std::vector<Variable>& variables);

// Header line "# name,name,..." then comma-separated rows, 9 significant
// digits.
void write_csv(std::ostream& out, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& columns);

std::string format_number(double v);

// Line plot of y(x) with optional log10 y axis; values <= 0 are dropped on
// log axes. Throws ValueError when nothing is plottable.
void write_png_curve(const std::string& path, const std::vector<double>& x,
                     const std::vector<double>& y, bool ylog, int width = 800, int height = 500);

// Heatmap of a row-major ny x nx map (x fastest), log10 colour scale by
// default with values <= 0 clipped to the smallest positive value.
void write_png_map(const std::string& path, std::size_t nx, std::size_t ny,
                   const std::vector<double>& values, bool log = true);

}  // namespace scatfit
