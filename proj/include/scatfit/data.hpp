#pragma once

// Measured curves and maps: coordinates, intensities, errors and a mask.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scatfit/errors.hpp"

namespace scatfit {

// Coordinates are stored flat, one column per dimension (1 to 3), so 2D maps
// need no grid. mask[i] == true excludes point i from residuals; masking never
// touches the stored values.
class DataSet {
 public:
  // Without `sigma`, errors follow counting statistics with a floor of one
  // count: sigma = sqrt(max(I, 1)).
  DataSet(std::string name, std::vector<std::vector<double>> coords, std::vector<double> intensity,
          std::optional<std::vector<double>> sigma = std::nullopt);

  const std::string& name() const noexcept { return name_; }
  std::size_t size() const noexcept { return intensity_.size(); }
  std::size_t dims() const noexcept { return coords_.size(); }
  const std::vector<std::vector<double>>& coords() const noexcept { return coords_; }
  const std::vector<double>& intensity() const noexcept { return intensity_; }
  const std::vector<double>& sigma() const noexcept { return sigma_; }
  const std::vector<bool>& mask() const noexcept { return mask_; }

  std::size_t active_count() const noexcept;
  std::vector<std::size_t> active_indices() const;
  // Active coordinates, one column per dimension.
  std::vector<std::vector<double>> active_coords() const;

  // Points [first, last).
  void mask_range(std::size_t first, std::size_t last, bool on = true);
  // Points whose coordinate d lies in [box[d].first, box[d].second] for every d.
  void mask_box(std::span<const std::pair<double, double>> box, bool on = true);
  void mask_indices(std::span<const std::size_t> indices, bool on = true);
  void clear_mask();
  void set_mask(std::vector<bool> mask);

 private:
  std::string name_;
  std::vector<std::vector<double>> coords_;
  std::vector<double> intensity_;
  std::vector<double> sigma_;
  std::vector<bool> mask_;
};

inline double default_sigma(double intensity) { return std::sqrt(std::max(intensity, 1.0)); }

DataSet make_data(std::string name, std::vector<std::vector<double>> coords,
                  std::vector<double> intensity,
                  std::optional<std::vector<double>> sigma = std::nullopt);

// Role of each file column, left to right: "x" (a coordinate; repeat for
// more dimensions), "y" (intensity), "sigma" (error) or "_" (ignored).
// Default "x,y,sigma"; a row that stops after y gets the default error rule.
struct ColumnMap {
  std::vector<std::size_t> coord_columns{0};
  std::size_t intensity_column = 1;
  std::optional<std::size_t> sigma_column = 2;

  static ColumnMap parse(std::string_view spec);
  std::size_t required_columns() const;
};

DataSet load_text(std::istream& in, const ColumnMap& columns = {}, std::string name = "data",
                  const std::vector<std::string>& comment_prefixes = {"#"});
DataSet load_text_file(const std::string& path, const ColumnMap& columns = {},
                       const std::vector<std::string>& comment_prefixes = {"#"});

// Writes "x... y sigma" rows with round-trip precision.
void save_text(std::ostream& out, const DataSet& data, bool active_only = true);

}  // namespace scatfit
