#include "scatfit/data.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>

namespace scatfit {

DataSet::DataSet(std::string name, std::vector<std::vector<double>> coords,
                 std::vector<double> intensity, std::optional<std::vector<double>> sigma)
    : name_(std::move(name)), coords_(std::move(coords)), intensity_(std::move(intensity)) {
  if (coords_.empty() || coords_.size() > 3)
    throw ValueError("data '" + name_ + "': need 1 to 3 coordinate columns, got " +
                     std::to_string(coords_.size()));
  const std::size_t n = intensity_.size();
  for (std::size_t d = 0; d < coords_.size(); ++d)
    if (coords_[d].size() != n)
      throw ValueError("data '" + name_ + "': coordinate column " + std::to_string(d) + " has " +
                       std::to_string(coords_[d].size()) + " values, intensity has " +
                       std::to_string(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(intensity_[i]))
      throw ValueError("data '" + name_ + "': non-finite intensity at point " + std::to_string(i));
    for (const auto& c : coords_)
      if (!std::isfinite(c[i]))
        throw ValueError("data '" + name_ + "': non-finite coordinate at point " +
                         std::to_string(i));
  }
  if (sigma) {
    if (sigma->size() != n)
      throw ValueError("data '" + name_ + "': sigma has " + std::to_string(sigma->size()) +
                       " values, intensity has " + std::to_string(n));
    for (std::size_t i = 0; i < n; ++i)
      if (!((*sigma)[i] > 0) || !std::isfinite((*sigma)[i]))
        throw ValueError("data '" + name_ + "': sigma must be positive and finite (point " +
                         std::to_string(i) + ")");
    sigma_ = std::move(*sigma);
  } else {
    sigma_.resize(n);
    for (std::size_t i = 0; i < n; ++i) sigma_[i] = default_sigma(intensity_[i]);
  }
  mask_.assign(n, false);
}

std::size_t DataSet::active_count() const noexcept {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), false));
}

std::vector<std::size_t> DataSet::active_indices() const {
  std::vector<std::size_t> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i)
    if (!mask_[i]) out.push_back(i);
  return out;
}

std::vector<std::vector<double>> DataSet::active_coords() const {
  const auto idx = active_indices();
  std::vector<std::vector<double>> out(dims());
  for (std::size_t d = 0; d < dims(); ++d) {
    out[d].reserve(idx.size());
    for (std::size_t i : idx) out[d].push_back(coords_[d][i]);
  }
  return out;
}

void DataSet::mask_range(std::size_t first, std::size_t last, bool on) {
  if (first > last || last > size())
    throw ValueError("mask range [" + std::to_string(first) + ", " + std::to_string(last) +
                     ") outside data of size " + std::to_string(size()));
  for (std::size_t i = first; i < last; ++i) mask_[i] = on;
}

void DataSet::mask_box(std::span<const std::pair<double, double>> box, bool on) {
  if (box.size() != dims())
    throw ValueError("mask box has " + std::to_string(box.size()) + " intervals, data has " +
                     std::to_string(dims()) + " dimensions");
  for (std::size_t i = 0; i < size(); ++i) {
    bool inside = true;
    for (std::size_t d = 0; d < dims() && inside; ++d)
      inside = coords_[d][i] >= box[d].first && coords_[d][i] <= box[d].second;
    if (inside) mask_[i] = on;
  }
}

void DataSet::mask_indices(std::span<const std::size_t> indices, bool on) {
  for (std::size_t i : indices)
    if (i >= size())
      throw ValueError("mask index " + std::to_string(i) + " outside data of size " +
                       std::to_string(size()));
  for (std::size_t i : indices) mask_[i] = on;
}

void DataSet::clear_mask() { mask_.assign(size(), false); }

void DataSet::set_mask(std::vector<bool> mask) {
  if (mask.size() != size()) throw ValueError("mask length does not match data size");
  mask_ = std::move(mask);
}

DataSet make_data(std::string name, std::vector<std::vector<double>> coords,
                  std::vector<double> intensity, std::optional<std::vector<double>> sigma) {
  return DataSet(std::move(name), std::move(coords), std::move(intensity), std::move(sigma));
}

ColumnMap ColumnMap::parse(std::string_view spec) {
  ColumnMap map;
  map.coord_columns.clear();
  std::optional<std::size_t> y, s;
  std::size_t col = 0;
  std::size_t start = 0;
  while (start <= spec.size()) {
    std::size_t end = spec.find(',', start);
    if (end == std::string_view::npos) end = spec.size();
    std::string_view role = spec.substr(start, end - start);
    while (!role.empty() && role.front() == ' ') role.remove_prefix(1);
    while (!role.empty() && role.back() == ' ') role.remove_suffix(1);
    if (role == "x") {
      map.coord_columns.push_back(col);
    } else if (role == "y") {
      if (y) throw ValueError("column map: 'y' given twice");
      y = col;
    } else if (role == "sigma") {
      if (s) throw ValueError("column map: 'sigma' given twice");
      s = col;
    } else if (role != "_") {
      throw ValueError("column map: unknown role '" + std::string(role) +
                       "' (expected x, y, sigma or _)");
    }
    ++col;
    start = end + 1;
  }
  if (map.coord_columns.empty() || map.coord_columns.size() > 3)
    throw ValueError("column map: need 1 to 3 'x' columns");
  if (!y) throw ValueError("column map: missing 'y'");
  map.intensity_column = *y;
  map.sigma_column = s;
  return map;
}

std::size_t ColumnMap::required_columns() const {
  std::size_t n = intensity_column + 1;
  for (std::size_t c : coord_columns) n = std::max(n, c + 1);
  return std::max<std::size_t>(n, 2);
}

namespace {

bool is_separator(char c) { return c == ',' || c == ' ' || c == '\t' || c == ';' || c == '\r'; }

std::vector<double> split_numbers(std::string_view line, std::size_t line_no) {
  std::vector<double> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_separator(line[i])) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && !is_separator(line[j])) ++j;
    const std::string_view tok = line.substr(i, j - i);
    double v = 0;
    const char* first = tok.data();
    if (!tok.empty() && tok.front() == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
      throw ValueError("line " + std::to_string(line_no) + ": malformed number '" +
                       std::string(tok) + "'");
    out.push_back(v);
    i = j;
  }
  return out;
}

}  // namespace

DataSet load_text(std::istream& in, const ColumnMap& columns, std::string name,
                  const std::vector<std::string>& comment_prefixes) {
  std::vector<std::vector<double>> coords(columns.coord_columns.size());
  std::vector<double> intensity, sigma;
  std::optional<bool> has_sigma;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    while (!view.empty() && (view.front() == ' ' || view.front() == '\t')) view.remove_prefix(1);
    if (view.empty() || view == "\r") continue;
    bool comment = false;
    for (const auto& p : comment_prefixes)
      if (!p.empty() && view.starts_with(p)) comment = true;
    if (comment) continue;
    const auto row = split_numbers(view, line_no);
    if (row.empty()) continue;
    if (row.size() < 2)
      throw ValueError("line " + std::to_string(line_no) + ": need at least 2 columns, got " +
                       std::to_string(row.size()));
    if (row.size() < columns.required_columns())
      throw ValueError("line " + std::to_string(line_no) + ": need " +
                       std::to_string(columns.required_columns()) + " columns, got " +
                       std::to_string(row.size()));
    if (!has_sigma) has_sigma = columns.sigma_column && *columns.sigma_column < row.size();
    for (std::size_t d = 0; d < columns.coord_columns.size(); ++d)
      coords[d].push_back(row[columns.coord_columns[d]]);
    intensity.push_back(row[columns.intensity_column]);
    if (*has_sigma) {
      if (*columns.sigma_column >= row.size())
        throw ValueError("line " + std::to_string(line_no) + ": missing sigma column");
      sigma.push_back(row[*columns.sigma_column]);
    }
  }
  if (intensity.empty()) throw ValueError("no data rows in '" + name + "'");
  std::optional<std::vector<double>> s;
  if (has_sigma && *has_sigma) s = std::move(sigma);
  return DataSet(std::move(name), std::move(coords), std::move(intensity), std::move(s));
}

DataSet load_text_file(const std::string& path, const ColumnMap& columns,
                       const std::vector<std::string>& comment_prefixes) {
  std::ifstream in(path);
  if (!in) throw ValueError("cannot open data file '" + path + "'");
  try {
    return load_text(in, columns, path, comment_prefixes);
  } catch (const ValueError& e) {
    throw ValueError(path + ": " + e.what());
  }
}

void save_text(std::ostream& out, const DataSet& data, bool active_only) {
  out << "#";
  for (std::size_t d = 0; d < data.dims(); ++d) out << " x";
  out << " y sigma\n";
  char buf[32];
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (active_only && data.mask()[i]) continue;
    auto put = [&](double v, bool last) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << buf << (last ? '\n' : ' ');
    };
    for (std::size_t d = 0; d < data.dims(); ++d) put(data.coords()[d][i], false);
    put(data.intensity()[i], false);
    put(data.sigma()[i], true);
  }
}

}  // namespace scatfit
