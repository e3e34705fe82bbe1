#include "scatfit/output.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <memory>
#include <ostream>

#include <png.h>

namespace scatfit {

namespace {

double to_double(std::string_view s, std::string_view spec) {
  double v = 0;
  const char* first = s.data();
  if (!s.empty() && s.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw ValueError("grid '" + std::string(spec) + "': malformed number '" + std::string(s) + "'");
  return v;
}

using Rgb = std::array<unsigned char, 3>;

void save_png(const std::string& path, int width, int height, const std::vector<Rgb>& pixels) {
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw ValueError("cannot write '" + path + "'");
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> guard(fp, &std::fclose);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, nullptr);
    throw ValueError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ValueError("libpng failed writing '" + path + "'");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(height);
  for (int r = 0; r < height; ++r)
    rows[r] = const_cast<png_bytep>(pixels[static_cast<std::size_t>(r) * width].data());
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Blue -> cyan -> yellow -> red.
Rgb colormap(double t) {
  t = std::clamp(t, 0.0, 1.0);
  static constexpr std::array<std::array<double, 3>, 4> stops{
      {{0.05, 0.05, 0.45}, {0.0, 0.75, 0.85}, {0.98, 0.9, 0.1}, {0.75, 0.05, 0.05}}};
  const double s = t * 3.0;
  const int i = std::min(2, static_cast<int>(s));
  const double f = s - i;
  Rgb c;
  for (int k = 0; k < 3; ++k)
    c[k] = static_cast<unsigned char>(255.0 * (stops[i][k] + f * (stops[i + 1][k] - stops[i][k])));
  return c;
}

}  // namespace

GridAxis parse_axis(std::string_view spec) {
  const auto eq = spec.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ValueError("grid '" + std::string(spec) + "': expected name=range");
  GridAxis axis;
  axis.name = std::string(spec.substr(0, eq));
  const std::string_view range = spec.substr(eq + 1);
  const auto c1 = range.find(':');
  if (c1 == std::string_view::npos) {
    axis.values.push_back(to_double(range, spec));
    return axis;
  }
  const double start = to_double(range.substr(0, c1), spec);
  const std::string_view rest = range.substr(c1 + 1);
  if (const auto slash = rest.find('/'); slash != std::string_view::npos) {
    const double stop = to_double(rest.substr(0, slash), spec);
    const double n = to_double(rest.substr(slash + 1), spec);
    if (!(n >= 1) || n != std::floor(n) || n > 1e8)
      throw ValueError("grid '" + std::string(spec) + "': point count must be a positive integer");
    const auto count = static_cast<std::size_t>(n);
    for (std::size_t i = 0; i < count; ++i)
      axis.values.push_back(count == 1 ? start
                                       : start + (stop - start) * static_cast<double>(i) /
                                                     static_cast<double>(count - 1));
    return axis;
  }
  const auto c2 = rest.find(':');
  if (c2 == std::string_view::npos)
    throw ValueError("grid '" + std::string(spec) + "': expected start:stop:step or start:stop/n");
  const double stop = to_double(rest.substr(0, c2), spec);
  const double step = to_double(rest.substr(c2 + 1), spec);
  if (!(step > 0) || !std::isfinite(start) || !std::isfinite(stop))
    throw ValueError("grid '" + std::string(spec) + "': step must be positive");
  const double span = (stop - start) / step;
  if (span < -0.5) throw ValueError("grid '" + std::string(spec) + "': stop lies before start");
  if (span > 1e8) throw ValueError("grid '" + std::string(spec) + "': too many points");
  const auto count = static_cast<std::size_t>(std::floor(span + 0.5)) + 1;
  // start + i*step, not accumulated, so values match a fresh arange.
  for (std::size_t i = 0; i < count; ++i) axis.values.push_back(start + static_cast<double>(i) * step);
  return axis;
}

GridColumns grid_columns(const std::vector<GridAxis>& axes, const std::vector<Variable>& variables) {
  std::vector<const GridAxis*> ordered;
  for (const auto& v : variables) {
    const GridAxis* found = nullptr;
    for (const auto& a : axes)
      if (a.name == v.name()) {
        if (found) throw ValueError("grid: variable '" + v.name() + "' given twice");
        found = &a;
      }
    if (!found) throw ValueError("grid: no axis for variable '" + v.name() + "'");
    ordered.push_back(found);
  }
  for (const auto& a : axes)
    if (std::none_of(variables.begin(), variables.end(), [&](const Variable& v) { return v.name() == a.name; }))
      throw ValueError("grid: '" + a.name + "' is not a variable of the functor");
  GridColumns g;
  std::size_t total = 1;
  for (const auto* a : ordered) {
    g.shape.push_back(a->values.size());
    total *= a->values.size();
  }
  g.columns.assign(ordered.size(), std::vector<double>(total));
  for (std::size_t i = 0; i < total; ++i) {
    std::size_t rem = i;
    for (std::size_t d = ordered.size(); d-- > 0;) {
      const std::size_t n = ordered[d]->values.size();
      g.columns[d][i] = ordered[d]->values[rem % n];
      rem /= n;
    }
  }
  return g;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_csv(std::ostream& out, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& columns) {
  if (header.size() != columns.size()) throw ValueError("csv: header and column counts differ");
  out << "# ";
  for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
  out << '\n';
  const std::size_t n = columns.empty() ? 0 : columns.front().size();
  for (const auto& col : columns)
    if (col.size() != n) throw ValueError("csv: columns differ in length");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << format_number(columns[c][i]);
    out << '\n';
  }
}

void write_png_curve(const std::string& path, const std::vector<double>& x,
                     const std::vector<double>& y, bool ylog, int width, int height) {
  if (x.size() != y.size()) throw ValueError("plot: x and y differ in length");
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) continue;
    if (ylog && y[i] <= 0) continue;
    pts.emplace_back(x[i], ylog ? std::log10(y[i]) : y[i]);
  }
  if (pts.empty()) throw ValueError("plot: no plottable points");
  double x0 = pts[0].first, x1 = x0, y0 = pts[0].second, y1 = y0;
  for (auto [px, py] : pts) {
    x0 = std::min(x0, px);
    x1 = std::max(x1, px);
    y0 = std::min(y0, py);
    y1 = std::max(y1, py);
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const int margin = 40;
  const int pw = width - 2 * margin, ph = height - 2 * margin;
  std::vector<Rgb> pix(static_cast<std::size_t>(width) * height, Rgb{255, 255, 255});
  auto put = [&](int px, int py, Rgb c) {
    if (px >= 0 && px < width && py >= 0 && py < height) pix[static_cast<std::size_t>(py) * width + px] = c;
  };
  for (int i = 0; i <= pw; ++i) {
    put(margin + i, margin + ph, {0, 0, 0});
    put(margin + i, margin, {200, 200, 200});
  }
  for (int j = 0; j <= ph; ++j) {
    put(margin, margin + j, {0, 0, 0});
    put(margin + pw, margin + j, {200, 200, 200});
  }
  auto map_pt = [&](std::pair<double, double> p) {
    return std::pair<double, double>{margin + (p.first - x0) / (x1 - x0) * pw,
                                     margin + ph - (p.second - y0) / (y1 - y0) * ph};
  };
  const Rgb line{20, 60, 200};
  for (std::size_t i = 0; i < pts.size(); ++i) {
    auto [ax, ay] = map_pt(pts[i]);
    auto [bx, by] = i + 1 < pts.size() ? map_pt(pts[i + 1]) : std::pair{ax, ay};
    const int steps = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(bx - ax), std::abs(by - ay)))));
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      put(static_cast<int>(std::lround(ax + t * (bx - ax))), static_cast<int>(std::lround(ay + t * (by - ay))), line);
    }
  }
  save_png(path, width, height, pix);
}

void write_png_map(const std::string& path, std::size_t nx, std::size_t ny,
                   const std::vector<double>& values, bool log) {
  if (nx == 0 || ny == 0 || values.size() != nx * ny) throw ValueError("map: size mismatch");
  double pos_min = INFINITY;
  for (double v : values)
    if (std::isfinite(v) && v > 0) pos_min = std::min(pos_min, v);
  std::vector<double> t(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    double v = values[i];
    if (!std::isfinite(v)) v = 0;
    if (log) t[i] = std::log10(std::isfinite(pos_min) ? std::max(v, pos_min) : 1.0);
    else t[i] = v;
  }
  const auto [lo, hi] = std::minmax_element(t.begin(), t.end());
  const double a = *lo, b = *hi > *lo ? *hi : *lo + 1;
  // Small maps are blown up by whole pixels.
  const std::size_t k = std::max<std::size_t>(1, 400 / std::max(nx, ny));
  const int w = static_cast<int>(nx * k), h = static_cast<int>(ny * k);
  std::vector<Rgb> pix(static_cast<std::size_t>(w) * h);
  // First row of the map at the bottom of the image.
  for (int py = 0; py < h; ++py)
    for (int px = 0; px < w; ++px) {
      const std::size_t r = ny - 1 - static_cast<std::size_t>(py) / k, c = static_cast<std::size_t>(px) / k;
      pix[static_cast<std::size_t>(py) * w + px] = colormap((t[r * nx + c] - a) / (b - a));
    }
  save_png(path, w, h, pix);
}

}  // namespace scatfit
