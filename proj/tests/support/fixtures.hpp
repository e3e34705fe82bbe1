#pragma once

// Model documents and scratch directories shared by the CLI and service tests.

#include <filesystem>
#include <fstream>
#include <string>

#include "scatfit/records.hpp"
#include "sphere.hpp"

namespace scatfit::testing {

// Sphere intensity with synthetic data generated at R = 7.5, starting from R0.
inline Json sphere_fit_document(double R0, int points = 120, bool bounded = true) {
  Json q = Json::array(), y = Json::array(), s = Json::array();
  for (int i = 0; i < points; ++i) {
    const double qq = 0.02 + 0.98 * i / (points - 1);
    const double v = sphere_intensity(qq, 7.5, 1.2e-3, 4.0, 1e5);
    q.push_back(qq);
    y.push_back(v);
    s.push_back(std::sqrt(v));
  }
  Json r = {{"name", "R"}, {"raw_value", R0}, {"units", "nm"}};
  if (bounded) r["bounds"] = {5.0, 10.0};
  return Json{
      {"variables", {"q"}},
      {"parameters",
       {r,
        {{"name", "Contrast"}, {"raw_value", 1.2}, {"scale", 1e-3}, {"fixed", true}},
        {{"name", "Background"}, {"raw_value", 4.0}, {"bounds", {0.0, 20.0}}, {"fixed", true}},
        {{"name", "N"}, {"raw_value", 1e5}, {"fixed", true}},
        {{"name", "V"}, {"expr", "4/3*pi*pow(R, 3)"}}}},
      {"functors",
       {{{"name", "I"},
         {"expr", "N*pow(Contrast*V*3*(sin(q*R) - q*R*cos(q*R))/pow(q*R, 3), 2) + Background"},
         {"variables", {"q"}}}}},
      {"datasets", {{{"name", "d"}, {"coords", q}, {"intensity", y}, {"sigma", s}}}},
      {"models", {{{"name", "m"}, {"functor", "I"}, {"dataset", "d"}}}},
      {"fit", {{"de", {{"population_size", 15}, {"max_generations", 60}, {"seed", 3}}}}}};
}

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag)
      : path_(std::filesystem::temp_directory_path() /
              (tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  std::filesystem::path write(const std::string& name, const std::string& text) const {
    std::ofstream(path_ / name) << text;
    return path_ / name;
  }
  std::filesystem::path write_json(const std::string& name, const Json& doc) const {
    return write(name, doc.dump(2));
  }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace scatfit::testing
