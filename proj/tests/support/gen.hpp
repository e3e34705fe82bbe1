#pragma once

// Small deterministic generators for the randomized property tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace scatfit::testing {

inline constexpr int kCases = 1000;

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool coin() { return integer(0, 1) == 1; }
  // Magnitude spread over several decades, random sign.
  double wide(double lo_exp = -3, double hi_exp = 3) {
    const double m = std::pow(10.0, uniform(lo_exp, hi_exp));
    return coin() ? m : -m;
  }
  std::vector<double> vec(std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform(lo, hi);
    return v;
  }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// |a - b| <= tol * max(|a|, |b|, floor)
inline bool close_rel(double a, double b, double tol, double floor = 1e-300) {
  return std::abs(a - b) <= tol * std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace scatfit::testing
