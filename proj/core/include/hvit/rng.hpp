#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace hvit {

/// mt19937_64 with hand-pinned draw helpers. The standard <random>
/// distributions are implementation-defined, so every stream the toolkit
/// depends on (init, shuffles, synthesis, permutation tests) goes through
/// these fixed formulas instead.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t bits() { return eng_(); }

  /// Uniform in [0, 1), 53 random bits.
  double uniform() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; consumes exactly two draws, no cached
  /// second variate.
  double normal() {
    const double u1 = (static_cast<double>(bits() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Unbiased integer in [0, n); n must be nonzero.
  std::uint64_t below(std::uint64_t n) {
    std::uint64_t x, r;
    do {
      x = bits();
      r = x % n;
    } while (x - r > std::uint64_t(0) - n);
    return r;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

private:
  std::mt19937_64 eng_;
};

/// Stable 64-bit mix for deriving per-purpose seeds from one user seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed ^ (salt * 0x9e3779b97f4a7c15ull);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

}  // namespace hvit
