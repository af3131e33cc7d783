#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace ras {

/// Deterministic splittable PRNG. All randomness in the project flows from one
/// top-level seed; independent streams are derived with child(), so adding or
/// reordering consumers in one stream never perturbs another.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), state_(splitmix(seed ^ kInit)) {}

  /// Derive an independent stream. Children depend only on the parent's seed,
  /// not on how much the parent has been consumed.
  Rng child(uint64_t key) const { return Rng(splitmix(seed_ ^ splitmix(key ^ kChild))); }
  Rng child(std::string_view label) const { return child(fnv1a(label)); }
  Rng child(std::string_view label, uint64_t key) const { return child(fnv1a(label)).child(key); }

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    uint64_t span = uint64_t(hi - lo) + 1;
    return lo + int(next_u64() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (no cached spare; two u64 draws per call).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  static uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ull;
    for (char c : s) {
      h ^= uint64_t(uint8_t(c));
      h *= 0x100000001B3ull;
    }
    return h;
  }

 private:
  static constexpr uint64_t kInit = 0x8F1BBCDC4D9D6CA1ull;
  static constexpr uint64_t kChild = 0x5851F42D4C957F2Dull;

  static uint64_t splitmix(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  }

  uint64_t seed_;
  uint64_t state_;
};

}  // namespace ras
