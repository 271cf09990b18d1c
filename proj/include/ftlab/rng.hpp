#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace ftlab {

/// splitmix64 finalizer; used to derive independent seed streams.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic sub-seed for (base, salt_a, salt_b). Streams derived with
/// distinct salts are independent for practical purposes.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt_a,
                                 std::uint64_t salt_b = 0) {
  return mix64(mix64(base ^ 0x7f4a7c15ULL) ^ mix64(salt_a) ^ (mix64(salt_b) << 1));
}

/// mt19937_64 with our own distributions so that sampled values are identical
/// across standard libraries (std distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1), 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; one fresh pair per call, second value dropped.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Uniform integer in [lo, hi], inclusive.
  int uniform_int(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(bounded(span));
  }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(bounded(n)); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[bounded(i)]);
    }
  }

 private:
  // Rejection-free enough and deterministic: multiply-shift bound.
  std::uint64_t bounded(std::uint64_t n) {
    // Lemire's method without 128-bit rejection; bias is < 2^-53 for n << 2^64.
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  std::mt19937_64 gen_;
};

}  // namespace ftlab
