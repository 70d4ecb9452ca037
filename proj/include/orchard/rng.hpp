#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "orchard/errors.hpp"

namespace orchard {

// Seeded random source with fully pinned-down derived draws.
//
// std::mt19937_64's raw output sequence is specified by the standard, but the
// standard *distributions* (and std::shuffle) are implementation-defined, so
// two standard libraries can disagree byte-for-byte. Everything that must be
// reproducible across machines (split manifests, weight init, augmentation)
// goes through the explicit draws below instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double next_double() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n). Rejection sampling keeps it exactly uniform.
  std::uint64_t uniform_below(std::uint64_t n) {
    if (n == 0) throw contract_error("Rng::uniform_below: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return v % n;
  }

  // Standard normal via Box-Muller.
  double normal() {
    double u1 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double u2 = next_double();
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  // Fisher-Yates, driven by uniform_below, so the permutation is portable.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derive an independent stream (e.g. one per epoch) from the original seed.
  Rng fork(std::uint64_t salt) const {
    return Rng(seed_ ^ (salt * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace orchard
