#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "mmsa/errors.hpp"
#include "mmsa/scalar.hpp"

namespace mmsa {

// Deterministic splitmix64 generator. The standard library distributions are
// not pinned across implementations, so everything that must reproduce
// bit-for-bit (shuffles, init, noise, dropout) goes through this wrapper.
// All floating-point draws are computed in double and narrowed afterwards, so
// the draw sequence does not depend on how Scalar is configured.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive and small relative to 2^64,
  // so the modulo bias is negligible.
  int uniform_int(int n) {
    if (n <= 0) throw ContractError("Rng::uniform_int: n must be positive");
    return int(next_u64() % uint64_t(n));
  }

  // Standard normal via Box-Muller. Consumes exactly two draws per call so
  // the stream position never depends on rejection.
  double normal() {
    double u1 = double((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Independent stream keyed off the construction seed, not current state,
  // so derivation order does not matter.
  Rng derive(uint64_t salt) const {
    uint64_t z = seed_ ^ (0x9e3779b97f4a7c15ull * (salt + 1));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return Rng(z ^ (z >> 31));
  }

  // Fisher-Yates, descending.
  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (int i = int(values.size()) - 1; i > 0; --i) {
      int j = uniform_int(i + 1);
      std::swap(values[size_t(i)], values[size_t(j)]);
    }
  }

 private:
  uint64_t seed_;
  uint64_t state_;
};

}  // namespace mmsa
