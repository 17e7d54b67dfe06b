#pragma once

#include <cmath>
#include <cstdint>

namespace cirl {

// Deterministic seedable pseudo-random stream. All sampling in the project
// goes through this type so that datasets and training runs are reproducible
// from (master_seed, stream_index) alone, independent of standard-library
// distribution internals.
//
// Core generator is splitmix64; normals use Box-Muller with no cached spare
// (fixed consumption of two uniforms per draw).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // decorrelate trivial seeds (0, 1, 2, ...)
    next_u64();
    next_u64();
  }

  // Independent stream seed for (master, index); used per trajectory and per
  // pipeline stage.
  static std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    return mix(master + 0x9e3779b97f4a7c15ull * (index + 1));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace cirl
