#pragma once

#include <cstdint>
#include <random>
#include <span>

#include "aif/error.hpp"

namespace aif {

// Seeded 64-bit Mersenne Twister. Uniforms are built from the top 53 bits
// directly rather than through std::uniform_real_distribution, whose output
// is implementation-defined; streams are therefore identical on every
// conforming standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  std::uint64_t next_u64() { return engine_(); }

  // Inverse-CDF draw; the last label with positive mass absorbs round-off.
  std::size_t categorical(std::span<const double> weights) {
    if (weights.empty()) throw Error(ErrorCode::InvalidDistribution, "empty distribution");
    const double u = uniform01();
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      if (weights[k] <= 0.0) continue;
      last_positive = k;
      acc += weights[k];
      if (u < acc) return k;
    }
    return last_positive;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace aif
