#pragma once

#include <cstdint>
#include <random>

namespace qsmash {

// Seeded random source with platform-independent output.
//
// std::uniform_real_distribution and friends are implementation-defined, so
// draws are derived from the raw mt19937_64 stream (which the standard pins
// bit for bit) to keep traces identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer on [0, n). Rejection sampling avoids modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) {
      return 0;
    }
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t x = engine_();
    while (x >= limit) {
      x = engine_();
    }
    return x % n;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace qsmash
