#pragma once

#include <cmath>
#include <cstdint>

namespace lgc {

// splitmix64 stream. All randomness in the project comes from this generator so
// that sampling and training are reproducible bit-exactly from a seed; the
// standard <random> distributions are implementation-defined and are avoided.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, no caching so the state advances by exactly two draws per call.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  // [0, n)
  std::uint64_t uniform_index(std::uint64_t n) { return n ? next() % n : 0; }

  // Independent substream; derivation depends only on the original seed.
  Rng derive(std::uint64_t stream) const {
    std::uint64_t z = state_ ^ (0xA0761D6478BD642Full * (stream + 1));
    z = (z ^ (z >> 32)) * 0xE7037ED1A0B428DBull;
    return Rng(z ^ (z >> 29));
  }

 private:
  std::uint64_t state_;
};

}  // namespace lgc
