#pragma once

#include <cstdint>
#include <cmath>

namespace dhl {

/// Advances a splitmix64 state and returns the next value. Used for seeding
/// and for per-cell stream derivation; output is identical on every platform.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// xoshiro256++ generator with bit-reproducible uniform/normal draws.
/// std::random distributions are implementation-defined, so all variates
/// here are derived from raw bits directly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) {
    std::uint64_t s = seed;
    // decorrelate the stream id before mixing it in
    std::uint64_t t = stream;
    s ^= splitmix64(t);
    for (auto& word : state_) word = splitmix64(s);
    has_spare_ = false;
    spare_ = 0.0;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  /// Standard normal via Box-Muller; the spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // avoid log(0)
    while (u1 <= 0.0) u1 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    const double ang = 6.283185307179586476925286766559 * u2;
    spare_ = mag * std::sin(ang);
    has_spare_ = true;
    return mag * std::cos(ang);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4];
  bool has_spare_;
  double spare_;
};

}  // namespace dhl
