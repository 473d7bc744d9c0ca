#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace pastanet {

// Deterministic generator used everywhere randomness is needed. Hand-rolled
// (splitmix64 core) so that streams are bit-identical across platforms and
// standard-library versions. All randomness in a run flows from one master
// seed through named sub-streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  static std::uint64_t hash_name(std::string_view name) {
    // FNV-1a, then one splitmix round to spread low-entropy names.
    std::uint64_t h = 1469598103934665603ull;
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    return mix(h);
  }

  /// Derive an independent stream for (this seed, name, index).
  Rng stream(std::string_view name, std::uint64_t index = 0) const {
    std::uint64_t s = state_;
    s = mix(s ^ hash_name(name));
    s = mix(s + 0x9e3779b97f4a7c15ull * (index + 1));
    return Rng(s);
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  /// Uniform in [0,1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    // Multiply-shift; bias is negligible for the small n used here.
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  }

  /// Standard normal via Box-Muller (one value per call, no cached spare).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t state_;
};

}  // namespace pastanet
