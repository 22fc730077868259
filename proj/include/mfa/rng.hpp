#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace mfa {

// Counter-based deterministic random stream: value i of a stream depends only
// on (seed, stream name, i), never on call interleaving or thread scheduling.
// Draws are produced by hashing a 64-bit counter with splitmix64, which is
// statistically adequate for sampling test instances and optimizer restarts.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::string_view name)
      : key_(mix(seed ^ fnv1a(name))), counter_(0) {}

  // Uniform on [0, 2^64).
  std::uint64_t next_u64() { return mix(key_ ^ mix(counter_++)); }

  // Uniform on [0,1) with 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Standard normal via Box-Muller (two draws per call, no cached state so the
  // stream position stays a pure function of the number of calls).
  double normal();

  // Uniform integer in [0, n), n >= 1.
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }

  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace mfa
