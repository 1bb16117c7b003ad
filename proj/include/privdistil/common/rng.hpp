#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace privdistil {

/// splitmix64 finaliser; used to derive independent stream seeds.
constexpr uint64_t mix64(uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// 64-bit FNV-1a, stable across platforms and standard libraries.
constexpr uint64_t fnv1a64(std::string_view s) noexcept {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Explicit random state. All sampling in the library goes through this type so that
/// results are a pure function of the seed. The engine is mt19937_64 (output fully
/// specified by the standard); distributions are implemented here rather than with
/// <random> distributions, whose algorithms are implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : seed_(seed), engine_(mix64(seed)) {}

  uint64_t seed() const noexcept { return seed_; }

  /// Independent sub-stream keyed by `key`; does not advance this generator.
  Rng derive(uint64_t key) const { return Rng(mix64(seed_ ^ mix64(key))); }
  Rng derive(std::string_view key) const { return derive(fnv1a64(key)); }

  uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  uint64_t uniform_index(uint64_t n) { return n == 0 ? 0 : engine_() % n; }
  int64_t uniform_int(int64_t lo, int64_t hi_inclusive) {
    return lo + static_cast<int64_t>(uniform_index(static_cast<uint64_t>(hi_inclusive - lo + 1)));
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (no cached second value, so the stream position
  /// depends only on the number of calls).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Poisson sample (Knuth for small means, normal approximation above 60).
  int64_t poisson(double mean);

  /// Fisher-Yates permutation of [0, n).
  std::vector<int64_t> permutation(int64_t n);

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace privdistil
