#pragma once

#include <cstdint>
#include <random>

namespace pitod {

/// SplitMix64 finalizer. Used as the mixing function for every derived seed
/// and as the counter-based generator behind mask bits.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Maps the top 53 bits of a 64-bit word to [0, 1).
constexpr double unit_interval(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Independent randomness streams split from a single trial seed.
enum class Stream : std::uint64_t {
  environment = 1,
  masks = 2,
  sampler = 3,
  action_noise = 4,
  evaluation = 5,
  initialization = 6,
  dropout = 7,
  amendment_evaluation = 8,
};

/// derive_seed(base, stream, index) = splitmix64(splitmix64(base ^ splitmix64(stream)) + index)
std::uint64_t derive_seed(std::uint64_t base, Stream stream, std::uint64_t index = 0) noexcept;

/// Portable random source. The engine is std::mt19937_64 (fully specified by
/// the standard); the distributions are implemented here because the
/// standard library's distributions are implementation-defined. The seed is
/// passed through splitmix64 first: mt19937_64's own seeding leaves the first
/// outputs of consecutive small seeds measurably correlated.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(splitmix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return unit_interval(engine_()); }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);

  /// Standard normal via the Box-Muller transform (one value per call).
  double normal();

 private:
  std::mt19937_64 engine_;
};

}  // namespace pitod
