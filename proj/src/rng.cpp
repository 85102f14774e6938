#include "pitod/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace pitod {

std::uint64_t derive_seed(std::uint64_t base, Stream stream, std::uint64_t index) noexcept {
  const std::uint64_t s = splitmix64(base ^ splitmix64(static_cast<std::uint64_t>(stream)));
  return splitmix64(s + index);
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  // Reject draws from the partial top bucket so every residue is equally likely.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace pitod
