#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "pitod/mask.hpp"
#include "pitod/rng.hpp"

using namespace pitod;

TEST_CASE("group ids follow insertion index") {
  CHECK(group_id_of(4999, 5000) == 0);
  CHECK(group_id_of(5000, 5000) == 1);
  CHECK(group_id_of(0, 1) == 0);
  CHECK(group_id_of(12345, 1) == 12345);
}

TEST_CASE("splitmix64 reference values") {
  // First outputs of the reference SplitMix64 generator seeded with 0.
  CHECK(splitmix64(0) == 0xE220A8397B1DCDAFULL);
  CHECK(splitmix64(0x9E3779B97F4A7C15ULL) == 0x6E789E6AA1B965F4ULL);
}

TEST_CASE("derived seeds separate streams and indices") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 1; s <= 8; ++s)
    for (std::uint64_t i = 0; i < 16; ++i) seen.insert(derive_seed(42, static_cast<Stream>(s), i));
  CHECK(seen.size() == 8 * 16);
  CHECK(derive_seed(42, Stream::masks, 3) == derive_seed(42, Stream::masks, 3));
}

TEST_CASE("rng draws are reproducible and in range") {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) {
    const double u = a.uniform();
    CHECK(u == b.uniform());
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const auto k = a.uniform_index(13);
    CHECK(k == b.uniform_index(13));
    CHECK(k < 13);
  }
}

TEST_CASE("draw_bits matches its documented generator") {
  const std::uint64_t key = 0xABCDEF;
  const auto bits = draw_bits(key, 64, 0.3);
  for (int k = 0; k < 64; ++k) {
    const double u = static_cast<double>(splitmix64(key + static_cast<std::uint64_t>(k) * 0x9E3779B97F4A7C15ULL) >> 11) * 0x1.0p-53;
    CHECK(bits[static_cast<std::size_t>(k)] == (u < 0.3 ? 0 : 1));
  }
}

TEST_CASE("mask_for is deterministic and role separated") {
  MaskSpec spec;
  spec.master_seed = 99;
  const auto a = mask_for(17, Role::q1, spec);
  const auto b = mask_for(17, Role::q1, spec);
  CHECK(a.bits == b.bits);
  CHECK(a.nonce == b.nonce);
  int differing = 0;
  for (std::uint64_t g = 0; g < 50; ++g)
    differing += mask_for(g, Role::policy, spec).bits != mask_for(g, Role::q2, spec).bits;
  CHECK(differing > 45);
}

TEST_CASE("zero dropout gives all-ones masks") {
  MaskSpec spec;
  spec.dropout_rate = 0.0;
  for (std::uint64_t g = 0; g < 10; ++g)
    for (Role r : kAllRoles) CHECK(mask_for(g, r, spec).active_count() == spec.ensemble_size);
}

TEST_CASE("mean active count matches the binomial mean") {
  MaskSpec spec;
  spec.ensemble_size = 20;
  spec.dropout_rate = 0.5;
  spec.master_seed = 5;
  const int n = 10000;
  double sum = 0.0;
  for (int g = 0; g < n; ++g) sum += mask_for(static_cast<std::uint64_t>(g), Role::policy, spec).active_count();
  const double sigma = std::sqrt(20 * 0.5 * 0.5);
  CHECK(std::abs(sum / n - 10.0) < 3.0 * sigma / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("degenerate draws are redrawn") {
  MaskSpec spec;
  spec.ensemble_size = 2;
  spec.dropout_rate = 0.5;
  MaskBank bank(spec);
  bank.ensure(200);
  for (std::uint64_t g = 0; g < 200; ++g)
    for (Role r : kAllRoles) {
      const auto m = bank.mask(g, r);
      CHECK(m[0] + m[1] == 1);
    }
  CHECK(!bank.redraws().empty());
}

TEST_CASE("flip") {
  GroupMask m;
  m.bits = {1, 0, 1};
  CHECK(flip(m).bits == MaskBits{0, 1, 0});
  CHECK(flip(flip(m)).bits == m.bits);
  CHECK(flip(MaskBits{1, 1, 1}) == MaskBits{0, 0, 0});
}

TEST_CASE("overlap count") {
  CHECK(overlap_count(MaskBits{1, 0}, MaskBits{1, 1}) == 1);
  const auto x = draw_bits(3, 31, 0.5);
  CHECK(overlap_count(x, x) == 31);
  CHECK(overlap_count(x, flip(x)) == 0);
  CHECK_THROWS_AS(overlap_count(MaskBits{1}, MaskBits{1, 0}), std::invalid_argument);
}

TEST_CASE("overlap probability") {
  CHECK(overlap_probability(2, 2, 0.0) == doctest::Approx(1.0));
  CHECK(overlap_probability(1, 1, 0.5) == doctest::Approx(0.5));
  CHECK_THROWS(overlap_probability(3, 4, 0.5));
  CHECK_THROWS(overlap_probability(3, 1, 1.5));

  // Enumerate all 2^6 mask pairs of length 3 and count pairs agreeing in exactly one place.
  int hits = 0;
  for (int a = 0; a < 8; ++a)
    for (int b = 0; b < 8; ++b) {
      int agree = 0;
      for (int k = 0; k < 3; ++k) agree += ((a >> k) & 1) == ((b >> k) & 1);
      hits += agree == 1;
    }
  const double enumerated = hits / 64.0;
  CHECK(enumerated == 0.375);
  CHECK(overlap_probability(3, 1, 0.5) == doctest::Approx(enumerated).epsilon(1e-14));

  for (int M : {1, 5, 20, 64})
    for (double p : {0.0, 0.1, 0.37, 0.5, 0.9, 1.0}) {
      double total = 0.0;
      for (int m = 0; m <= M; ++m) total += overlap_probability(M, m, p);
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
}

TEST_CASE("expected overlap") {
  CHECK(expected_overlap(20, 0.5) == doctest::Approx(10.0));
  CHECK(expected_overlap(7, 0.0) == doctest::Approx(7.0));
  CHECK(expected_overlap(20, 0.25) == doctest::Approx(12.5));
  for (int M = 1; M <= 64; ++M) {
    int best = -1;
    double best_value = 1e300;
    bool unique = true;
    for (int i = 0; i <= 20; ++i) {
      const double v = expected_overlap(M, i * 0.05);
      if (v < best_value - 1e-12) {
        best_value = v;
        best = i;
        unique = true;
      } else if (std::abs(v - best_value) <= 1e-12) {
        unique = false;
      }
    }
    CHECK(best == 10);
    CHECK(unique);
  }
}

TEST_CASE("sampled overlaps match the closed form") {
  for (int M : {3, 8, 20, 64})
    for (double p : {0.1, 0.5, 0.8}) {
      const int n = 10000;
      double sum = 0.0;
      for (int i = 0; i < n; ++i) {
        const auto a = draw_bits(derive_seed(11, Stream::masks, 2 * i), M, p);
        const auto b = draw_bits(derive_seed(11, Stream::masks, 2 * i + 1), M, p);
        sum += overlap_count(a, b);
      }
      const double q = 2 * p * p - 2 * p + 1;
      const double se = std::sqrt(M * q * (1 - q) / n);
      CHECK(std::abs(sum / n - expected_overlap(M, p)) < 3.0 * se);
    }
}

TEST_CASE("mask bank") {
  MaskSpec spec;
  spec.ensemble_size = 6;
  MaskBank bank(spec);
  bank.ensure(4);
  CHECK(bank.group_count() == 4);
  for (std::uint64_t g = 0; g < 4; ++g)
    for (Role r : kAllRoles) {
      CHECK(overlap_count(bank.mask(g, r), bank.flipped(g, r)) == 0);
      const auto fresh = mask_for(g, r, spec);
      CHECK(MaskBits(bank.mask(g, r).begin(), bank.mask(g, r).end()) == fresh.bits);
    }
  MaskBank off(spec, false);
  off.ensure(2);
  CHECK(overlap_count(off.mask(1, Role::q1), off.all_ones()) == 6);
}

TEST_CASE("mask spec validation") {
  MaskSpec spec;
  spec.ensemble_size = 0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = MaskSpec{};
  spec.dropout_rate = 1.5;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = MaskSpec{};
  spec.dropout_rate = 1.0;
  CHECK_THROWS_AS(mask_for(0, Role::policy, spec), std::runtime_error);
  spec = MaskSpec{};
  spec.group_size = 0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}
