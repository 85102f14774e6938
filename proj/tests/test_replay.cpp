#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pitod/csv.hpp"
#include "pitod/mask.hpp"
#include "pitod/replay.hpp"
#include "support.hpp"

using namespace pitod;

namespace {

Experience item(double tag) {
  Experience e;
  e.state = {tag, -tag};
  e.action = {0.1 * tag};
  e.reward = tag;
  e.next_state = {tag + 1.0, 1.0 / 3.0};
  return e;
}

}  // namespace

TEST_CASE("push assigns groups from the insertion index") {
  ReplayBuffer b(10000, 5000);
  b.push(item(0));
  CHECK(b.size() == 1);
  for (int i = 1; i <= 5000; ++i) b.push(item(i));
  CHECK(b[4999].group_id == 0);
  CHECK(b[5000].group_id == 1);
  for (std::size_t i = 1; i < b.size(); ++i) CHECK(b[i].group_id >= b[i - 1].group_id);
}

TEST_CASE("push at capacity fails") {
  ReplayBuffer b(2, 1);
  b.push(item(1));
  b.push(item(2));
  CHECK_THROWS_AS(b.push(item(3)), std::length_error);
}

TEST_CASE("groups enumerate sizes in order") {
  ReplayBuffer b(20000, 5000);
  CHECK(b.groups().empty());
  for (int i = 0; i < 12000; ++i) b.push(item(i));
  const std::vector<GroupInfo> expected{{0, 5000}, {1, 5000}, {2, 2000}};
  CHECK(b.groups() == expected);
  CHECK(b.group_count() == 3);
  CHECK(b.group(2).size() == 2000);
  CHECK(b.group(2).front().reward == 10000.0);
  CHECK(b.group(7).empty());
}

TEST_CASE("minibatch sampling") {
  ReplayBuffer one(4, 4);
  one.push(item(42));
  const auto single = one.sample_minibatch(1, 3);
  REQUIRE(single.size() == 1);
  CHECK(single[0].reward == 42.0);

  ReplayBuffer b(10, 3);
  for (int i = 0; i < 10; ++i) b.push(item(i));
  const auto x = b.sample_minibatch(8, 99);
  const auto y = b.sample_minibatch(8, 99);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(x[i].reward == y[i].reward);
    CHECK(x[i].group_id == group_id_of(static_cast<std::uint64_t>(x[i].reward), 3));
  }

  CHECK_THROWS(ReplayBuffer(4, 1).sample_minibatch(1, 0));
  CHECK_THROWS(b.sample_minibatch(0, 0));
  CHECK_THROWS(b.sample_minibatch(11, 0));
}

TEST_CASE("sampling is uniform") {
  Rng rng(12345);
  const int n = 100000;
  const auto idx = sample_indices(10, n, rng);
  std::vector<int> counts(10, 0);
  for (auto i : idx) ++counts[i];
  const double expected = n / 10.0;
  const double sigma = std::sqrt(n * 0.1 * 0.9);
  for (int c : counts) CHECK(std::abs(c - expected) < 3.0 * sigma);
}

TEST_CASE("export and import are bit exact") {
  ReplayBuffer b(100, 4);
  Rng rng(5);
  for (int i = 0; i < 11; ++i) {
    Experience e = test::random_experience(EnvSpec::make(EnvName::point_mass), rng, 0, i % 5 == 0);
    e.reward = rng.normal() * 1e-7 + (i == 3 ? 1e300 : 0.0);
    e.poisoned = i % 4 == 1;
    b.push(e);
  }
  const auto dir = test::scratch_dir("replay");
  b.export_csv(dir / "buf.csv");
  const auto c = ReplayBuffer::import_csv(dir / "buf.csv");
  REQUIRE(c.size() == b.size());
  CHECK(c.capacity() == b.capacity());
  CHECK(c.group_size() == b.group_size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    CHECK(test::same_bits(c[i].state, b[i].state));
    CHECK(test::same_bits(c[i].action, b[i].action));
    CHECK(test::same_bits(c[i].next_state, b[i].next_state));
    CHECK(std::memcmp(&c[i].reward, &b[i].reward, sizeof(double)) == 0);
    CHECK(c[i].done == b[i].done);
    CHECK(c[i].poisoned == b[i].poisoned);
    CHECK(c[i].group_id == b[i].group_id);
  }
}

TEST_CASE("import rejects malformed files") {
  const auto dir = test::scratch_dir("replay_bad");
  pitod::atomic_write(dir / "bad.csv", "index,group_id\n0,0\n");
  CHECK_THROWS(ReplayBuffer::import_csv(dir / "bad.csv"));
  CHECK_THROWS(ReplayBuffer::import_csv(dir / "missing.csv"));
}
