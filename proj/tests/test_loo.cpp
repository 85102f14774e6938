#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pitod/loo.hpp"
#include "support.hpp"

using namespace pitod;

namespace {

LooBase recorded_run(std::uint64_t seed) {
  LooBase base;
  base.env = EnvSpec::make(EnvName::pendulum, 40, seed);
  base.train = test::tiny_train(90);
  base.mask.ensemble_size = 4;
  base.mask.group_size = 30;
  base.budget.rollouts_per_policy = 2;
  base.budget.samples_per_group = 10;
  base.budget.seed = seed + 1;
  base.seed = seed;
  Trainer t(base.env, base.train, base.mask, seed);
  Environment e(base.env);
  ReplayBuffer buf(1000, 30);
  t.poison_next(30, 100.0);
  t.train_epoch(e, buf);
  base.stream.assign(buf.storage().begin(), buf.storage().end());
  return base;
}

}  // namespace

TEST_CASE("loo iteration count") {
  CHECK(loo_total_iterations(5000, 5000) == 5000);
  CHECK(loo_total_iterations(10000, 5000) == 20000);
  CHECK(loo_total_iterations(7, 7) == 7);
  CHECK(loo_total_iterations(7001, 5000) == 14002);
  CHECK_THROWS(loo_total_iterations(0, 5));

  Rng rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    const std::uint64_t i = 1 + rng.uniform_index(100000), g = 1 + rng.uniform_index(10000);
    CHECK(loo_total_iterations(i + 1 + rng.uniform_index(100), g) >= loo_total_iterations(i, g));
    CHECK(loo_total_iterations(i, g + 1 + rng.uniform_index(100)) <= loo_total_iterations(i, g));
  }
}

TEST_CASE("wallclock estimate") {
  CHECK(estimate_loo_wallclock({0.01, 5000, 5000}) == doctest::Approx(50.0));
  CHECK(estimate_loo_wallclock({0.01, 20000, 5000}) == doctest::Approx(4.0 * estimate_loo_wallclock({0.01, 10000, 5000})));
  CHECK_THROWS(estimate_loo_wallclock({0.0, 5000, 5000}));

  std::vector<double> epochs, est;
  for (int e = 1; e <= 20; ++e) {
    epochs.push_back(e);
    est.push_back(estimate_loo_wallclock({0.003, static_cast<std::uint64_t>(e) * 5000, 5000}));
  }
  const auto fit = fit_quadratic(epochs, est);
  CHECK(fit.r_squared == doctest::Approx(1.0));
  CHECK(fit.a == doctest::Approx(0.003 * 5000));
  CHECK(std::abs(fit.b) < 1e-6);
  // The quadratic term dominates from E = 10 on.
  CHECK(fit.a * 100 > 10 * std::abs(fit.b * 10 + fit.c));
}

TEST_CASE("quadratic fit of noisy data") {
  std::vector<double> x{0, 1, 2, 3, 4}, y{1, 2, 5, 10, 17};
  auto f = fit_quadratic(x, y);
  CHECK(f.a == doctest::Approx(1.0));
  CHECK(f.b == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(f.c == doctest::Approx(1.0));
  y[2] += 1.0;
  f = fit_quadratic(x, y);
  CHECK(f.r_squared < 1.0);
  CHECK(f.r_squared > 0.9);
  CHECK_THROWS(fit_quadratic(std::vector<double>{1, 2}, std::vector<double>{1, 2}));
}

TEST_CASE("retraining replays the stream with masks off") {
  const LooBase base = recorded_run(2);
  const AgentState a = loo_retrain(base, 1u, 30, 100);

  // Oracle: a masks-off trainer fed the kept experiences one per iteration.
  Trainer oracle(base.env, base.train, base.mask, base.seed, false);
  ReplayBuffer buf(1000, 30);
  std::vector<Experience> kept;
  for (std::size_t i = 0; i < base.stream.size(); ++i)
    if (i / 30 != 1) kept.push_back(base.stream[i]);
  for (std::size_t it = 0; it < 100; ++it) {
    if (it < kept.size()) buf.push(kept[it]);
    oracle.replay_updates(buf);
  }
  CHECK(test::same_bits(a.policy.params(), oracle.agent().policy.params()));
  CHECK(test::same_bits(a.q2.target.params(), oracle.agent().q2.target.params()));

  const AgentState control = loo_retrain(base, std::nullopt, 30, 100);
  CHECK_FALSE(test::same_bits(a.policy.params(), control.policy.params()));
  CHECK_THROWS_AS(loo_retrain(base, 3u, 30, 10), std::invalid_argument);
}

TEST_CASE("loo influence") {
  const LooBase base = recorded_run(5);
  LooConfig config;
  config.retrain_iterations = 90;
  config.group_size = 30;
  for (Metric m : {Metric::ret, Metric::bias, Metric::pe_self, Metric::pi_self}) {
    config.metric = m;
    const auto control = loo_influence(base, std::nullopt, config);
    CHECK(control.value == 0.0);
    const auto a = loo_influence(base, 0u, config);
    const auto b = loo_influence(base, 0u, config);
    CHECK(std::memcmp(&a.value, &b.value, sizeof(double)) == 0);
    CHECK(a.value == a.retrained_value - a.control_value);
    CHECK(std::isfinite(a.value));
    CHECK(a.excluded_group == 0u);
    CHECK(a.retrain_iterations == 90);
  }
  config.retrain_iterations = 0;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
}
