#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pitod/amendment.hpp"
#include "pitod/csv.hpp"
#include "support.hpp"

using namespace pitod;

namespace {

std::vector<InfluenceRecord> records(Metric m, std::vector<double> values) {
  std::vector<InfluenceRecord> out;
  for (std::size_t g = 0; g < values.size(); ++g) {
    InfluenceRecord r;
    r.epoch = 4;
    r.group_id = g;
    r.metric = m;
    r.value = values[g];
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST_CASE("policy selection") {
  auto d = select_amendment(records(Metric::ret, {-1.0, 5.0}), AmendTarget::policy);
  CHECK(d.chosen_group == 1u);
  CHECK(d.applied);
  CHECK(d.decision_value == 5.0);

  d = select_amendment(records(Metric::ret, {2.0, 2.0}), AmendTarget::policy);
  CHECK(d.chosen_group == 0u);

  d = select_amendment(records(Metric::ret, {-3.0, 0.0, -1.0}), AmendTarget::policy);
  CHECK_FALSE(d.applied);
  CHECK(d.chosen_group == 1u);

  CHECK_THROWS_AS(select_amendment(records(Metric::ret, {}), AmendTarget::policy), std::invalid_argument);
  CHECK_THROWS_AS(select_amendment(records(Metric::bias, {1.0}), AmendTarget::policy), std::invalid_argument);
}

TEST_CASE("critic selection") {
  auto d = select_amendment(records(Metric::bias, {-0.3, -0.1}), AmendTarget::critic);
  CHECK(d.chosen_group == 0u);
  CHECK(d.applied);
  CHECK(select_amendment(records(Metric::bias, {-0.2}), AmendTarget::critic).applied);
  CHECK_FALSE(select_amendment(records(Metric::bias, {0.0, 0.4}), AmendTarget::critic).applied);
}

TEST_CASE("selection is invariant to positive rescaling") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = 1 + rng.uniform_index(8);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform_index(3) == 0 ? std::round(rng.normal()) : rng.normal();
    const double c = std::exp(rng.uniform(-3.0, 3.0));
    std::vector<double> scaled(v);
    for (auto& x : scaled) x *= c;
    for (AmendTarget t : {AmendTarget::policy, AmendTarget::critic}) {
      const Metric m = t == AmendTarget::policy ? Metric::ret : Metric::bias;
      const auto a = select_amendment(records(m, v), t);
      const auto b = select_amendment(records(m, scaled), t);
      CHECK(a.chosen_group == b.chosen_group);
      CHECK(a.applied == b.applied);
      // Applied only when the improvement condition held.
      if (a.applied) CHECK((t == AmendTarget::policy ? a.decision_value > 0.0 : a.decision_value < 0.0));
    }
  }
}

TEST_CASE("amendment re-measures on fresh seeds and never touches parameters") {
  const EnvSpec env = EnvSpec::make(EnvName::pendulum, 40, 2);
  MaskSpec spec;
  spec.ensemble_size = 6;
  spec.group_size = 60;
  Trainer trainer(env, test::tiny_train(120), spec, 6);
  Environment e(env);
  ReplayBuffer buffer(1000, 60);
  trainer.train_epoch(e, buffer);
  const AgentState& a = trainer.agent();
  EvalBudget budget;
  budget.rollouts_per_policy = 2;
  budget.seed = 3;
  const std::vector<double> before(a.policy.params().begin(), a.policy.params().end());

  const auto ret = records(Metric::ret, {-1.0, 2.0});
  const auto d = amend_policy(a, trainer.masks(), ret, env, budget, 4);
  CHECK(d.applied);
  CHECK(d.chosen_group == 1u);
  const EvalBudget fresh = fresh_budget(budget, 4);
  CHECK(fresh.seed != budget.seed);
  CHECK(fresh.seed == derive_seed(3, Stream::amendment_evaluation, 4));

  // Independent re-rollout of both policies on the fresh seeds.
  auto rerun = [&](MaskView mask) {
    double total = 0.0;
    for (int k = 0; k < 2; ++k) {
      Environment sim(env);
      auto s = sim.reset(derive_seed(fresh.seed, Stream::evaluation, static_cast<std::uint64_t>(k)));
      while (!s.done) {
        Vector obs = Eigen::Map<const Vector>(s.observation.data(), 3);
        const auto out = split_policy_output(a.policy.forward_masked(obs, mask));
        const auto step = sim.step(s, std::vector<double>{std::tanh(out.mean(0))});
        total += step.reward;
        s = step.next;
      }
    }
    return total / 2.0;
  };
  CHECK(d.pre_value == doctest::Approx(rerun(trainer.masks().all_ones())).epsilon(1e-12));
  CHECK(d.post_value == doctest::Approx(rerun(trainer.masks().flipped(1, Role::policy))).epsilon(1e-12));
  CHECK(test::same_bits(before, a.policy.params()));

  const auto none = amend_policy(a, trainer.masks(), records(Metric::ret, {-1.0, -2.0}), env, budget, 4);
  CHECK_FALSE(none.applied);
  CHECK(none.post_value == none.pre_value);

  const auto c = amend_critic(a, trainer.masks(), records(Metric::bias, {0.5, -0.5}), env, budget, 4);
  CHECK(c.applied);
  CHECK(c.chosen_group == 1u);
  CHECK(std::isfinite(c.pre_value));
  CHECK(c.post_value != c.pre_value);
}

TEST_CASE("amendments csv round trip") {
  std::vector<AmendmentDecision> ds(2);
  ds[0].epoch = 10;
  ds[0].chosen_group = 3;
  ds[0].pre_value = -100.5;
  ds[0].post_value = -90.25;
  ds[0].applied = true;
  ds[1].epoch = 10;
  ds[1].target = AmendTarget::critic;
  ds[1].chosen_group = 0;
  ds[1].pre_value = ds[1].post_value = 0.3;
  const auto dir = test::scratch_dir("amend_csv");
  const std::string text = amendments_csv(ds);
  CHECK(text.rfind("epoch,target,chosen_group,pre_value,post_value,applied\n", 0) == 0);
  pitod::atomic_write(dir / "a.csv", text);
  const auto back = read_amendments_csv(dir / "a.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].chosen_group == 3u);
  CHECK(back[0].applied);
  CHECK(back[1].target == AmendTarget::critic);
  CHECK(back[1].post_value == 0.3);
  CHECK(amend_target_from_string("critic") == AmendTarget::critic);
  CHECK_THROWS_AS(amend_target_from_string("both"), std::invalid_argument);
}
