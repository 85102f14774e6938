#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "pitod/csv.hpp"
#include "pitod/influence.hpp"
#include "support.hpp"

using namespace pitod;

namespace {

struct Fixture {
  EnvSpec env = EnvSpec::make(EnvName::pendulum, 50, 4);
  MaskSpec spec;
  std::optional<Trainer> trainer;
  ReplayBuffer buffer{1000, 50};
  EvalBudget budget;

  Fixture() {
    spec.ensemble_size = 6;
    spec.group_size = 50;
    spec.master_seed = 12;
    trainer.emplace(env, test::tiny_train(150), spec, 3);
    Environment e(env);
    trainer->train_epoch(e, buffer);
    budget.rollouts_per_policy = 2;
    budget.horizon = 30;
    budget.samples_per_group = 20;
    budget.seed = 77;
  }
  const AgentState& agent() const { return trainer->agent(); }
  const MaskBank& masks() const { return trainer->masks(); }
};

// Every member of the network becomes a copy of member 0.
void clone_member0(EnsembleApproximator& net) {
  const std::size_t per = net.member_param_count();
  auto p = net.params();
  for (int k = 1; k < net.shape().members; ++k)
    std::copy(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(per), p.begin() + static_cast<std::ptrdiff_t>(k * per));
}

Vector concat(const std::vector<double>& a, const Vector& b) {
  Vector x(static_cast<Eigen::Index>(a.size()) + b.size());
  for (std::size_t i = 0; i < a.size(); ++i) x(static_cast<Eigen::Index>(i)) = a[i];
  x.tail(b.size()) = b;
  return x;
}

Vector as_vector(const std::vector<double>& a) { return Eigen::Map<const Vector>(a.data(), static_cast<Eigen::Index>(a.size())); }

}  // namespace

TEST_CASE("metric names") {
  for (Metric m : {Metric::pe_self, Metric::pi_self, Metric::ret, Metric::bias})
    CHECK(metric_from_string(to_string(m)) == m);
  CHECK(to_string(Metric::ret) == "return");
  CHECK(parse_metrics("return,pe,pi,pe") == std::vector<Metric>{Metric::pe_self, Metric::pi_self, Metric::ret});
  CHECK_THROWS_AS(metric_from_string("loss"), std::invalid_argument);
}

TEST_CASE("sign bookkeeping") {
  CHECK(sign_expected(Metric::pe_self, 0.0));
  CHECK(sign_expected(Metric::pe_self, 3.0));
  CHECK_FALSE(sign_expected(Metric::pe_self, -1e-9));
  CHECK(sign_expected(Metric::pi_self, -3.0));
  CHECK_FALSE(sign_expected(Metric::pi_self, 0.1));

  auto rec = [](bool ok) {
    InfluenceRecord r;
    r.metric = Metric::pe_self;
    r.sign_expected_ok = ok;
    return r;
  };
  const std::vector<InfluenceRecord> all{rec(true), rec(true)};
  const std::vector<InfluenceRecord> half{rec(true), rec(false), rec(false), rec(true)};
  const std::vector<InfluenceRecord> none{rec(false)};
  CHECK(sign_correct_ratio(all, Metric::pe_self) == 1.0);
  CHECK(sign_correct_ratio(half, Metric::pe_self) == 0.5);
  CHECK(sign_correct_ratio(none, Metric::pe_self) == 0.0);
  CHECK_THROWS_AS(sign_correct_ratio(std::vector<InfluenceRecord>{}, Metric::pe_self), std::invalid_argument);
  CHECK_THROWS_AS(sign_correct_ratio(all, Metric::pi_self), std::invalid_argument);
}

TEST_CASE("self-influence matches a direct evaluation of its definition") {
  Fixture f;
  const AgentState& a = f.agent();
  for (std::size_t i : {0u, 60u, 149u}) {
    const Experience& e = f.buffer[i];
    const std::uint64_t g = e.group_id;
    const MaskView mp = f.masks().mask(g, Role::policy);
    const MaskView m1 = f.masks().mask(g, Role::q1), w1 = f.masks().flipped(g, Role::q1);
    const MaskView m2 = f.masks().mask(g, Role::q2);

    // Policy evaluation: one next action shared by both terms.
    const auto next = sample_action(split_policy_output(a.policy.forward_masked(as_vector(e.next_state), mp)), 900 + i);
    const double y = e.reward + (e.done ? 0.0 : a.gamma * a.q1.target.forward_masked(concat(e.next_state, next.action), m1)(0));
    const Vector sa = concat(e.state, as_vector(e.action));
    const double lw = std::pow(y - a.q1.online.forward_masked(sa, w1)(0), 2);
    const double lm = std::pow(y - a.q1.online.forward_masked(sa, m1)(0), 2);
    CHECK(self_influence_pe(a, f.masks(), e, 900 + i) == doctest::Approx(lw - lm).epsilon(1e-12));

    // Policy improvement: independent draws for the two policies, critics under m.
    Rng rng(500 + i);
    Vector xw(1), xb(1);
    xw(0) = rng.normal();
    xb(0) = rng.normal();
    const auto s = as_vector(e.state);
    auto q = [&](const Vector& act) {
      const Vector x = concat(e.state, act);
      return 0.5 * (a.q1.online.forward_masked(x, m1)(0) + a.q2.online.forward_masked(x, m2)(0));
    };
    const double pw = q(squash_sample(split_policy_output(a.policy.forward_masked(s, f.masks().flipped(g, Role::policy))), xw).action);
    const double pm = q(squash_sample(split_policy_output(a.policy.forward_masked(s, mp)), xb).action);
    CHECK(self_influence_pi(a, f.masks(), e, 500 + i) == doctest::Approx(pw - pm).epsilon(1e-12));
  }
}

TEST_CASE("identical members give zero self-influence") {
  Fixture f;
  AgentState a = f.agent();
  clone_member0(a.q1.online);
  clone_member0(a.policy);
  const Experience& e = f.buffer[10];
  CHECK(self_influence_pe(a, f.masks(), e, 3) == 0.0);

  const Experience* item = &e;
  Rng rng(2);
  const Matrix xi = test::normal_matrix(1, 1, rng);
  const SelfTerms s = self_influence_pi_terms(a, f.masks(), Batch(&item, 1), xi, xi);
  CHECK(s.flipped(0) - s.baseline(0) == 0.0);
}

TEST_CASE("return and rollout helpers") {
  Rollout r(3);
  r[0].reward = 1.0;
  r[1].reward = 2.0;
  r[2].reward = 3.0;
  CHECK(discounted_return(r, 1.0) == 6.0);
  CHECK(discounted_return(r, 0.5) == 1.0 + 1.0 + 0.75);
  const auto g = tail_returns(r, 0.5);
  CHECK(g == std::vector<double>{2.75, 3.5, 3.0});
}

TEST_CASE("bias loss") {
  std::vector<Rollout> rs(1, Rollout(3));
  for (int t = 0; t < 3; ++t) {
    rs[0][static_cast<std::size_t>(t)].state = {static_cast<double>(t)};
    rs[0][static_cast<std::size_t>(t)].action = {0.0};
    rs[0][static_cast<std::size_t>(t)].reward = t + 1.0;
  }
  auto constant = [](double c) {
    return [c](const Matrix& s, const Matrix&) { return Vector(Vector::Constant(s.rows(), c)); };
  };
  const double expected = (0.25 / 2.75 + 0.5 / 3.5 + 0.0) / 3.0;
  CHECK(bias_loss(rs, 0.5, constant(3.0)) == doctest::Approx(expected).epsilon(1e-14));

  auto exact = [](const Matrix& s, const Matrix&) {
    const std::vector<double> g{2.75, 3.5, 3.0};
    Vector q(s.rows());
    for (Eigen::Index i = 0; i < s.rows(); ++i) q(i) = g[static_cast<std::size_t>(s(i, 0))];
    return q;
  };
  CHECK(bias_loss(rs, 0.5, exact) == 0.0);

  for (auto& step : rs[0]) step.reward = 0.0;
  CHECK(bias_loss(rs, 0.5, constant(1e-7)) == doctest::Approx(0.1));
  CHECK_THROWS(bias_loss(std::vector<Rollout>(2), 0.5, constant(0.0)));
}

TEST_CASE("rollouts use paired seeds") {
  Fixture f;
  const auto& a = f.agent();
  const auto x = collect_rollouts(a.policy, f.masks().all_ones(), f.env, f.budget, 5);
  const auto y = collect_rollouts(a.policy, f.masks().flipped(1, Role::policy), f.env, f.budget, 5);
  REQUIRE(x.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(x[k].size() == 30);
    CHECK(x[k][0].state == y[k][0].state);
  }
  CHECK(x[0][0].state != x[1][0].state);
  const auto again = collect_rollouts(a.policy, f.masks().all_ones(), f.env, f.budget, 5);
  CHECK(again[1].back().reward == x[1].back().reward);
}

TEST_CASE("return influence vanishes for behaviorally identical policies") {
  Fixture f;
  AgentState a = f.agent();
  clone_member0(a.policy);
  for (std::uint64_t g = 0; g < 3; ++g) CHECK(return_influence(a, f.masks(), g, f.env, f.budget) == 0.0);
}

TEST_CASE("sweep records") {
  Fixture f;
  const std::vector<Metric> metrics{Metric::ret, Metric::pe_self, Metric::bias, Metric::pi_self};
  const std::vector<double> params_before(f.agent().policy.params().begin(), f.agent().policy.params().end());
  const auto sweep = influence_sweep(f.agent(), f.masks(), f.buffer, f.env, f.budget, metrics, 1, true);
  REQUIRE(sweep.records.size() == 12);

  SUBCASE("canonical order and sign bookkeeping") {
    for (std::size_t i = 0; i < sweep.records.size(); ++i) {
      const auto& r = sweep.records[i];
      CHECK(r.group_id == i / 4);
      CHECK(static_cast<int>(r.metric) == static_cast<int>(i % 4));
      CHECK(std::isfinite(r.value));
      if (is_self_metric(r.metric)) {
        REQUIRE(r.sign_expected_ok.has_value());
        CHECK(*r.sign_expected_ok == sign_expected(r.metric, r.value));
      } else {
        CHECK_FALSE(r.sign_expected_ok.has_value());
      }
    }
    for (const auto& r : sweep.experience_records) CHECK(*r.sign_expected_ok == sign_expected(r.metric, r.value));
    CHECK(sweep.signs.at(Metric::pe_self).total == 60);
  }

  SUBCASE("values are flipped minus baseline, recomputed independently") {
    std::map<std::pair<std::uint64_t, Metric>, std::pair<double, int>> means;
    for (const auto& r : sweep.experience_records) {
      auto& [sum, n] = means[{r.group_id, r.metric}];
      sum += r.value;
      ++n;
    }
    const auto& a = f.agent();
    const auto rollouts = collect_rollouts(a.policy, f.masks().all_ones(), f.env, f.budget,
                                           derive_seed(f.budget.seed, Stream::evaluation, 0xB1A5));
    const double base_ret = policy_return(a.policy, f.masks().all_ones(), f.env, f.budget, f.budget.seed);
    const double base_bias = bias_loss(rollouts, a.gamma, clipped_critic(a, f.masks().all_ones(), f.masks().all_ones()));
    for (const auto& r : sweep.records) {
      if (is_self_metric(r.metric)) {
        const auto [sum, n] = means.at({r.group_id, r.metric});
        CHECK(n == 20);
        CHECK(std::abs(r.value - sum / n) < 1e-12 * std::max(1.0, std::abs(r.value)));
      } else if (r.metric == Metric::ret) {
        const double w = policy_return(a.policy, f.masks().flipped(r.group_id, Role::policy), f.env, f.budget, f.budget.seed);
        CHECK(std::abs(r.value - (w - base_ret)) < 1e-12 * std::max(1.0, std::abs(base_ret)));
        CHECK(r.baseline_value == base_ret);
        CHECK(r.value == return_influence(a, f.masks(), r.group_id, f.env, f.budget));
      } else {
        const double w = bias_loss(rollouts, a.gamma,
                                   clipped_critic(a, f.masks().flipped(r.group_id, Role::q1), f.masks().flipped(r.group_id, Role::q2)));
        CHECK(std::abs(r.value - (w - base_bias)) < 1e-12);
        CHECK(r.baseline_value == base_bias);
        CHECK(r.value == bias_influence(a, f.masks(), r.group_id, f.env, f.budget));
      }
    }
  }

  SUBCASE("sweeps are pure and repeatable") {
    CHECK(test::same_bits(params_before, f.agent().policy.params()));
    CHECK(f.buffer.size() == 150);
    const auto again = influence_sweep(f.agent(), f.masks(), f.buffer, f.env, f.budget, metrics, 1, true);
    CHECK(again.records == sweep.records);
  }
}

TEST_CASE("sweep over 3 groups and 2 metrics") {
  Fixture f;
  const std::vector<Metric> metrics{Metric::pe_self, Metric::pi_self};
  CHECK(influence_sweep(f.agent(), f.masks(), f.buffer, f.env, f.budget, metrics, 1).records.size() == 6);
}

TEST_CASE("group subsample") {
  CHECK(group_subsample(3, 10) == std::vector<std::size_t>{0, 1, 2});
  CHECK(group_subsample(10, 5) == std::vector<std::size_t>{0, 2, 4, 6, 8});
}

TEST_CASE("heatmap") {
  std::vector<InfluenceRecord> recs;
  for (std::uint64_t epoch = 1; epoch <= 5; ++epoch)
    for (std::uint64_t g = 0; g < epoch; ++g) {
      InfluenceRecord r;
      r.epoch = epoch;
      r.group_id = g;
      r.metric = Metric::ret;
      r.value = static_cast<double>(10 * epoch + g);
      recs.push_back(r);
      r.metric = Metric::bias;
      recs.push_back(r);
    }
  const auto rows = heatmap_table(recs, Metric::ret);
  CHECK(rows.size() == 15);
  CHECK(rows[0].normalized_index == 0.0);
  std::vector<double> last;
  for (const auto& r : rows)
    if (r.epoch == 5) last.push_back(r.normalized_index);
  CHECK(last == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
}

TEST_CASE("correlation across trials") {
  auto trial = [](std::vector<double> values) {
    std::vector<InfluenceRecord> out;
    for (std::size_t g = 0; g < values.size(); ++g) {
      InfluenceRecord r;
      r.epoch = 1;
      r.group_id = g;
      r.metric = Metric::ret;
      r.value = values[g];
      out.push_back(r);
    }
    return out;
  };
  // Element 1 is an affine function of element 0; element 2 is its mirror image.
  std::vector<std::vector<InfluenceRecord>> trials;
  for (double x : {1.0, 2.0, 4.0, 7.0}) trials.push_back(trial({x, 3 * x + 1, -x, 5.0}));
  const auto c = influence_correlation(trials, Metric::ret);
  REQUIRE(c.size() == 1);
  CHECK(c[0].pairs == 3);
  CHECK(c[0].excluded_elements == 1);
  CHECK(c[0].mean_correlation == doctest::Approx((1.0 - 1.0 - 1.0) / 3.0));
  const std::vector<double> x{1, 2, 4, 7}, y{-1, -2, -4, -7};
  CHECK(pearson(x, y) == doctest::Approx(-1.0));

  Rng rng(8);
  std::vector<std::vector<InfluenceRecord>> noise;
  const int n = 1000;
  for (int t = 0; t < n; ++t) noise.push_back(trial({rng.normal(), rng.normal(), rng.normal()}));
  const auto z = influence_correlation(noise, Metric::ret);
  CHECK(std::abs(z[0].mean_correlation) < 3.0 / std::sqrt(3.0 * n));

  CHECK_THROWS_AS(influence_correlation(std::span(trials.data(), 1), Metric::ret), std::invalid_argument);
}

TEST_CASE("influence csv round trip") {
  Fixture f;
  const std::vector<Metric> metrics{Metric::pe_self, Metric::ret};
  const auto sweep = influence_sweep(f.agent(), f.masks(), f.buffer, f.env, f.budget, metrics, 3);
  const auto dir = test::scratch_dir("influence_csv");
  pitod::atomic_write(dir / "i.csv", influence_csv(sweep.records));
  CHECK(read_influence_csv(dir / "i.csv") == sweep.records);
}

TEST_CASE("budget validation") {
  EvalBudget b;
  CHECK_NOTHROW(b.validate());
  b.rollouts_per_policy = 0;
  CHECK_THROWS_AS(b.validate(), std::invalid_argument);
  b = EvalBudget{};
  b.pe_critic = 3;
  CHECK_THROWS_AS(b.validate(), std::invalid_argument);
}
