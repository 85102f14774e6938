#include "pitod/influence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "pitod/csv.hpp"

namespace pitod {

std::string to_string(Metric m) {
  switch (m) {
    case Metric::pe_self: return "pe_self";
    case Metric::pi_self: return "pi_self";
    case Metric::ret: return "return";
    case Metric::bias: return "bias";
  }
  return "unknown";
}

Metric metric_from_string(const std::string& s) {
  if (s == "pe_self" || s == "pe") return Metric::pe_self;
  if (s == "pi_self" || s == "pi") return Metric::pi_self;
  if (s == "return") return Metric::ret;
  if (s == "bias") return Metric::bias;
  throw std::invalid_argument("unknown metric '" + s + "' (expected pe, pi, return or bias)");
}

std::vector<Metric> parse_metrics(const std::string& list) {
  std::vector<Metric> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const Metric m = metric_from_string(item);
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  }
  if (out.empty()) throw std::invalid_argument("empty metric list");
  std::sort(out.begin(), out.end());
  return out;
}

bool sign_expected(Metric m, double value) {
  switch (m) {
    case Metric::pe_self: return value >= 0.0;
    case Metric::pi_self: return value <= 0.0;
    default: throw std::invalid_argument("sign expectation is defined for self-influence only");
  }
}

void EvalBudget::validate() const {
  if (rollouts_per_policy < 1) throw std::invalid_argument("eval.rollouts_per_policy must be >= 1");
  if (horizon < 0) throw std::invalid_argument("eval.horizon must be >= 0");
  if (estimation_interval < 1) throw std::invalid_argument("eval.estimation_interval must be >= 1");
  if (samples_per_group < 1) throw std::invalid_argument("eval.samples_per_group must be >= 1");
  if (!(gamma_eval >= 0.0 && gamma_eval <= 1.0)) throw std::invalid_argument("eval.gamma_eval must lie in [0, 1]");
  if (pe_critic != 1 && pe_critic != 2) throw std::invalid_argument("eval.pe_critic must be 1 or 2");
}

namespace {

Matrix normal_rows(std::uint64_t seed, std::span<const std::uint64_t> keys, int dim) {
  Matrix xi(static_cast<Eigen::Index>(keys.size()), dim);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    Rng rng(derive_seed(seed, Stream::evaluation, keys[i]));
    for (int k = 0; k < dim; ++k) xi(static_cast<Eigen::Index>(i), k) = rng.normal();
  }
  return xi;
}

std::vector<MaskView> flipped_masks(const MaskBank& masks, Batch batch, Role role) {
  std::vector<MaskView> out;
  out.reserve(batch.size());
  for (const Experience* e : batch) out.push_back(masks.flipped(e->group_id, role));
  return out;
}

std::vector<MaskView> baseline_masks(const MaskBank& masks, Batch batch, Role role, Baseline b) {
  if (b == Baseline::masked) return row_masks(masks, batch, role);
  return std::vector<MaskView>(batch.size(), masks.all_ones());
}

Role critic_role(int j) { return j == 1 ? Role::q1 : Role::q2; }

}  // namespace

SelfTerms self_influence_pe_terms(const AgentState& agent, const MaskBank& masks, Batch batch,
                                  const Matrix& next_noise, int critic, Baseline baseline) {
  if (critic != 1 && critic != 2) throw std::invalid_argument("critic index must be 1 or 2");
  const BatchTensors t = to_tensors(batch);
  const Role role = critic_role(critic);
  const PolicyBatch next =
      evaluate_policy(agent.policy, t.next_states, row_masks(masks, batch, Role::policy), next_noise);
  const Matrix qbar = agent.critic(critic).target.forward(critic_input(t.next_states, next.action),
                                                          row_masks(masks, batch, role));
  const Vector y = t.rewards + agent.gamma * t.not_done.cwiseProduct(qbar.col(0));
  const Matrix x = critic_input(t.states, t.actions);
  const EnsembleApproximator& q = agent.critic(critic).online;
  const Matrix qw = q.forward(x, flipped_masks(masks, batch, role));
  const Matrix qb = q.forward(x, baseline_masks(masks, batch, role, baseline));
  SelfTerms s;
  s.flipped = (y - qw.col(0)).array().square().matrix();
  s.baseline = (y - qb.col(0)).array().square().matrix();
  return s;
}

SelfTerms self_influence_pi_terms(const AgentState& agent, const MaskBank& masks, Batch batch,
                                  const Matrix& flipped_noise, const Matrix& baseline_noise,
                                  Baseline baseline) {
  const BatchTensors t = to_tensors(batch);
  const auto m1 = row_masks(masks, batch, Role::q1);
  const auto m2 = row_masks(masks, batch, Role::q2);
  auto objective = [&](const std::vector<MaskView>& pmasks, const Matrix& noise) {
    const PolicyBatch pb = evaluate_policy(agent.policy, t.states, pmasks, noise);
    const Matrix x = critic_input(t.states, pb.action);
    return Vector(0.5 * (agent.q1.online.forward(x, m1).col(0) + agent.q2.online.forward(x, m2).col(0)));
  };
  SelfTerms s;
  s.flipped = objective(flipped_masks(masks, batch, Role::policy), flipped_noise);
  s.baseline = objective(baseline_masks(masks, batch, Role::policy, baseline), baseline_noise);
  return s;
}

double self_influence_pe(const AgentState& agent, const MaskBank& masks, const Experience& e,
                         std::uint64_t noise_seed) {
  const Experience* item = &e;
  Rng rng(noise_seed);
  Matrix xi(1, agent.action_dim());
  for (Eigen::Index k = 0; k < xi.cols(); ++k) xi(0, k) = rng.normal();
  const SelfTerms s = self_influence_pe_terms(agent, masks, Batch(&item, 1), xi);
  return s.flipped(0) - s.baseline(0);
}

double self_influence_pi(const AgentState& agent, const MaskBank& masks, const Experience& e,
                         std::uint64_t noise_seed) {
  const Experience* item = &e;
  Rng rng(noise_seed);
  Matrix xw(1, agent.action_dim()), xb(1, agent.action_dim());
  for (Eigen::Index k = 0; k < xw.cols(); ++k) xw(0, k) = rng.normal();
  for (Eigen::Index k = 0; k < xb.cols(); ++k) xb(0, k) = rng.normal();
  const SelfTerms s = self_influence_pi_terms(agent, masks, Batch(&item, 1), xw, xb);
  return s.flipped(0) - s.baseline(0);
}

double sign_correct_ratio(std::span<const InfluenceRecord> records, Metric metric) {
  if (records.empty()) throw std::invalid_argument("sign_correct_ratio: empty record set");
  std::size_t ok = 0;
  for (const auto& r : records) {
    if (r.metric != metric || !r.sign_expected_ok)
      throw std::invalid_argument("sign_correct_ratio: records must all be " + to_string(metric));
    ok += *r.sign_expected_ok ? 1 : 0;
  }
  return static_cast<double>(ok) / static_cast<double>(records.size());
}

std::vector<Rollout> collect_rollouts(const EnsembleApproximator& policy, MaskView mask,
                                      const EnvSpec& env, const EvalBudget& budget,
                                      std::uint64_t seed) {
  Environment sim(env);
  const int horizon = budget.horizon > 0 ? budget.horizon : env.max_episode_steps;
  std::vector<Rollout> out;
  out.reserve(static_cast<std::size_t>(budget.rollouts_per_policy));
  Matrix x(1, env.obs_dim);
  for (int k = 0; k < budget.rollouts_per_policy; ++k) {
    const std::uint64_t episode_seed = derive_seed(seed, Stream::evaluation, static_cast<std::uint64_t>(k));
    Rng noise(derive_seed(seed, Stream::action_noise, static_cast<std::uint64_t>(k)));
    EnvState s = sim.reset(episode_seed);
    Rollout r;
    for (int t = 0; t < horizon && !s.done; ++t) {
      for (int i = 0; i < env.obs_dim; ++i) x(0, i) = s.observation[static_cast<std::size_t>(i)];
      const PolicyOutput po = split_policy_output(policy.forward(x, mask).row(0).transpose());
      Vector xi = Vector::Zero(env.action_dim);
      if (!budget.mean_action)
        for (int i = 0; i < env.action_dim; ++i) xi(i) = noise.normal();
      const Vector a = squash_sample(po, xi).action;
      RolloutStep step;
      step.state = s.observation;
      step.action.assign(a.data(), a.data() + a.size());
      StepResult res = sim.step(s, step.action);
      step.reward = res.reward;
      r.push_back(std::move(step));
      s = std::move(res.next);
    }
    out.push_back(std::move(r));
  }
  return out;
}

double discounted_return(const Rollout& r, double gamma) {
  double g = 0.0, w = 1.0;
  for (const auto& s : r) {
    g += w * s.reward;
    w *= gamma;
  }
  return g;
}

std::vector<double> tail_returns(const Rollout& r, double gamma) {
  std::vector<double> g(r.size());
  double acc = 0.0;
  for (std::size_t t = r.size(); t-- > 0;) {
    acc = r[t].reward + gamma * acc;
    g[t] = acc;
  }
  return g;
}

double policy_return(const EnsembleApproximator& policy, MaskView mask, const EnvSpec& env,
                     const EvalBudget& budget, std::uint64_t seed) {
  const auto rollouts = collect_rollouts(policy, mask, env, budget, seed);
  double sum = 0.0;
  for (const auto& r : rollouts) sum += discounted_return(r, budget.gamma_eval);
  return sum / static_cast<double>(rollouts.size());
}

double bias_loss(std::span<const Rollout> rollouts, double gamma, const QFunction& q) {
  std::size_t n = 0;
  for (const auto& r : rollouts) n += r.size();
  if (n == 0) throw std::invalid_argument("bias_loss: no rollout steps");
  std::size_t first = 0;
  while (rollouts[first].empty()) ++first;
  const auto sd = static_cast<Eigen::Index>(rollouts[first][0].state.size());
  const auto ad = static_cast<Eigen::Index>(rollouts[first][0].action.size());
  Matrix states(static_cast<Eigen::Index>(n), sd), actions(static_cast<Eigen::Index>(n), ad);
  std::vector<double> g;
  g.reserve(n);
  Eigen::Index row = 0;
  for (const auto& r : rollouts) {
    const auto tail = tail_returns(r, gamma);
    for (std::size_t t = 0; t < r.size(); ++t, ++row) {
      for (Eigen::Index k = 0; k < sd; ++k) states(row, k) = r[t].state[static_cast<std::size_t>(k)];
      for (Eigen::Index k = 0; k < ad; ++k) actions(row, k) = r[t].action[static_cast<std::size_t>(k)];
      g.push_back(tail[t]);
    }
  }
  const Vector qv = q(states, actions);
  if (qv.size() != static_cast<Eigen::Index>(n)) throw std::invalid_argument("bias_loss: Q output size");
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    sum += std::abs(qv(static_cast<Eigen::Index>(i)) - g[i]) / std::max(std::abs(g[i]), kBiasDenominatorFloor);
  return sum / static_cast<double>(n);
}

QFunction clipped_critic(const AgentState& agent, MaskView q1_mask, MaskView q2_mask) {
  return [&agent, q1_mask, q2_mask](const Matrix& states, const Matrix& actions) {
    const Matrix x = critic_input(states, actions);
    return Vector(agent.q1.online.forward(x, q1_mask).col(0).cwiseMin(agent.q2.online.forward(x, q2_mask).col(0)));
  };
}

namespace {

std::uint64_t rollout_seed(const EvalBudget& budget) { return derive_seed(budget.seed, Stream::evaluation, 0xB1A5); }

double baseline_return(const AgentState& agent, const MaskBank& masks, std::uint64_t group_id,
                       const EnvSpec& env, const EvalBudget& budget) {
  const MaskView m = budget.return_baseline == Baseline::masked ? masks.mask(group_id, Role::policy)
                                                                : masks.all_ones();
  return policy_return(agent.policy, m, env, budget, budget.seed);
}

QFunction baseline_critic(const AgentState& agent, const MaskBank& masks, std::uint64_t group_id,
                          const EvalBudget& budget) {
  if (budget.bias_baseline == Baseline::masked)
    return clipped_critic(agent, masks.mask(group_id, Role::q1), masks.mask(group_id, Role::q2));
  return clipped_critic(agent, masks.all_ones(), masks.all_ones());
}

}  // namespace

double return_influence(const AgentState& agent, const MaskBank& masks, std::uint64_t group_id,
                        const EnvSpec& env, const EvalBudget& budget) {
  const double w = policy_return(agent.policy, masks.flipped(group_id, Role::policy), env, budget, budget.seed);
  return w - baseline_return(agent, masks, group_id, env, budget);
}

double bias_influence(const AgentState& agent, const MaskBank& masks, std::uint64_t group_id,
                      const EnvSpec& env, const EvalBudget& budget) {
  const auto rollouts = collect_rollouts(agent.policy, masks.all_ones(), env, budget, rollout_seed(budget));
  const double w = bias_loss(rollouts, agent.gamma,
                             clipped_critic(agent, masks.flipped(group_id, Role::q1),
                                            masks.flipped(group_id, Role::q2)));
  return w - bias_loss(rollouts, agent.gamma, baseline_critic(agent, masks, group_id, budget));
}

std::vector<std::size_t> group_subsample(std::size_t group_size, std::size_t samples) {
  std::vector<std::size_t> idx;
  if (group_size <= samples) {
    idx.resize(group_size);
    for (std::size_t i = 0; i < group_size; ++i) idx[i] = i;
    return idx;
  }
  idx.reserve(samples);
  for (std::size_t i = 0; i < samples; ++i) idx.push_back(i * group_size / samples);
  return idx;
}

SweepResult influence_sweep(const AgentState& agent, const MaskBank& masks,
                            const ReplayBuffer& buffer, const EnvSpec& env,
                            const EvalBudget& budget, std::span<const Metric> metrics,
                            std::uint64_t epoch, bool keep_experience_records) {
  budget.validate();
  std::vector<Metric> order(metrics.begin(), metrics.end());
  std::sort(order.begin(), order.end());
  order.erase(std::unique(order.begin(), order.end()), order.end());
  auto wants = [&order](Metric m) { return std::find(order.begin(), order.end(), m) != order.end(); };

  const auto groups = buffer.groups();
  if (masks.group_count() < groups.size())
    throw std::invalid_argument("influence_sweep: masks missing for buffer groups");
  const int ad = agent.action_dim();

  // Shared baselines, evaluated once per sweep.
  std::optional<double> shared_return, shared_bias;
  std::vector<Rollout> bias_rollouts;
  if (wants(Metric::ret) && budget.return_baseline == Baseline::unmasked)
    shared_return = policy_return(agent.policy, masks.all_ones(), env, budget, budget.seed);
  if (wants(Metric::bias)) {
    bias_rollouts = collect_rollouts(agent.policy, masks.all_ones(), env, budget, rollout_seed(budget));
    if (budget.bias_baseline == Baseline::unmasked)
      shared_bias = bias_loss(bias_rollouts, agent.gamma, clipped_critic(agent, masks.all_ones(), masks.all_ones()));
  }

  SweepResult out;
  std::uint64_t offset = 0;
  for (const GroupInfo& gi : groups) {
    const std::uint64_t g = gi.group_id;
    const auto members = buffer.group(g);
    const auto picks = group_subsample(members.size(), budget.samples_per_group);
    std::vector<const Experience*> batch;
    std::vector<std::uint64_t> keys;
    for (std::size_t i : picks) {
      batch.push_back(&members[i]);
      keys.push_back(offset + i);
    }
    offset += gi.size;

    for (Metric m : order) {
      InfluenceRecord rec;
      rec.epoch = epoch;
      rec.group_id = g;
      rec.metric = m;
      double flipped_term = 0.0;
      if (is_self_metric(m)) {
        SelfTerms s;
        if (m == Metric::pe_self) {
          s = self_influence_pe_terms(agent, masks, batch, normal_rows(budget.seed ^ 0x7065, keys, ad),
                                      budget.pe_critic, budget.pe_baseline);
        } else {
          s = self_influence_pi_terms(agent, masks, batch, normal_rows(budget.seed ^ 0x7077, keys, ad),
                                      normal_rows(budget.seed ^ 0x706D, keys, ad), budget.pi_baseline);
        }
        SignTally& tally = out.signs[m];
        for (Eigen::Index i = 0; i < s.flipped.size(); ++i) {
          const double v = s.flipped(i) - s.baseline(i);
          const bool ok = sign_expected(m, v);
          tally.total += 1;
          tally.satisfied += ok ? 1 : 0;
          if (keep_experience_records)
            out.experience_records.push_back({epoch, g, m, v, s.baseline(i), ok});
        }
        flipped_term = s.flipped.mean();
        rec.baseline_value = s.baseline.mean();
      } else if (m == Metric::ret) {
        flipped_term = policy_return(agent.policy, masks.flipped(g, Role::policy), env, budget, budget.seed);
        rec.baseline_value = shared_return ? *shared_return : baseline_return(agent, masks, g, env, budget);
      } else {
        flipped_term = bias_loss(bias_rollouts, agent.gamma,
                                 clipped_critic(agent, masks.flipped(g, Role::q1), masks.flipped(g, Role::q2)));
        rec.baseline_value = shared_bias ? *shared_bias
                                         : bias_loss(bias_rollouts, agent.gamma, baseline_critic(agent, masks, g, budget));
      }
      rec.value = flipped_term - rec.baseline_value;
      if (is_self_metric(m)) rec.sign_expected_ok = sign_expected(m, rec.value);
      if (!std::isfinite(rec.value)) throw std::runtime_error("non-finite influence for group " + std::to_string(g));
      out.records.push_back(rec);
    }
  }
  return out;
}

std::vector<HeatmapRow> heatmap_table(std::span<const InfluenceRecord> records, Metric metric) {
  std::map<std::uint64_t, std::map<std::uint64_t, double>> by_epoch;
  for (const auto& r : records)
    if (r.metric == metric) by_epoch[r.epoch][r.group_id] = r.value;
  std::vector<HeatmapRow> rows;
  for (const auto& [epoch, groups] : by_epoch) {
    const double span = groups.size() > 1 ? static_cast<double>(groups.size() - 1) : 1.0;
    std::size_t rank = 0;
    for (const auto& [gid, value] : groups) {
      rows.push_back({epoch, static_cast<double>(rank) / span, value});
      ++rank;
    }
  }
  return rows;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("pearson: need two equal-length samples");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

std::vector<EpochCorrelation> influence_correlation(
    std::span<const std::vector<InfluenceRecord>> trials, Metric metric) {
  if (trials.size() < 2) throw std::invalid_argument("influence_correlation: need at least two trials");
  // epoch -> group -> per-trial values
  std::map<std::uint64_t, std::map<std::uint64_t, std::vector<double>>> table;
  for (std::size_t t = 0; t < trials.size(); ++t)
    for (const auto& r : trials[t])
      if (r.metric == metric) {
        auto& v = table[r.epoch][r.group_id];
        if (v.size() != t) throw std::invalid_argument("influence_correlation: trials disagree on groups");
        v.push_back(r.value);
      }
  std::vector<EpochCorrelation> out;
  for (const auto& [epoch, groups] : table) {
    EpochCorrelation ec;
    ec.epoch = epoch;
    std::vector<const std::vector<double>*> usable;
    for (const auto& [gid, values] : groups) {
      if (values.size() != trials.size())
        throw std::invalid_argument("influence_correlation: group " + std::to_string(gid) +
                                    " missing from a trial at epoch " + std::to_string(epoch));
      const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
      if (*lo == *hi) {
        ++ec.excluded_elements;
        continue;
      }
      usable.push_back(&values);
    }
    double sum = 0.0;
    for (std::size_t a = 0; a < usable.size(); ++a)
      for (std::size_t b = a + 1; b < usable.size(); ++b) {
        sum += pearson(*usable[a], *usable[b]);
        ++ec.pairs;
      }
    ec.mean_correlation = ec.pairs ? sum / static_cast<double>(ec.pairs) : std::numeric_limits<double>::quiet_NaN();
    out.push_back(ec);
  }
  return out;
}

std::string influence_csv(std::span<const InfluenceRecord> records) {
  CsvWriter w({"epoch", "group_id", "metric", "value", "baseline_value", "sign_expected_ok"});
  for (const auto& r : records) {
    w.cell(r.epoch).cell(r.group_id).cell(to_string(r.metric)).cell(r.value).cell(r.baseline_value);
    if (r.sign_expected_ok)
      w.cell(*r.sign_expected_ok);
    else
      w.cell(std::string_view{});
    w.end_row();
  }
  return w.str();
}

std::vector<InfluenceRecord> read_influence_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t ce = t.column("epoch"), cg = t.column("group_id"), cm = t.column("metric"),
                    cv = t.column("value"), cb = t.column("baseline_value"), cs = t.column("sign_expected_ok");
  std::vector<InfluenceRecord> out;
  for (const auto& row : t.rows) {
    InfluenceRecord r;
    r.epoch = static_cast<std::uint64_t>(parse_int(row.at(ce)));
    r.group_id = static_cast<std::uint64_t>(parse_int(row.at(cg)));
    r.metric = metric_from_string(row.at(cm));
    r.value = parse_double(row.at(cv));
    r.baseline_value = parse_double(row.at(cb));
    if (!row.at(cs).empty()) r.sign_expected_ok = parse_int(row.at(cs)) != 0;
    out.push_back(r);
  }
  return out;
}

}  // namespace pitod
