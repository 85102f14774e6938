#include "pitod/amendment.hpp"

#include <stdexcept>

#include "pitod/csv.hpp"

namespace pitod {

std::string to_string(AmendTarget t) { return t == AmendTarget::policy ? "policy" : "critic"; }

AmendTarget amend_target_from_string(const std::string& s) {
  if (s == "policy") return AmendTarget::policy;
  if (s == "critic") return AmendTarget::critic;
  throw std::invalid_argument("unknown amendment target '" + s + "' (expected policy or critic)");
}

AmendmentDecision select_amendment(std::span<const InfluenceRecord> records, AmendTarget target) {
  const Metric metric = target == AmendTarget::policy ? Metric::ret : Metric::bias;
  const InfluenceRecord* best = nullptr;
  for (const auto& r : records) {
    if (r.metric != metric) continue;
    const bool better = best == nullptr ||
                        (target == AmendTarget::policy ? r.value > best->value : r.value < best->value) ||
                        (r.value == best->value && r.group_id < best->group_id);
    if (better) best = &r;
  }
  if (best == nullptr)
    throw std::invalid_argument("no " + to_string(metric) + " records to amend the " + to_string(target) + " from");
  AmendmentDecision d;
  d.epoch = best->epoch;
  d.target = target;
  d.chosen_group = best->group_id;
  d.decision_value = best->value;
  d.applied = target == AmendTarget::policy ? best->value > 0.0 : best->value < 0.0;
  return d;
}

EvalBudget fresh_budget(const EvalBudget& budget, std::uint64_t epoch) {
  EvalBudget b = budget;
  b.seed = derive_seed(budget.seed, Stream::amendment_evaluation, epoch);
  return b;
}

AmendmentDecision amend_policy(const AgentState& agent, const MaskBank& masks,
                               std::span<const InfluenceRecord> return_records, const EnvSpec& env,
                               const EvalBudget& budget, std::uint64_t epoch) {
  AmendmentDecision d = select_amendment(return_records, AmendTarget::policy);
  d.epoch = epoch;
  const EvalBudget fresh = fresh_budget(budget, epoch);
  d.pre_value = policy_return(agent.policy, masks.all_ones(), env, fresh, fresh.seed);
  d.post_value = d.applied
                     ? policy_return(agent.policy, masks.flipped(*d.chosen_group, Role::policy), env, fresh, fresh.seed)
                     : d.pre_value;
  return d;
}

AmendmentDecision amend_critic(const AgentState& agent, const MaskBank& masks,
                               std::span<const InfluenceRecord> bias_records, const EnvSpec& env,
                               const EvalBudget& budget, std::uint64_t epoch) {
  AmendmentDecision d = select_amendment(bias_records, AmendTarget::critic);
  d.epoch = epoch;
  const EvalBudget fresh = fresh_budget(budget, epoch);
  const auto rollouts = collect_rollouts(agent.policy, masks.all_ones(), env, fresh, fresh.seed);
  d.pre_value = bias_loss(rollouts, agent.gamma, clipped_critic(agent, masks.all_ones(), masks.all_ones()));
  if (d.applied) {
    const std::uint64_t g = *d.chosen_group;
    d.post_value = bias_loss(rollouts, agent.gamma,
                             clipped_critic(agent, masks.flipped(g, Role::q1), masks.flipped(g, Role::q2)));
  } else {
    d.post_value = d.pre_value;
  }
  return d;
}

std::string amendments_csv(std::span<const AmendmentDecision> decisions) {
  CsvWriter w({"epoch", "target", "chosen_group", "pre_value", "post_value", "applied"});
  for (const auto& d : decisions) {
    w.cell(d.epoch).cell(to_string(d.target));
    if (d.chosen_group)
      w.cell(*d.chosen_group);
    else
      w.cell(std::string_view{});
    w.cell(d.pre_value).cell(d.post_value).cell(d.applied).end_row();
  }
  return w.str();
}

std::vector<AmendmentDecision> read_amendments_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t ce = t.column("epoch"), ct = t.column("target"), cg = t.column("chosen_group"),
                    cpre = t.column("pre_value"), cpost = t.column("post_value"), ca = t.column("applied");
  std::vector<AmendmentDecision> out;
  for (const auto& row : t.rows) {
    AmendmentDecision d;
    d.epoch = static_cast<std::uint64_t>(parse_int(row.at(ce)));
    d.target = amend_target_from_string(row.at(ct));
    if (!row.at(cg).empty()) d.chosen_group = static_cast<std::uint64_t>(parse_int(row.at(cg)));
    d.pre_value = parse_double(row.at(cpre));
    d.post_value = parse_double(row.at(cpost));
    d.applied = parse_int(row.at(ca)) != 0;
    out.push_back(d);
  }
  return out;
}

}  // namespace pitod
