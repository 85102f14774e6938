#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pitod/influence.hpp"

namespace pitod {

enum class AmendTarget { policy, critic };

std::string to_string(AmendTarget t);
AmendTarget amend_target_from_string(const std::string& s);

struct AmendmentDecision {
  std::uint64_t epoch = 0;
  AmendTarget target = AmendTarget::policy;
  std::optional<std::uint64_t> chosen_group;
  double decision_value = 0.0;  // influence of the chosen group in the sweep
  double pre_value = 0.0;       // metric of the unamended component
  double post_value = 0.0;      // metric under w_* when applied, else pre_value
  bool applied = false;
};

/// Selection only. Policy: argmax of return influence, applied iff > 0.
/// Critic: argmin of bias influence, applied iff < 0. Ties go to the lowest
/// group id. Throws std::invalid_argument when no record of the metric exists.
AmendmentDecision select_amendment(std::span<const InfluenceRecord> records, AmendTarget target);

/// Selection plus re-measurement on fresh paired seeds (the amendment
/// evaluation stream of `budget.seed` and `epoch`): L_ret of pi_theta and
/// pi_theta,w_* for the policy, L_bias of Q_phi and Q_phi,w_* over shared
/// fresh rollouts for the critic. Parameters are never touched.
AmendmentDecision amend_policy(const AgentState& agent, const MaskBank& masks,
                               std::span<const InfluenceRecord> return_records, const EnvSpec& env,
                               const EvalBudget& budget, std::uint64_t epoch);
AmendmentDecision amend_critic(const AgentState& agent, const MaskBank& masks,
                               std::span<const InfluenceRecord> bias_records, const EnvSpec& env,
                               const EvalBudget& budget, std::uint64_t epoch);

/// Budget whose rollouts use seeds unseen by the influence sweeps.
EvalBudget fresh_budget(const EvalBudget& budget, std::uint64_t epoch);

/// epoch,target,chosen_group,pre_value,post_value,applied
std::string amendments_csv(std::span<const AmendmentDecision> decisions);
std::vector<AmendmentDecision> read_amendments_csv(const std::filesystem::path& path);

}  // namespace pitod
