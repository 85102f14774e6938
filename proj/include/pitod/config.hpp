#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pitod/agent.hpp"
#include "pitod/influence.hpp"

namespace pitod {

/// Schema violation; the message starts with the offending key path.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct PoisonSchedule {
  bool enabled = false;
  std::uint64_t epoch = 1;   // 0-based epoch whose experiences are poisoned
  std::uint64_t groups = 1;  // poisoned experiences = groups * group_size
  double scale = 100.0;
};

struct AmendSchedule {
  bool enabled = false;
  std::uint64_t interval = 50000;  // training iterations between amendments
};

/// Complete description of one trial. Keys of the JSON form:
///   profile            "full" (default) or "desk"; applied before other keys
///   epochs, seed, output_dir, save_buffer, checkpoints
///   env     {name, max_episode_steps}
///   train   {learning_rate, gamma, rho, batch_size, replay_ratio, random_start_steps,
///            iterations_per_epoch, replay_capacity, hidden_units, variant, droq_dropout,
///            reset_interval, alpha, auto_alpha, adam_beta1, adam_beta2, adam_epsilon}
///   mask    {ensemble_size, dropout_rate, group_size}
///   eval    {rollouts_per_policy, horizon, estimation_interval, samples_per_group, gamma_eval,
///            mean_action, pe_critic, pe_baseline, pi_baseline, return_baseline, bias_baseline,
///            metrics}
///   poison  {enabled, epoch, groups, scale}
///   amend   {enabled, interval}
/// Environment, mask and evaluation seeds are derived from `seed`.
struct RunConfig {
  std::string profile = "full";
  EnvSpec env;
  TrainConfig train;
  MaskSpec mask;
  EvalBudget eval;
  std::vector<Metric> sweep_metrics{Metric::pe_self, Metric::pi_self};
  PoisonSchedule poison;
  AmendSchedule amend;
  std::uint64_t epochs = 300;
  std::uint64_t seed = 0;
  std::string output_dir = "run";
  bool save_buffer = true;
  bool checkpoints = true;

  /// Re-derives the environment, mask and evaluation seeds from `seed`.
  void derive_seeds();
  /// Relation checks across sections; throws ConfigError.
  void validate() const;

  nlohmann::json to_json() const;
  /// FNV-1a of the canonical JSON form.
  std::string hash() const;

  std::uint64_t total_iterations() const { return epochs * train.iterations_per_epoch; }
  bool sweep_due(std::uint64_t epochs_done) const;
  bool amend_due(std::uint64_t epochs_done) const;
};

RunConfig profile_defaults(const std::string& profile);

/// Parses, defaults, and validates. Empty text yields the full-scale defaults.
RunConfig validate_config(std::string_view text);
RunConfig config_from_json(const nlohmann::json& j);

}  // namespace pitod
