#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pitod/adam.hpp"
#include "pitod/ensemble.hpp"
#include "pitod/environment.hpp"
#include "pitod/mask.hpp"
#include "pitod/policy.hpp"
#include "pitod/replay.hpp"

namespace pitod {

enum class Variant { base, droq, reset };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct TrainConfig {
  double learning_rate = 3e-4;
  double gamma = 0.99;
  double rho = 0.005;  // target <- (1 - rho) target + rho online
  std::size_t batch_size = 256;
  int replay_ratio = 4;
  std::uint64_t random_start_steps = 5000;
  std::uint64_t iterations_per_epoch = 5000;
  std::size_t replay_capacity = 2000000;
  int hidden_units = 128;
  Variant variant = Variant::base;
  double droq_dropout = 0.01;
  std::uint64_t reset_interval = 100000;
  double alpha = 0.2;
  bool auto_alpha = false;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
  AdamOptions adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_epsilon}; }
};

/// Policy theta, critic pairs (phi_1, target), (phi_2, target), entropy
/// coefficient and discount.
struct AgentState {
  EnsembleApproximator policy;
  TargetPair q1;
  TargetPair q2;
  double alpha = 0.2;
  double log_alpha = 0.0;
  double gamma = 0.99;
  std::uint64_t update_count = 0;

  const TargetPair& critic(int j) const { return j == 1 ? q1 : q2; }
  TargetPair& critic(int j) { return j == 1 ? q1 : q2; }
  int obs_dim() const { return policy.shape().input_dim; }
  int action_dim() const { return policy.shape().output_dim / 2; }
};

/// Fresh networks: policy obs -> 2 * action_dim, critics obs + action -> 1.
AgentState make_agent(const EnvSpec& env, const TrainConfig& config, int ensemble_size,
                      std::uint64_t init_seed);

using Batch = std::span<const Experience* const>;

/// Batch columns as matrices.
struct BatchTensors {
  Matrix states, actions, next_states;
  Vector rewards, not_done;
};
BatchTensors to_tensors(Batch batch);

/// [s | a] rows.
Matrix critic_input(const Matrix& states, const Matrix& actions);

/// Per-row masks of one role for the groups in a batch.
std::vector<MaskView> row_masks(const MaskBank& masks, Batch batch, Role role);

/// y = r + gamma * (1 - done) * (min_j Q_target_j(s', a') - alpha log pi(a'|s')),
/// a' = tanh-squashed sample from the group-masked policy under noise row xi.
Vector compute_td_targets(const AgentState& agent, const MaskBank& masks, Batch batch,
                          const Matrix& next_noise, const UnitDropout& dropout = {});
double compute_td_target(const AgentState& agent, const MaskBank& masks, const Experience& e,
                         const Vector& next_noise);

struct ObjectiveGradient {
  double value = 0.0;
  std::vector<double> grad;    // d value / d params of the updated network
  std::vector<std::uint8_t> touched;  // members that received a gradient term
};

/// mean_i (Q_j,m_i(s_i, a_i) - y_i)^2 and its gradient w.r.t. phi_j.
ObjectiveGradient critic_loss_gradient(const AgentState& agent, const MaskBank& masks, int critic,
                                       Batch batch, const Vector& targets,
                                       const UnitDropout& dropout = {});

/// mean_i (0.5 sum_j Q_j,m_i(s_i, a_i) - alpha log pi_m_i(a_i|s_i)) with
/// reparameterized a_i, and its gradient w.r.t. theta (critics held fixed).
/// Also returns the batch mean of log pi through `mean_log_prob`.
ObjectiveGradient actor_objective_gradient(const AgentState& agent, const MaskBank& masks,
                                           Batch batch, const Matrix& noise,
                                           double* mean_log_prob = nullptr,
                                           const UnitDropout& dropout = {});

struct UpdateStats {
  double td_loss = 0.0;  // mean of the two critic losses
  double policy_objective = 0.0;
};

struct EpochMetrics {
  std::uint64_t epoch = 0;
  double mean_td_loss = 0.0;
  double mean_policy_obj = 0.0;
  double mean_return = 0.0;  // mean true return of training episodes finished this epoch
  std::uint64_t episodes = 0;
  std::uint64_t steps = 0;
  std::uint64_t update_rounds = 0;
};

/// Single-threaded training loop over one agent. Owns the optimizers, mask
/// bank and the action-noise / sampler / dropout random streams.
class Trainer {
 public:
  Trainer(const EnvSpec& env, TrainConfig config, MaskSpec mask_spec, std::uint64_t seed,
          bool masks_enabled = true);

  AgentState& agent() { return agent_; }
  const AgentState& agent() const { return agent_; }
  MaskBank& masks() { return masks_; }
  const MaskBank& masks() const { return masks_; }
  const TrainConfig& config() const { return config_; }
  std::uint64_t total_steps() const { return total_steps_; }
  std::uint64_t resets() const { return resets_; }

  /// One environment interaction, push, then replay_ratio update rounds once
  /// the buffer holds at least batch_size experiences.
  void env_step(Environment& env, ReplayBuffer& buffer);

  /// replay_ratio update rounds on the buffer (none while it holds fewer than
  /// batch_size experiences).
  void replay_updates(const ReplayBuffer& buffer);

  /// iterations_per_epoch env_step calls.
  EpochMetrics train_epoch(Environment& env, ReplayBuffer& buffer);

  /// Critic update, Polyak update, then actor update on one minibatch.
  UpdateStats update_round(Batch batch);
  /// Samples a minibatch uniformly (with replacement) from `pool`.
  UpdateStats update_from_pool(std::span<const Experience> pool);

  double critic_update(Batch batch);
  double actor_update(Batch batch);

  /// Reset variant: re-initializes all networks and optimizers when
  /// step_index is a positive multiple of reset_interval. Base and DroQ: no-op.
  void apply_variant(std::uint64_t step_index);

  /// Rewards of the next `count` pushed experiences become -scale * r.
  void poison_next(std::uint64_t count, double scale);

  /// Acting action: uniform during the random-start phase, else a sample from
  /// the unmasked policy.
  Vector act(std::span<const double> observation);

  UnitDropout critic_dropout();

 private:
  void reinitialize();
  Matrix draw_noise(Eigen::Index rows);

  TrainConfig config_;
  EnvSpec env_spec_;
  std::uint64_t seed_;
  AgentState agent_;
  MaskBank masks_;
  BlockAdam policy_opt_, q1_opt_, q2_opt_, alpha_opt_;
  Rng sampler_rng_, noise_rng_, dropout_rng_;
  std::uint64_t total_steps_ = 0;
  std::uint64_t episodes_started_ = 0;
  std::uint64_t resets_ = 0;
  std::optional<EnvState> episode_;
  double episode_return_ = 0.0;
  std::uint64_t poison_remaining_ = 0;
  double poison_scale_ = 100.0;

  // Accumulators for the running epoch.
  double td_sum_ = 0.0, obj_sum_ = 0.0, ret_sum_ = 0.0;
  std::uint64_t rounds_ = 0, episodes_done_ = 0;
};

}  // namespace pitod
