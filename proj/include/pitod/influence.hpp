#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pitod/agent.hpp"

namespace pitod {

enum class Metric { pe_self = 0, pi_self = 1, ret = 2, bias = 3 };

/// "pe_self", "pi_self", "return", "bias".
std::string to_string(Metric m);
/// Accepts the names above plus the short forms "pe" and "pi".
Metric metric_from_string(const std::string& s);
/// Comma-separated list.
std::vector<Metric> parse_metrics(const std::string& list);

inline bool is_self_metric(Metric m) { return m == Metric::pe_self || m == Metric::pi_self; }

/// Expected sign of a self-influence value: pe >= 0, pi <= 0.
bool sign_expected(Metric m, double value);

struct InfluenceRecord {
  std::uint64_t epoch = 0;
  std::uint64_t group_id = 0;
  Metric metric = Metric::pe_self;
  double value = 0.0;           // term under w_i minus baseline_value
  double baseline_value = 0.0;  // the subtracted term
  std::optional<bool> sign_expected_ok;  // self-influence only

  bool operator==(const InfluenceRecord&) const = default;
};

/// What the subtracted term is evaluated with: the group's own mask m_i or
/// the unmasked (all-ones) network.
enum class Baseline { masked, unmasked };

struct EvalBudget {
  int rollouts_per_policy = 10;
  int horizon = 0;  // 0: the environment's max_episode_steps
  std::uint64_t estimation_interval = 5000;
  std::size_t samples_per_group = 256;
  double gamma_eval = 1.0;  // discount of the return metric
  bool mean_action = true;  // evaluation rollouts act with tanh(mean)
  int pe_critic = 1;
  Baseline pe_baseline = Baseline::masked;
  Baseline pi_baseline = Baseline::masked;
  Baseline return_baseline = Baseline::unmasked;
  Baseline bias_baseline = Baseline::unmasked;
  std::uint64_t seed = 0;  // evaluation stream base; episode k uses derive_seed(seed, evaluation, k)

  void validate() const;
};

inline constexpr double kBiasDenominatorFloor = 1e-6;

// Self-influence on single experiences -------------------------------------

/// Per-experience terms of a self-influence metric for a batch of experiences.
/// value_i = flipped_i - baseline_i.
struct SelfTerms {
  Vector flipped;
  Vector baseline;
};

/// L_pe(Q) = (r + gamma (1 - done) Qbar_m(s', a') - Q(s, a))^2 with one a'
/// drawn from the m-masked policy and shared by both terms. `next_noise` has
/// one row per experience.
SelfTerms self_influence_pe_terms(const AgentState& agent, const MaskBank& masks, Batch batch,
                                  const Matrix& next_noise, int critic = 1,
                                  Baseline baseline = Baseline::masked);

/// L_pi(pi) = mean_j Q_j,m(s, a'), a' ~ pi(.|s), independent draws for the
/// flipped and baseline policies.
SelfTerms self_influence_pi_terms(const AgentState& agent, const MaskBank& masks, Batch batch,
                                  const Matrix& flipped_noise, const Matrix& baseline_noise,
                                  Baseline baseline = Baseline::masked);

/// Single-experience forms with noise derived from `noise_seed`.
double self_influence_pe(const AgentState& agent, const MaskBank& masks, const Experience& e,
                         std::uint64_t noise_seed);
double self_influence_pi(const AgentState& agent, const MaskBank& masks, const Experience& e,
                         std::uint64_t noise_seed);

/// Fraction of records whose sign_expected_ok is true. Throws on an empty set
/// or on records of another metric.
double sign_correct_ratio(std::span<const InfluenceRecord> records, Metric metric);

// Rollout-based metrics ----------------------------------------------------

struct RolloutStep {
  std::vector<double> state;
  std::vector<double> action;
  double reward = 0.0;
};
using Rollout = std::vector<RolloutStep>;

/// Evaluation episodes of the policy under `mask`; episode k resets with seed
/// derive_seed(seed, Stream::evaluation, k) so different policies see the same
/// initial states.
std::vector<Rollout> collect_rollouts(const EnsembleApproximator& policy, MaskView mask,
                                      const EnvSpec& env, const EvalBudget& budget,
                                      std::uint64_t seed);

/// sum_t gamma^t r_t.
double discounted_return(const Rollout& r, double gamma);
/// G_t = sum_{t' >= t} gamma^(t' - t) r_t'.
std::vector<double> tail_returns(const Rollout& r, double gamma);

/// Mean (gamma_eval-discounted) return over collect_rollouts.
double policy_return(const EnsembleApproximator& policy, MaskView mask, const EnvSpec& env,
                     const EvalBudget& budget, std::uint64_t seed);

/// Batched Q(s, a) over every step of the rollouts.
using QFunction = std::function<Vector(const Matrix& states, const Matrix& actions)>;

/// mean over all rollout steps of |Q(s_t, a_t) - G_t| / max(|G_t|, 1e-6).
double bias_loss(std::span<const Rollout> rollouts, double gamma, const QFunction& q);

/// min(Q1, Q2) with the given per-critic masks.
QFunction clipped_critic(const AgentState& agent, MaskView q1_mask, MaskView q2_mask);

/// L_ret(pi_w_g) - L_ret(baseline) on paired seeds.
double return_influence(const AgentState& agent, const MaskBank& masks, std::uint64_t group_id,
                        const EnvSpec& env, const EvalBudget& budget);

/// L_bias(Q_w_g) - L_bias(baseline) over shared rollouts of the unmasked policy.
double bias_influence(const AgentState& agent, const MaskBank& masks, std::uint64_t group_id,
                      const EnvSpec& env, const EvalBudget& budget);

// Sweeps -------------------------------------------------------------------

struct SignTally {
  std::uint64_t satisfied = 0;
  std::uint64_t total = 0;
  double ratio() const { return total ? static_cast<double>(satisfied) / static_cast<double>(total) : 0.0; }
};

struct SweepResult {
  /// One record per (group, metric), ordered by (group_id, metric).
  std::vector<InfluenceRecord> records;
  /// Experience-level sign bookkeeping for the self-influence metrics.
  std::map<Metric, SignTally> signs;
  /// Per-experience records behind the group means (self metrics only).
  std::vector<InfluenceRecord> experience_records;
};

/// Indices into the group's span used for self-influence: all of them when the
/// group is no larger than `samples`, otherwise `samples` evenly spaced ones.
std::vector<std::size_t> group_subsample(std::size_t group_size, std::size_t samples);

/// Evaluates every group of the buffer against one frozen snapshot. Pure:
/// neither the agent nor the buffer is modified, and repeated calls with the
/// same budget give identical results.
SweepResult influence_sweep(const AgentState& agent, const MaskBank& masks,
                            const ReplayBuffer& buffer, const EnvSpec& env,
                            const EvalBudget& budget, std::span<const Metric> metrics,
                            std::uint64_t epoch, bool keep_experience_records = false);

// Reporting ----------------------------------------------------------------

struct HeatmapRow {
  std::uint64_t epoch = 0;
  double normalized_index = 0.0;
  double value = 0.0;
};

/// Per epoch, groups ordered by id (age) and mapped linearly onto [0, 1],
/// oldest at 0. Records of other metrics are ignored.
std::vector<HeatmapRow> heatmap_table(std::span<const InfluenceRecord> records, Metric metric);

struct EpochCorrelation {
  std::uint64_t epoch = 0;
  double mean_correlation = 0.0;  // NaN when no pair is usable
  std::uint64_t pairs = 0;
  std::uint64_t excluded_elements = 0;  // zero variance across trials
};

/// Pearson correlation between group elements, trials being the samples.
double pearson(std::span<const double> x, std::span<const double> y);

/// Per epoch: the mean over element pairs of the across-trial correlation of
/// their influence values. Needs >= 2 trials sharing the epoch's group ids.
std::vector<EpochCorrelation> influence_correlation(
    std::span<const std::vector<InfluenceRecord>> trials, Metric metric);

// CSV ----------------------------------------------------------------------

/// epoch,group_id,metric,value,baseline_value,sign_expected_ok
std::string influence_csv(std::span<const InfluenceRecord> records);
std::vector<InfluenceRecord> read_influence_csv(const std::filesystem::path& path);

}  // namespace pitod
