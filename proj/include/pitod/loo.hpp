#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pitod/influence.hpp"

namespace pitod {

struct LooConfig {
  std::uint64_t retrain_iterations = 2000;
  std::uint64_t group_size = 5000;
  Metric metric = Metric::ret;

  void validate() const;
};

/// A recorded training run: its configuration and the experience stream in
/// insertion order.
struct LooBase {
  EnvSpec env;
  TrainConfig train;
  MaskSpec mask;
  EvalBudget budget;
  std::uint64_t seed = 0;
  std::vector<Experience> stream;
};

/// Fresh agent trained with masks off for `iterations` policy iterations on
/// the stream minus the excluded group (group = stream index / group_size).
/// Iteration i pushes the i-th kept experience (while any remain) and then
/// runs replay_ratio update rounds; no environment interaction happens.
AgentState loo_retrain(const LooBase& base, std::optional<std::uint64_t> excluded_group,
                       std::uint64_t group_size, std::uint64_t iterations);

/// L(agent) for the metric. Self metrics are evaluated on `group` (the whole
/// stream when absent) with unmasked networks.
double loo_metric(const AgentState& agent, const LooBase& base, Metric metric,
                  std::optional<std::uint64_t> group, std::uint64_t group_size);

struct LooResult {
  std::optional<std::uint64_t> excluded_group;
  Metric metric = Metric::ret;
  std::uint64_t retrain_iterations = 0;
  double retrained_value = 0.0;
  double control_value = 0.0;
  double value = 0.0;  // retrained_value - control_value
};

/// L(retrained without the group) - L(control retrained on everything), both
/// from identical seeds. With no exclusion the value is exactly 0.
LooResult loo_influence(const LooBase& base, std::optional<std::uint64_t> excluded_group,
                        const LooConfig& config);
/// Same, reusing an already retrained control agent.
LooResult loo_influence(const LooBase& base, std::optional<std::uint64_t> excluded_group,
                        const LooConfig& config, const AgentState& control);

/// ceil(I / group_size) * I.
std::uint64_t loo_total_iterations(std::uint64_t total_iterations, std::uint64_t group_size);

struct CostModel {
  double per_iteration_seconds = 0.0;
  std::uint64_t total_iterations = 0;
  std::uint64_t group_size = 5000;
};

double estimate_loo_wallclock(const CostModel& model);

/// Least-squares y = a x^2 + b x + c with its coefficient of determination.
struct QuadraticFit {
  double a = 0.0, b = 0.0, c = 0.0;
  double r_squared = 0.0;
};
QuadraticFit fit_quadratic(std::span<const double> x, std::span<const double> y);

}  // namespace pitod
