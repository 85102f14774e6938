#include "pitod/loo.hpp"

#include <cmath>
#include <stdexcept>

namespace pitod {

void LooConfig::validate() const {
  if (retrain_iterations < 1) throw std::invalid_argument("loo retrain_iterations must be >= 1");
  if (group_size < 1) throw std::invalid_argument("loo group_size must be >= 1");
}

AgentState loo_retrain(const LooBase& base, std::optional<std::uint64_t> excluded_group,
                       std::uint64_t group_size, std::uint64_t iterations) {
  if (group_size < 1) throw std::invalid_argument("loo group_size must be >= 1");
  if (base.stream.empty()) throw std::invalid_argument("loo: empty recorded stream");
  if (excluded_group && *excluded_group >= group_id_of(base.stream.size() - 1, group_size) + 1)
    throw std::invalid_argument("loo: group " + std::to_string(*excluded_group) + " is not in the recorded stream");

  Trainer trainer(base.env, base.train, base.mask, base.seed, /*masks_enabled=*/false);
  ReplayBuffer buffer(base.stream.size(), base.mask.group_size);
  std::size_t next = 0;
  for (std::uint64_t it = 0; it < iterations; ++it) {
    while (next < base.stream.size() && excluded_group &&
           group_id_of(next, group_size) == *excluded_group)
      ++next;
    if (next < base.stream.size()) buffer.push(base.stream[next++]);
    trainer.replay_updates(buffer);
  }
  return trainer.agent();
}

double loo_metric(const AgentState& agent, const LooBase& base, Metric metric,
                  std::optional<std::uint64_t> group, std::uint64_t group_size) {
  const MaskBits ones(static_cast<std::size_t>(agent.policy.shape().members), 1);
  const MaskView all = ones;
  switch (metric) {
    case Metric::ret:
      return policy_return(agent.policy, all, base.env, base.budget, base.budget.seed);
    case Metric::bias: {
      const auto rollouts = collect_rollouts(agent.policy, all, base.env, base.budget,
                                             derive_seed(base.budget.seed, Stream::evaluation, 0xB1A5));
      return bias_loss(rollouts, agent.gamma, clipped_critic(agent, all, all));
    }
    case Metric::pe_self:
    case Metric::pi_self: break;
  }

  std::vector<const Experience*> batch;
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < base.stream.size(); ++i)
    if (!group || group_id_of(i, group_size) == *group) members.push_back(i);
  for (std::size_t k : group_subsample(members.size(), base.budget.samples_per_group))
    batch.push_back(&base.stream[members[k]]);
  if (batch.empty()) throw std::invalid_argument("loo: no experiences in the evaluated group");

  const BatchTensors t = to_tensors(batch);
  const std::vector<MaskView> views(batch.size(), all);
  Rng rng(derive_seed(base.budget.seed, Stream::evaluation, 0x100));
  Matrix xi(t.states.rows(), agent.action_dim());
  for (Eigen::Index i = 0; i < xi.rows(); ++i)
    for (Eigen::Index k = 0; k < xi.cols(); ++k) xi(i, k) = rng.normal();

  if (metric == Metric::pe_self) {
    const int j = base.budget.pe_critic;
    const PolicyBatch next = evaluate_policy(agent.policy, t.next_states, views, xi);
    const Matrix qbar = agent.critic(j).target.forward(critic_input(t.next_states, next.action), views);
    const Vector y = t.rewards + agent.gamma * t.not_done.cwiseProduct(qbar.col(0));
    const Matrix q = agent.critic(j).online.forward(critic_input(t.states, t.actions), views);
    return (y - q.col(0)).array().square().mean();
  }
  const PolicyBatch pb = evaluate_policy(agent.policy, t.states, views, xi);
  const Matrix x = critic_input(t.states, pb.action);
  return 0.5 * (agent.q1.online.forward(x, views).col(0) + agent.q2.online.forward(x, views).col(0)).mean();
}

LooResult loo_influence(const LooBase& base, std::optional<std::uint64_t> excluded_group,
                        const LooConfig& config, const AgentState& control) {
  config.validate();
  LooResult r;
  r.excluded_group = excluded_group;
  r.metric = config.metric;
  r.retrain_iterations = config.retrain_iterations;
  r.control_value = loo_metric(control, base, config.metric, excluded_group, config.group_size);
  if (excluded_group) {
    const AgentState retrained = loo_retrain(base, excluded_group, config.group_size, config.retrain_iterations);
    r.retrained_value = loo_metric(retrained, base, config.metric, excluded_group, config.group_size);
  } else {
    r.retrained_value = r.control_value;
  }
  r.value = r.retrained_value - r.control_value;
  return r;
}

LooResult loo_influence(const LooBase& base, std::optional<std::uint64_t> excluded_group,
                        const LooConfig& config) {
  config.validate();
  const AgentState control = loo_retrain(base, std::nullopt, config.group_size, config.retrain_iterations);
  return loo_influence(base, excluded_group, config, control);
}

std::uint64_t loo_total_iterations(std::uint64_t total_iterations, std::uint64_t group_size) {
  if (total_iterations < 1 || group_size < 1) throw std::invalid_argument("loo_total_iterations: positive inputs required");
  return (total_iterations + group_size - 1) / group_size * total_iterations;
}

double estimate_loo_wallclock(const CostModel& model) {
  if (!(model.per_iteration_seconds > 0.0)) throw std::invalid_argument("per_iteration_seconds must be positive");
  return model.per_iteration_seconds *
         static_cast<double>(loo_total_iterations(model.total_iterations, model.group_size));
}

QuadraticFit fit_quadratic(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 3) throw std::invalid_argument("fit_quadratic: need >= 3 points");
  const auto n = static_cast<Eigen::Index>(x.size());
  Matrix A(n, 3);
  Vector b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double xi = x[static_cast<std::size_t>(i)];
    A(i, 0) = xi * xi;
    A(i, 1) = xi;
    A(i, 2) = 1.0;
    b(i) = y[static_cast<std::size_t>(i)];
  }
  const Vector coef = A.colPivHouseholderQr().solve(b);
  QuadraticFit f{coef(0), coef(1), coef(2), 0.0};
  const double mean = b.mean();
  const double ss_tot = (b.array() - mean).square().sum();
  const double ss_res = (A * coef - b).squaredNorm();
  f.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return f;
}

}  // namespace pitod
