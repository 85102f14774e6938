#include "pitod/agent.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

namespace pitod {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::base: return "base";
    case Variant::droq: return "droq";
    case Variant::reset: return "reset";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& s) {
  if (s == "base") return Variant::base;
  if (s == "droq") return Variant::droq;
  if (s == "reset") return Variant::reset;
  throw std::invalid_argument("unknown variant '" + s + "' (expected base, droq or reset)");
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
  };
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "train.learning_rate must be positive");
  require(gamma >= 0.0 && gamma < 1.0, "train.gamma must lie in [0, 1)");
  require(rho >= 0.0 && rho <= 1.0, "train.rho must lie in [0, 1]");
  require(batch_size >= 1 && batch_size <= kMaxBatchSize, "train.batch_size out of range");
  require(replay_ratio >= 1, "train.replay_ratio must be >= 1");
  require(iterations_per_epoch >= 1, "train.iterations_per_epoch must be >= 1");
  require(replay_capacity >= 1, "train.replay_capacity must be >= 1");
  require(hidden_units >= 2, "train.hidden_units must be >= 2");
  require(droq_dropout >= 0.0 && droq_dropout < 1.0, "train.droq_dropout must lie in [0, 1)");
  require(reset_interval >= 1, "train.reset_interval must be >= 1");
  require(alpha > 0.0 && std::isfinite(alpha), "train.alpha must be positive");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "train.adam_beta1 must lie in [0, 1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "train.adam_beta2 must lie in [0, 1)");
  require(adam_epsilon > 0.0, "train.adam_epsilon must be positive");
}

AgentState make_agent(const EnvSpec& env, const TrainConfig& config, int ensemble_size,
                      std::uint64_t init_seed) {
  const int h = config.hidden_units;
  EnsembleShape pshape{ensemble_size, env.obs_dim, 2 * env.action_dim, h};
  EnsembleShape qshape{ensemble_size, env.obs_dim + env.action_dim, 1, h};
  AgentState a;
  a.policy = EnsembleApproximator(pshape, derive_seed(init_seed, Stream::initialization, 0));
  a.q1 = TargetPair::from_online(
      EnsembleApproximator(qshape, derive_seed(init_seed, Stream::initialization, 1)));
  a.q2 = TargetPair::from_online(
      EnsembleApproximator(qshape, derive_seed(init_seed, Stream::initialization, 2)));
  a.alpha = config.alpha;
  a.log_alpha = std::log(config.alpha);
  a.gamma = config.gamma;
  return a;
}

BatchTensors to_tensors(Batch batch) {
  if (batch.empty()) throw std::invalid_argument("empty minibatch");
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto od = static_cast<Eigen::Index>(batch[0]->state.size());
  const auto ad = static_cast<Eigen::Index>(batch[0]->action.size());
  BatchTensors t;
  t.states.resize(n, od);
  t.actions.resize(n, ad);
  t.next_states.resize(n, od);
  t.rewards.resize(n);
  t.not_done.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Experience& e = *batch[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(e.state.size()) != od ||
        static_cast<Eigen::Index>(e.next_state.size()) != od ||
        static_cast<Eigen::Index>(e.action.size()) != ad)
      throw std::invalid_argument("minibatch experiences have inconsistent dimensions");
    for (Eigen::Index k = 0; k < od; ++k) {
      t.states(i, k) = e.state[static_cast<std::size_t>(k)];
      t.next_states(i, k) = e.next_state[static_cast<std::size_t>(k)];
    }
    for (Eigen::Index k = 0; k < ad; ++k) t.actions(i, k) = e.action[static_cast<std::size_t>(k)];
    t.rewards(i) = e.reward;
    t.not_done(i) = e.done ? 0.0 : 1.0;
  }
  return t;
}

Matrix critic_input(const Matrix& states, const Matrix& actions) {
  Matrix x(states.rows(), states.cols() + actions.cols());
  x << states, actions;
  return x;
}

std::vector<MaskView> row_masks(const MaskBank& masks, Batch batch, Role role) {
  std::vector<MaskView> out;
  out.reserve(batch.size());
  for (const Experience* e : batch) out.push_back(masks.mask(e->group_id, role));
  return out;
}

Vector compute_td_targets(const AgentState& agent, const MaskBank& masks, Batch batch,
                          const Matrix& next_noise, const UnitDropout& dropout) {
  const BatchTensors t = to_tensors(batch);
  const auto pm = row_masks(masks, batch, Role::policy);
  const PolicyBatch next = evaluate_policy(agent.policy, t.next_states, pm, next_noise);
  const Matrix x = critic_input(t.next_states, next.action);
  const auto m1 = row_masks(masks, batch, Role::q1);
  const auto m2 = row_masks(masks, batch, Role::q2);
  const Matrix q1 = agent.q1.target.forward(x, m1, nullptr, dropout);
  const Matrix q2 = agent.q2.target.forward(x, m2, nullptr, dropout);
  Vector y(t.rewards.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double soft = std::min(q1(i, 0), q2(i, 0)) - agent.alpha * next.log_prob(i);
    y(i) = t.rewards(i) + agent.gamma * t.not_done(i) * soft;
  }
  return y;
}

double compute_td_target(const AgentState& agent, const MaskBank& masks, const Experience& e,
                         const Vector& next_noise) {
  const Experience* item = &e;
  return compute_td_targets(agent, masks, Batch(&item, 1), next_noise.transpose())(0);
}

namespace {

std::vector<std::uint8_t> touched_members(const ForwardCache& cache) {
  std::vector<std::uint8_t> t(cache.members.size());
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = cache.member_touched(static_cast<int>(k)) ? 1 : 0;
  return t;
}

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

ObjectiveGradient critic_loss_gradient(const AgentState& agent, const MaskBank& masks, int critic,
                                       Batch batch, const Vector& targets,
                                       const UnitDropout& dropout) {
  if (critic != 1 && critic != 2) throw std::invalid_argument("critic index must be 1 or 2");
  const BatchTensors t = to_tensors(batch);
  if (targets.size() != t.rewards.size()) throw std::invalid_argument("target count mismatch");
  const EnsembleApproximator& net = agent.critic(critic).online;
  const auto m = row_masks(masks, batch, critic == 1 ? Role::q1 : Role::q2);
  ForwardCache cache;
  const Matrix q = net.forward(critic_input(t.states, t.actions), m, &cache, dropout);
  const Vector diff = q.col(0) - targets;
  const double n = static_cast<double>(diff.size());
  ObjectiveGradient out;
  out.value = diff.squaredNorm() / n;
  out.grad.assign(net.param_count(), 0.0);
  const Matrix upstream = (2.0 / n) * diff;
  net.backward(cache, upstream, out.grad);
  out.touched = touched_members(cache);
  return out;
}

ObjectiveGradient actor_objective_gradient(const AgentState& agent, const MaskBank& masks,
                                           Batch batch, const Matrix& noise,
                                           double* mean_log_prob, const UnitDropout& dropout) {
  const BatchTensors t = to_tensors(batch);
  const Eigen::Index n = t.states.rows();
  const Eigen::Index ad = t.actions.cols();
  const auto pm = row_masks(masks, batch, Role::policy);
  const PolicyBatch pb = evaluate_policy(agent.policy, t.states, pm, noise);
  const Matrix x = critic_input(t.states, pb.action);

  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix grad_action = Matrix::Zero(n, ad);
  Vector q_mean = Vector::Zero(n);
  for (int j = 1; j <= 2; ++j) {
    const auto m = row_masks(masks, batch, j == 1 ? Role::q1 : Role::q2);
    ForwardCache cache;
    const Matrix q = agent.critic(j).online.forward(x, m, &cache, dropout);
    q_mean += 0.5 * q.col(0);
    Matrix input_grad;
    agent.critic(j).online.backward(cache, Matrix::Constant(n, 1, 0.5 * inv_n), {}, &input_grad);
    grad_action += input_grad.rightCols(ad);
  }

  ObjectiveGradient out;
  out.value = (q_mean - agent.alpha * pb.log_prob).mean();
  if (mean_log_prob) *mean_log_prob = pb.log_prob.mean();
  const Vector grad_log_prob = Vector::Constant(n, -agent.alpha * inv_n);
  const Matrix graw = policy_output_gradient(pb, grad_action, grad_log_prob);
  out.grad.assign(agent.policy.param_count(), 0.0);
  agent.policy.backward(pb.cache, graw, out.grad);
  out.touched = touched_members(pb.cache);
  return out;
}

Trainer::Trainer(const EnvSpec& env, TrainConfig config, MaskSpec mask_spec, std::uint64_t seed,
                 bool masks_enabled)
    : config_(config),
      env_spec_(env),
      seed_(seed),
      masks_(mask_spec, masks_enabled),
      sampler_rng_(derive_seed(seed, Stream::sampler)),
      noise_rng_(derive_seed(seed, Stream::action_noise)),
      dropout_rng_(derive_seed(seed, Stream::dropout)) {
  config_.validate();
  reinitialize();
}

void Trainer::reinitialize() {
  agent_ = make_agent(env_spec_, config_, masks_.spec().ensemble_size,
                      derive_seed(seed_, Stream::initialization, resets_));
  const auto members = static_cast<std::size_t>(masks_.spec().ensemble_size);
  const AdamOptions opts = config_.adam();
  policy_opt_ = BlockAdam(members, agent_.policy.member_param_count(), opts);
  q1_opt_ = BlockAdam(members, agent_.q1.online.member_param_count(), opts);
  q2_opt_ = BlockAdam(members, agent_.q2.online.member_param_count(), opts);
  alpha_opt_ = BlockAdam(1, 1, opts);
}

Matrix Trainer::draw_noise(Eigen::Index rows) {
  Matrix xi(rows, env_spec_.action_dim);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index k = 0; k < xi.cols(); ++k) xi(i, k) = noise_rng_.normal();
  return xi;
}

UnitDropout Trainer::critic_dropout() {
  if (config_.variant != Variant::droq) return {};
  return {config_.droq_dropout, &dropout_rng_};
}

double Trainer::critic_update(Batch batch) {
  const UnitDropout dropout = critic_dropout();
  const Vector y = compute_td_targets(agent_, masks_, batch, draw_noise(static_cast<Eigen::Index>(batch.size())),
                                      dropout);
  double loss = 0.0;
  for (int j = 1; j <= 2; ++j) {
    ObjectiveGradient g = critic_loss_gradient(agent_, masks_, j, batch, y, dropout);
    if (!std::isfinite(g.value) || !all_finite(g.grad))
      throw std::runtime_error("non-finite critic " + std::to_string(j) + " loss at update " +
                               std::to_string(agent_.update_count));
    (j == 1 ? q1_opt_ : q2_opt_).step(agent_.critic(j).online.params(), g.grad, g.touched);
    loss += 0.5 * g.value;
  }
  polyak_update(agent_.q1, config_.rho);
  polyak_update(agent_.q2, config_.rho);
  return loss;
}

double Trainer::actor_update(Batch batch) {
  double mean_log_prob = 0.0;
  ObjectiveGradient g = actor_objective_gradient(
      agent_, masks_, batch, draw_noise(static_cast<Eigen::Index>(batch.size())), &mean_log_prob,
      critic_dropout());
  if (!std::isfinite(g.value) || !all_finite(g.grad))
    throw std::runtime_error("non-finite policy objective at update " +
                             std::to_string(agent_.update_count));
  for (double& v : g.grad) v = -v;  // ascent
  policy_opt_.step(agent_.policy.params(), g.grad, g.touched);
  if (config_.auto_alpha) {
    // Loss -log_alpha * (log pi + target_entropy), target entropy -action_dim.
    const double target_entropy = -static_cast<double>(env_spec_.action_dim);
    const double grad = -(mean_log_prob + target_entropy);
    const std::uint8_t touched = 1;
    alpha_opt_.step(std::span<double>(&agent_.log_alpha, 1), std::span<const double>(&grad, 1),
                    std::span<const std::uint8_t>(&touched, 1));
    agent_.alpha = std::exp(agent_.log_alpha);
  }
  return g.value;
}

UpdateStats Trainer::update_round(Batch batch) {
  UpdateStats s;
  s.td_loss = critic_update(batch);
  s.policy_objective = actor_update(batch);
  ++agent_.update_count;
  return s;
}

UpdateStats Trainer::update_from_pool(std::span<const Experience> pool) {
  const auto idx = sample_indices(pool.size(), config_.batch_size, sampler_rng_);
  std::vector<const Experience*> batch;
  batch.reserve(idx.size());
  for (std::size_t i : idx) batch.push_back(&pool[i]);
  return update_round(batch);
}

void Trainer::apply_variant(std::uint64_t step_index) {
  if (config_.variant != Variant::reset) return;
  if (step_index == 0 || step_index % config_.reset_interval != 0) return;
  ++resets_;
  reinitialize();
}

void Trainer::poison_next(std::uint64_t count, double scale) {
  poison_remaining_ = count;
  poison_scale_ = scale;
}

Vector Trainer::act(std::span<const double> observation) {
  const int ad = env_spec_.action_dim;
  Vector a(ad);
  if (total_steps_ < config_.random_start_steps) {
    for (int k = 0; k < ad; ++k) a(k) = noise_rng_.uniform(-1.0, 1.0);
    return a;
  }
  Matrix x(1, static_cast<Eigen::Index>(observation.size()));
  for (std::size_t k = 0; k < observation.size(); ++k) x(0, static_cast<Eigen::Index>(k)) = observation[k];
  const Matrix raw = agent_.policy.forward(x, masks_.all_ones());
  const PolicyOutput out = split_policy_output(raw.row(0).transpose());
  return squash_sample(out, draw_noise(1).row(0).transpose()).action;
}

void Trainer::env_step(Environment& env, ReplayBuffer& buffer) {
  if (!episode_) {
    episode_ = env.reset(episodes_started_++);
    episode_return_ = 0.0;
  }
  const Vector a = act(episode_->observation);
  const std::vector<double> action(a.data(), a.data() + a.size());
  StepResult res = env.step(*episode_, action);

  Experience e;
  e.state = episode_->observation;
  e.action = action;
  e.reward = res.reward;
  e.next_state = res.next.observation;
  e.done = res.next.terminal;
  if (poison_remaining_ > 0) {
    e.reward = poison_reward(res.reward, poison_scale_);
    e.poisoned = true;
    --poison_remaining_;
  }
  buffer.push(std::move(e));
  masks_.ensure(buffer.group_count());

  episode_return_ += res.reward;
  if (res.next.done) {
    ret_sum_ += episode_return_;
    ++episodes_done_;
    episode_.reset();
  } else {
    episode_ = std::move(res.next);
  }

  ++total_steps_;
  apply_variant(total_steps_);

  replay_updates(buffer);
}

void Trainer::replay_updates(const ReplayBuffer& buffer) {
  masks_.ensure(buffer.group_count());
  if (buffer.size() < config_.batch_size) return;
  for (int r = 0; r < config_.replay_ratio; ++r) {
    const UpdateStats s = update_from_pool(buffer.storage());
    td_sum_ += s.td_loss;
    obj_sum_ += s.policy_objective;
    ++rounds_;
  }
}

EpochMetrics Trainer::train_epoch(Environment& env, ReplayBuffer& buffer) {
  td_sum_ = obj_sum_ = ret_sum_ = 0.0;
  rounds_ = episodes_done_ = 0;
  const std::uint64_t start = total_steps_;
  for (std::uint64_t i = 0; i < config_.iterations_per_epoch; ++i) env_step(env, buffer);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EpochMetrics m;
  m.epoch = config_.iterations_per_epoch ? total_steps_ / config_.iterations_per_epoch : 0;
  m.steps = total_steps_ - start;
  m.update_rounds = rounds_;
  m.episodes = episodes_done_;
  m.mean_td_loss = rounds_ ? td_sum_ / static_cast<double>(rounds_) : nan;
  m.mean_policy_obj = rounds_ ? obj_sum_ / static_cast<double>(rounds_) : nan;
  m.mean_return = episodes_done_ ? ret_sum_ / static_cast<double>(episodes_done_) : nan;
  return m;
}

}  // namespace pitod
