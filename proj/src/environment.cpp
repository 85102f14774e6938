#include "pitod/environment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "pitod/rng.hpp"

namespace pitod {

namespace {

constexpr double kPendulumMaxSpeed = 8.0;
constexpr double kPendulumMaxTorque = 2.0;
constexpr double kPendulumDt = 0.05;
constexpr double kPendulumGravity = 10.0;

constexpr double kPointDt = 0.1;
constexpr double kPointAccel = 2.0;
constexpr double kPointMaxSpeed = 2.0;
constexpr double kPointMaxPos = 1.5;
constexpr double kPointGoalRadius = 0.05;
constexpr double kPointGoalSpeed = 0.1;

double angle_normalize(double th) {
  const double two_pi = 2.0 * std::numbers::pi;
  double x = std::fmod(th + std::numbers::pi, two_pi);
  if (x < 0.0) x += two_pi;
  return x - std::numbers::pi;
}

}  // namespace

std::string to_string(EnvName name) {
  switch (name) {
    case EnvName::pendulum: return "pendulum";
    case EnvName::point_mass: return "point_mass";
  }
  return "unknown";
}

EnvName env_name_from_string(const std::string& name) {
  if (name == "pendulum") return EnvName::pendulum;
  if (name == "point_mass") return EnvName::point_mass;
  throw std::invalid_argument("unknown environment '" + name + "'");
}

EnvSpec EnvSpec::make(EnvName name, int max_episode_steps, std::uint64_t seed) {
  EnvSpec s;
  s.name = name;
  s.max_episode_steps = max_episode_steps;
  s.seed = seed;
  switch (name) {
    case EnvName::pendulum:
      s.obs_dim = 3;
      s.action_dim = 1;
      break;
    case EnvName::point_mass:
      s.obs_dim = 4;
      s.action_dim = 2;
      break;
  }
  return s;
}

double reward_bound(EnvName name) {
  return name == EnvName::pendulum ? kPendulumRewardBound : kPointMassRewardBound;
}

double poison_reward(double reward, double scale) { return -scale * reward; }

Environment::Environment(EnvSpec spec) : spec_(spec) {
  if (spec_.max_episode_steps < 1) throw std::invalid_argument("max_episode_steps must be >= 1");
  const EnvSpec expected = EnvSpec::make(spec_.name);
  if (spec_.obs_dim != expected.obs_dim || spec_.action_dim != expected.action_dim)
    throw std::invalid_argument("EnvSpec dimensions do not match environment " + to_string(spec_.name));
}

EnvState Environment::reset(std::uint64_t episode_seed) const {
  Rng rng(derive_seed(spec_.seed, Stream::environment, episode_seed));
  EnvState s;
  switch (spec_.name) {
    case EnvName::pendulum: {
      const double th = rng.uniform(-std::numbers::pi, std::numbers::pi);
      const double thdot = rng.uniform(-1.0, 1.0);
      s.physics = {th, thdot};
      s.observation = {std::cos(th), std::sin(th), thdot};
      break;
    }
    case EnvName::point_mass: {
      const double px = rng.uniform(-1.0, 1.0);
      const double py = rng.uniform(-1.0, 1.0);
      s.physics = {px, py, 0.0, 0.0};
      s.observation = s.physics;
      break;
    }
  }
  return s;
}

StepResult Environment::step(const EnvState& state, std::span<const double> action) {
  if (state.done) throw std::logic_error("step called on a finished episode");
  if (static_cast<int>(action.size()) != spec_.action_dim)
    throw std::invalid_argument("step: action dimension mismatch");
  std::vector<double> a(action.begin(), action.end());
  for (double& v : a) {
    if (!(v >= -1.0 && v <= 1.0)) {
      ++clamped_actions_;
      v = std::isnan(v) ? 0.0 : std::clamp(v, -1.0, 1.0);
    }
  }

  StepResult out;
  EnvState& next = out.next;
  next.step_index = state.step_index + 1;
  switch (spec_.name) {
    case EnvName::pendulum: {
      const double th = state.physics[0];
      const double thdot = state.physics[1];
      const double u = kPendulumMaxTorque * a[0];
      const double thn = angle_normalize(th);
      out.reward = -(thn * thn + 0.1 * thdot * thdot + 0.001 * u * u);
      double new_thdot = thdot + (3.0 * kPendulumGravity / 2.0 * std::sin(th) + 3.0 * u) * kPendulumDt;
      new_thdot = std::clamp(new_thdot, -kPendulumMaxSpeed, kPendulumMaxSpeed);
      const double new_th = th + new_thdot * kPendulumDt;
      next.physics = {new_th, new_thdot};
      next.observation = {std::cos(new_th), std::sin(new_th), new_thdot};
      break;
    }
    case EnvName::point_mass: {
      double vx = std::clamp(state.physics[2] + kPointAccel * a[0] * kPointDt, -kPointMaxSpeed, kPointMaxSpeed);
      double vy = std::clamp(state.physics[3] + kPointAccel * a[1] * kPointDt, -kPointMaxSpeed, kPointMaxSpeed);
      double px = state.physics[0] + vx * kPointDt;
      double py = state.physics[1] + vy * kPointDt;
      if (std::abs(px) > kPointMaxPos) {
        px = std::clamp(px, -kPointMaxPos, kPointMaxPos);
        vx = 0.0;
      }
      if (std::abs(py) > kPointMaxPos) {
        py = std::clamp(py, -kPointMaxPos, kPointMaxPos);
        vy = 0.0;
      }
      const double dist = std::hypot(px, py);
      out.reward = -dist - 0.01 * (a[0] * a[0] + a[1] * a[1]);
      next.physics = {px, py, vx, vy};
      next.observation = next.physics;
      next.terminal = dist < kPointGoalRadius && std::hypot(vx, vy) < kPointGoalSpeed;
      break;
    }
  }
  next.done = next.terminal || next.step_index >= spec_.max_episode_steps;
  return out;
}

}  // namespace pitod
