#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pitod {

enum class EnvName { pendulum, point_mass };

std::string to_string(EnvName name);
EnvName env_name_from_string(const std::string& name);

struct EnvSpec {
  EnvName name = EnvName::pendulum;
  int obs_dim = 3;
  int action_dim = 1;
  int max_episode_steps = 200;
  std::uint64_t seed = 0;

  /// Spec with the dimensions of the named environment filled in.
  static EnvSpec make(EnvName name, int max_episode_steps = 200, std::uint64_t seed = 0);
};

struct EnvState {
  std::vector<double> observation;
  std::vector<double> physics;  // hidden simulator state
  int step_index = 0;
  bool done = false;      // episode over (terminal or step cap)
  bool terminal = false;  // true environment termination; the step cap is a time limit
};

struct StepResult {
  EnvState next;
  double reward = 0.0;
};

/// Pendulum swing-up (torque-limited, g = 10, dt = 0.05):
///   observation (cos th, sin th, thdot), |thdot| <= 8, th ~ U[-pi, pi], thdot ~ U[-1, 1] at reset;
///   reward -(th^2 + 0.1 thdot^2 + 0.001 u^2) with u = 2a, in [-kPendulumRewardBound, 0];
///   no terminal states.
/// Point-mass reach (dt = 0.1, accel = 2a, |v| <= 2 per axis, |p| <= 1.5 per axis):
///   observation (px, py, vx, vy), p ~ U[-1, 1]^2 and v = 0 at reset;
///   reward -|p| - 0.01 |a|^2, in [-kPointMassRewardBound, 0];
///   terminal when |p| < 0.05 and |v| < 0.1.
inline constexpr double kPendulumRewardBound = 9.869604401089358 + 6.4 + 0.004;
inline constexpr double kPointMassRewardBound = 2.1213203435596424 + 0.02;

double reward_bound(EnvName name);

/// G(r) = -scale * r.
double poison_reward(double reward, double scale = 100.0);

class Environment {
 public:
  explicit Environment(EnvSpec spec);

  const EnvSpec& spec() const { return spec_; }
  double reward_bound() const { return pitod::reward_bound(spec_.name); }

  EnvState reset(std::uint64_t episode_seed) const;

  /// Throws std::logic_error on a finished episode. Out-of-range action
  /// components are clamped to [-1, 1] and counted.
  StepResult step(const EnvState& state, std::span<const double> action);

  std::uint64_t clamped_actions() const { return clamped_actions_; }

 private:
  EnvSpec spec_;
  std::uint64_t clamped_actions_ = 0;
};

}  // namespace pitod
