#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pitod/agent.hpp"

namespace pitod::test {

// Central differences of f with respect to every entry of params.
inline std::vector<double> central_difference(std::span<double> params, const std::function<double()>& f,
                                              double eps = 1e-5) {
  std::vector<double> g(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double saved = params[k];
    params[k] = saved + eps;
    const double up = f();
    params[k] = saved - eps;
    const double down = f();
    params[k] = saved;
    g[k] = (up - down) / (2.0 * eps);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff += (a[k] - b[k]) * (a[k] - b[k]);
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

inline Experience random_experience(const EnvSpec& env, Rng& rng, std::uint64_t group, bool done = false) {
  Experience e;
  for (int k = 0; k < env.obs_dim; ++k) e.state.push_back(rng.uniform(-1.0, 1.0));
  for (int k = 0; k < env.action_dim; ++k) e.action.push_back(rng.uniform(-0.9, 0.9));
  for (int k = 0; k < env.obs_dim; ++k) e.next_state.push_back(rng.uniform(-1.0, 1.0));
  e.reward = rng.uniform(-2.0, 0.0);
  e.done = done;
  e.group_id = group;
  return e;
}

inline std::vector<const Experience*> pointers(const std::vector<Experience>& v) {
  std::vector<const Experience*> p;
  for (const auto& e : v) p.push_back(&e);
  return p;
}

inline Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

// Small configuration for fast end-to-end runs.
inline TrainConfig tiny_train(std::uint64_t ipe = 200) {
  TrainConfig c;
  c.hidden_units = 8;
  c.batch_size = 16;
  c.replay_ratio = 1;
  c.random_start_steps = ipe / 2;
  c.iterations_per_epoch = ipe;
  c.replay_capacity = 100000;
  return c;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("pitod_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline bool same_bits(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace pitod::test
