#pragma once

#include <cstdint>

#include "pitod/ensemble.hpp"

namespace pitod {

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;

/// Diagonal Gaussian over pre-squash actions.
struct PolicyOutput {
  Vector mean;
  Vector log_std;  // clamped to [kLogStdMin, kLogStdMax]
};

/// Splits a raw policy-network output [mean, log_std] and clamps log_std.
PolicyOutput split_policy_output(const Vector& raw);

struct ActionSample {
  Vector action;  // tanh(mean + std * xi), inside [-1, 1]^d
  double log_prob = 0.0;
};

/// log(1 - tanh(u)^2), evaluated stably as 2 (log 2 - u - softplus(-2u)).
double log_one_minus_tanh_sq(double u);

/// Tanh-squashed Gaussian sample for fixed standard-normal noise `xi`, with
/// the change-of-variables correction in log_prob.
ActionSample squash_sample(const PolicyOutput& out, const Vector& xi);

/// Draws xi from Rng(noise_seed) and squashes.
ActionSample sample_action(const PolicyOutput& out, std::uint64_t noise_seed);

/// Batched evaluation of a policy ensemble with reparameterized sampling.
/// Every row of `xi` is the standard-normal noise for the same row of states;
/// a zero row yields the deterministic action tanh(mean).
struct PolicyBatch {
  Matrix raw;       // network output [mean | raw log_std]
  Matrix mean;
  Matrix log_std;   // clamped
  Matrix xi;
  Matrix pre_tanh;  // mean + exp(log_std) * xi
  Matrix action;
  Vector log_prob;
  ForwardCache cache;
};

PolicyBatch evaluate_policy(const EnsembleApproximator& policy, const Matrix& states,
                            std::span<const MaskView> row_masks, const Matrix& xi);

/// Gradient of sum_i [dJ/da_i . a_i + dJ/dlogp_i * log_prob_i] w.r.t. the raw
/// network outputs, holding xi fixed. `grad_action` is rows x action_dim,
/// `grad_log_prob` has one entry per row.
Matrix policy_output_gradient(const PolicyBatch& batch, const Matrix& grad_action,
                              const Vector& grad_log_prob);

}  // namespace pitod
