#include "pitod/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace pitod {

namespace {

const double kHalfLogTwoPi = 0.5 * std::log(2.0 * std::numbers::pi);

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

double log_one_minus_tanh_sq(double u) {
  return 2.0 * (std::numbers::ln2 - u - softplus(-2.0 * u));
}

PolicyOutput split_policy_output(const Vector& raw) {
  if (raw.size() % 2 != 0) throw std::invalid_argument("policy output must have even length");
  const Eigen::Index d = raw.size() / 2;
  PolicyOutput out;
  out.mean = raw.head(d);
  out.log_std = raw.tail(d).cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  return out;
}

ActionSample squash_sample(const PolicyOutput& out, const Vector& xi) {
  if (out.mean.size() != xi.size() || out.log_std.size() != xi.size())
    throw std::invalid_argument("squash_sample: dimension mismatch");
  ActionSample s;
  s.action.resize(xi.size());
  for (Eigen::Index k = 0; k < xi.size(); ++k) {
    const double u = out.mean(k) + std::exp(out.log_std(k)) * xi(k);
    s.action(k) = std::tanh(u);
    s.log_prob += -0.5 * xi(k) * xi(k) - out.log_std(k) - kHalfLogTwoPi - log_one_minus_tanh_sq(u);
  }
  return s;
}

ActionSample sample_action(const PolicyOutput& out, std::uint64_t noise_seed) {
  Rng rng(noise_seed);
  Vector xi(out.mean.size());
  for (Eigen::Index k = 0; k < xi.size(); ++k) xi(k) = rng.normal();
  return squash_sample(out, xi);
}

PolicyBatch evaluate_policy(const EnsembleApproximator& policy, const Matrix& states,
                            std::span<const MaskView> row_masks, const Matrix& xi) {
  const Eigen::Index d = policy.shape().output_dim / 2;
  if (xi.rows() != states.rows() || xi.cols() != d)
    throw std::invalid_argument("evaluate_policy: noise shape mismatch");
  PolicyBatch b;
  b.raw = policy.forward(states, row_masks, &b.cache);
  b.mean = b.raw.leftCols(d);
  b.log_std = b.raw.rightCols(d).cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  b.xi = xi;
  b.pre_tanh = b.mean + (b.log_std.array().exp() * xi.array()).matrix();
  b.action = b.pre_tanh.array().tanh().matrix();
  b.log_prob.resize(states.rows());
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    double lp = 0.0;
    for (Eigen::Index k = 0; k < d; ++k)
      lp += -0.5 * xi(i, k) * xi(i, k) - b.log_std(i, k) - kHalfLogTwoPi -
            log_one_minus_tanh_sq(b.pre_tanh(i, k));
    b.log_prob(i) = lp;
  }
  return b;
}

Matrix policy_output_gradient(const PolicyBatch& batch, const Matrix& grad_action,
                              const Vector& grad_log_prob) {
  const Eigen::Index n = batch.mean.rows();
  const Eigen::Index d = batch.mean.cols();
  Matrix g(n, 2 * d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) {
      const double a = batch.action(i, k);
      const double sigma = std::exp(batch.log_std(i, k));
      // d log_prob / du = 2 tanh(u) through the squash correction.
      const double du = grad_action(i, k) * (1.0 - a * a) + grad_log_prob(i) * 2.0 * a;
      g(i, k) = du;
      const double raw_ls = batch.raw(i, d + k);
      const bool inside = raw_ls >= kLogStdMin && raw_ls <= kLogStdMax;
      g(i, d + k) = inside ? du * sigma * batch.xi(i, k) - grad_log_prob(i) : 0.0;
    }
  }
  return g;
}

}  // namespace pitod
