#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace pitod {

struct AdamOptions {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with per-block lazy updates: a block whose members received no
/// gradient term in a step keeps its parameters, moments, and step count
/// untouched. Ensemble members are the blocks, so a member dropped from every
/// term of a minibatch is bit-identical before and after the step.
class BlockAdam {
 public:
  BlockAdam() = default;
  BlockAdam(std::size_t blocks, std::size_t block_size, AdamOptions options);

  /// Descent step params -= lr * m_hat / (sqrt(v_hat) + eps) on touched blocks.
  void step(std::span<double> params, std::span<const double> grad, std::span<const std::uint8_t> touched);

  void reset();
  const AdamOptions& options() const { return options_; }
  std::uint64_t block_steps(std::size_t block) const { return steps_[block]; }

 private:
  std::size_t blocks_ = 0;
  std::size_t block_size_ = 0;
  AdamOptions options_{};
  std::vector<double> m_, v_;
  std::vector<std::uint64_t> steps_;
};

}  // namespace pitod
