#include "pitod/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace pitod {

BlockAdam::BlockAdam(std::size_t blocks, std::size_t block_size, AdamOptions options)
    : blocks_(blocks), block_size_(block_size), options_(options) {
  reset();
}

void BlockAdam::reset() {
  m_.assign(blocks_ * block_size_, 0.0);
  v_.assign(blocks_ * block_size_, 0.0);
  steps_.assign(blocks_, 0);
}

void BlockAdam::step(std::span<double> params, std::span<const double> grad,
                     std::span<const std::uint8_t> touched) {
  if (params.size() != blocks_ * block_size_ || grad.size() != params.size() ||
      touched.size() != blocks_)
    throw std::invalid_argument("BlockAdam::step: size mismatch");
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  for (std::size_t blk = 0; blk < blocks_; ++blk) {
    if (!touched[blk]) continue;
    const std::uint64_t t = ++steps_[blk];
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    const double step_size = options_.learning_rate / c1;
    const double sqrt_c2 = std::sqrt(c2);
    const std::size_t begin = blk * block_size_;
    for (std::size_t i = begin; i < begin + block_size_; ++i) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
      params[i] -= step_size * m_[i] / (std::sqrt(v_[i]) / sqrt_c2 + options_.epsilon);
    }
  }
}

}  // namespace pitod
