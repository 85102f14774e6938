#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "pitod/mask.hpp"
#include "pitod/rng.hpp"

namespace pitod {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kLayerNormEpsilon = 1e-5;

/// (x - mean(x)) / sqrt(var(x) + 1e-5) * gain + bias, population variance.
Vector layer_normalize(const Vector& x, const Vector& gain, const Vector& bias);

struct EnsembleShape {
  int members = 20;
  int input_dim = 1;
  int output_dim = 1;
  int hidden = 32;

  bool operator==(const EnsembleShape&) const = default;
};

/// Per-unit dropout applied after each hidden weight layer (DroQ). Inverted
/// scaling keeps the expected activation unchanged; a null rng disables it.
struct UnitDropout {
  double rate = 0.0;
  Rng* rng = nullptr;

  bool active() const { return rng != nullptr && rate > 0.0; }
};

/// Activations saved by a batched forward pass for the matching backward.
struct ForwardCache {
  struct Member {
    std::vector<Eigen::Index> rows;  // batch rows for which this member is active
    Matrix input;
    Matrix z1, xhat1, h1;            // z = post-dropout pre-activation, h = layer-norm output
    Matrix z2, xhat2, h2;
    Vector inv_std1, inv_std2;
    Matrix drop1, drop2;             // empty when dropout is off
  };
  std::vector<Member> members;
  Vector inv_active;                 // 1 / (active members) per batch row

  bool member_touched(int k) const { return !members[static_cast<std::size_t>(k)].rows.empty(); }
};

/// Bank of identical two-hidden-layer MLPs
///   Linear -> ReLU -> LayerNorm -> Linear -> ReLU -> LayerNorm -> Linear
/// whose outputs are averaged over the members a mask keeps. Parameters live
/// in one flat vector, one contiguous block per member, in the order
///   W1 (hidden x input, row-major), b1, ln1_gain, ln1_bias,
///   W2 (hidden x hidden, row-major), b2, ln2_gain, ln2_bias,
///   W3 (output x hidden, row-major), b3.
class EnsembleApproximator {
 public:
  EnsembleApproximator() = default;
  EnsembleApproximator(EnsembleShape shape, std::uint64_t init_seed);

  /// Uniform fan-in initialization, member k seeded from (init_seed, k).
  void initialize(std::uint64_t init_seed);

  const EnsembleShape& shape() const { return shape_; }
  std::size_t member_param_count() const { return member_params_; }
  std::size_t param_count() const { return params_.size(); }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::span<const double> member_params(int k) const;

  /// Batched forward: row i of `x` is evaluated under row_masks[i]. Throws
  /// std::invalid_argument on dimension mismatch or an all-zero mask.
  Matrix forward(const Matrix& x, std::span<const MaskView> row_masks, ForwardCache* cache = nullptr,
                 const UnitDropout& dropout = {}) const;

  /// Same mask for every row.
  Matrix forward(const Matrix& x, MaskView mask) const;

  /// Accumulates d(sum_ij upstream_ij * out_ij)/d(params) into `param_grad`
  /// (size param_count(), may be empty to skip) and, when requested, writes
  /// the input gradient.
  void backward(const ForwardCache& cache, const Matrix& upstream, std::span<double> param_grad,
                Matrix* input_grad = nullptr) const;

  Vector forward_masked(const Vector& input, MaskView mask) const;

  /// Gradient of upstream . forward_masked(input, mask) w.r.t. all parameters.
  std::vector<double> backward(const Vector& input, MaskView mask, const Vector& upstream) const;

 private:
  struct Layout {
    std::size_t w1, b1, g1, beta1, w2, b2, g2, beta2, w3, b3;
  };

  EnsembleShape shape_{};
  Layout layout_{};
  std::size_t member_params_ = 0;
  std::vector<double> params_;
};

/// Online network and its trailing-average target.
struct TargetPair {
  EnsembleApproximator online;
  EnsembleApproximator target;

  static TargetPair from_online(EnsembleApproximator online);
};

/// target <- (1 - rho) * target + rho * online, elementwise.
void polyak_update(TargetPair& pair, double rho);

}  // namespace pitod
