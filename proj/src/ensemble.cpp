#include "pitod/ensemble.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace pitod {

namespace {

using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstVecMap = Eigen::Map<const Vector>;
using VecMap = Eigen::Map<Vector>;

struct NormOut {
  Matrix xhat;
  Vector inv_std;
};

// Row-wise layer normalization without the affine part.
NormOut normalize_rows(const Matrix& a) {
  const Eigen::Index width = a.cols();
  NormOut out;
  const Vector mean = a.rowwise().sum() / static_cast<double>(width);
  out.xhat = a.colwise() - mean;
  const Vector var = out.xhat.array().square().rowwise().sum() / static_cast<double>(width);
  out.inv_std = (var.array() + kLayerNormEpsilon).rsqrt();
  out.xhat = out.inv_std.asDiagonal() * out.xhat;
  return out;
}

// Backward of xhat = (a - mean) * inv_std given d/dxhat.
Matrix normalize_rows_backward(const Matrix& dxhat, const Matrix& xhat, const Vector& inv_std) {
  const double width = static_cast<double>(xhat.cols());
  const Vector mean_d = dxhat.rowwise().sum() / width;
  const Vector mean_dx = (dxhat.array() * xhat.array()).rowwise().sum() / width;
  Matrix da = dxhat.colwise() - mean_d;
  da -= mean_dx.asDiagonal() * xhat;
  return inv_std.asDiagonal() * da;
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, const UnitDropout& dropout) {
  Matrix m(rows, cols);
  const double keep_scale = 1.0 / (1.0 - dropout.rate);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i)
      m(i, j) = dropout.rng->uniform() < dropout.rate ? 0.0 : keep_scale;
  return m;
}

}  // namespace

Vector layer_normalize(const Vector& x, const Vector& gain, const Vector& bias) {
  if (x.size() < 2) throw std::invalid_argument("layer_normalize: length must be >= 2");
  if (gain.size() != x.size() || bias.size() != x.size())
    throw std::invalid_argument("layer_normalize: gain/bias length mismatch");
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  const double inv = 1.0 / std::sqrt(var + kLayerNormEpsilon);
  return ((x.array() - mean) * inv * gain.array() + bias.array()).matrix();
}

EnsembleApproximator::EnsembleApproximator(EnsembleShape shape, std::uint64_t init_seed)
    : shape_(shape) {
  if (shape.members < 1 || shape.input_dim < 1 || shape.output_dim < 1 || shape.hidden < 2)
    throw std::invalid_argument("EnsembleApproximator: invalid shape");
  const auto in = static_cast<std::size_t>(shape.input_dim);
  const auto h = static_cast<std::size_t>(shape.hidden);
  const auto out = static_cast<std::size_t>(shape.output_dim);
  std::size_t off = 0;
  auto take = [&off](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  layout_.w1 = take(h * in);
  layout_.b1 = take(h);
  layout_.g1 = take(h);
  layout_.beta1 = take(h);
  layout_.w2 = take(h * h);
  layout_.b2 = take(h);
  layout_.g2 = take(h);
  layout_.beta2 = take(h);
  layout_.w3 = take(out * h);
  layout_.b3 = take(out);
  member_params_ = off;
  params_.assign(member_params_ * static_cast<std::size_t>(shape.members), 0.0);
  initialize(init_seed);
}

void EnsembleApproximator::initialize(std::uint64_t init_seed) {
  const auto in = static_cast<std::size_t>(shape_.input_dim);
  const auto h = static_cast<std::size_t>(shape_.hidden);
  const auto out = static_cast<std::size_t>(shape_.output_dim);
  for (int k = 0; k < shape_.members; ++k) {
    Rng rng(splitmix64(init_seed ^ splitmix64(static_cast<std::uint64_t>(k) + 1)));
    double* base = params_.data() + member_params_ * static_cast<std::size_t>(k);
    auto fill_uniform = [&rng](double* p, std::size_t n, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < n; ++i) p[i] = rng.uniform(-bound, bound);
    };
    auto fill_const = [](double* p, std::size_t n, double v) {
      for (std::size_t i = 0; i < n; ++i) p[i] = v;
    };
    fill_uniform(base + layout_.w1, h * in, in);
    fill_uniform(base + layout_.b1, h, in);
    fill_const(base + layout_.g1, h, 1.0);
    fill_const(base + layout_.beta1, h, 0.0);
    fill_uniform(base + layout_.w2, h * h, h);
    fill_uniform(base + layout_.b2, h, h);
    fill_const(base + layout_.g2, h, 1.0);
    fill_const(base + layout_.beta2, h, 0.0);
    fill_uniform(base + layout_.w3, out * h, h);
    fill_uniform(base + layout_.b3, out, h);
  }
}

std::span<const double> EnsembleApproximator::member_params(int k) const {
  if (k < 0 || k >= shape_.members) throw std::out_of_range("member_params: member index");
  return std::span<const double>(params_).subspan(member_params_ * static_cast<std::size_t>(k),
                                                  member_params_);
}

Matrix EnsembleApproximator::forward(const Matrix& x, std::span<const MaskView> row_masks,
                                     ForwardCache* cache, const UnitDropout& dropout) const {
  const Eigen::Index n = x.rows();
  const Eigen::Index in = shape_.input_dim;
  const Eigen::Index h = shape_.hidden;
  const Eigen::Index out_dim = shape_.output_dim;
  if (x.cols() != in) throw std::invalid_argument("forward: input dimension mismatch");
  if (static_cast<Eigen::Index>(row_masks.size()) != n)
    throw std::invalid_argument("forward: one mask per row required");

  Vector inv_active(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const MaskView m = row_masks[static_cast<std::size_t>(i)];
    if (static_cast<int>(m.size()) != shape_.members)
      throw std::invalid_argument("forward: mask length != ensemble size");
    int count = 0;
    for (auto b : m) count += b ? 1 : 0;
    if (count == 0) throw std::invalid_argument("forward: all-zero mask");
    inv_active(i) = 1.0 / count;
  }

  Matrix result = Matrix::Zero(n, out_dim);
  if (cache != nullptr) {
    cache->members.assign(static_cast<std::size_t>(shape_.members), {});
    cache->inv_active = inv_active;
  }

  std::vector<Eigen::Index> rows;
  rows.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < shape_.members; ++k) {
    rows.clear();
    for (Eigen::Index i = 0; i < n; ++i)
      if (row_masks[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]) rows.push_back(i);
    if (rows.empty()) continue;
    const auto nk = static_cast<Eigen::Index>(rows.size());
    const double* base = params_.data() + member_params_ * static_cast<std::size_t>(k);
    const ConstRowMap w1(base + layout_.w1, h, in);
    const ConstVecMap b1(base + layout_.b1, h), g1(base + layout_.g1, h), beta1(base + layout_.beta1, h);
    const ConstRowMap w2(base + layout_.w2, h, h);
    const ConstVecMap b2(base + layout_.b2, h), g2(base + layout_.g2, h), beta2(base + layout_.beta2, h);
    const ConstRowMap w3(base + layout_.w3, out_dim, h);
    const ConstVecMap b3(base + layout_.b3, out_dim);

    Matrix xk(nk, in);
    for (Eigen::Index r = 0; r < nk; ++r) xk.row(r) = x.row(rows[static_cast<std::size_t>(r)]);

    Matrix z1 = (xk * w1.transpose()).rowwise() + b1.transpose();
    Matrix drop1;
    if (dropout.active()) {
      drop1 = dropout_mask(nk, h, dropout);
      z1 = z1.cwiseProduct(drop1);
    }
    NormOut n1 = normalize_rows(z1.cwiseMax(0.0));
    Matrix h1 = (n1.xhat * g1.asDiagonal()).rowwise() + beta1.transpose();

    Matrix z2 = (h1 * w2.transpose()).rowwise() + b2.transpose();
    Matrix drop2;
    if (dropout.active()) {
      drop2 = dropout_mask(nk, h, dropout);
      z2 = z2.cwiseProduct(drop2);
    }
    NormOut n2 = normalize_rows(z2.cwiseMax(0.0));
    Matrix h2 = (n2.xhat * g2.asDiagonal()).rowwise() + beta2.transpose();

    const Matrix yk = (h2 * w3.transpose()).rowwise() + b3.transpose();
    for (Eigen::Index r = 0; r < nk; ++r) {
      const Eigen::Index i = rows[static_cast<std::size_t>(r)];
      result.row(i) += yk.row(r) * inv_active(i);
    }

    if (cache != nullptr) {
      auto& mc = cache->members[static_cast<std::size_t>(k)];
      mc.rows = rows;
      mc.input = std::move(xk);
      mc.z1 = std::move(z1);
      mc.xhat1 = std::move(n1.xhat);
      mc.inv_std1 = std::move(n1.inv_std);
      mc.h1 = std::move(h1);
      mc.z2 = std::move(z2);
      mc.xhat2 = std::move(n2.xhat);
      mc.inv_std2 = std::move(n2.inv_std);
      mc.h2 = std::move(h2);
      mc.drop1 = std::move(drop1);
      mc.drop2 = std::move(drop2);
    }
  }
  return result;
}

Matrix EnsembleApproximator::forward(const Matrix& x, MaskView mask) const {
  std::vector<MaskView> masks(static_cast<std::size_t>(x.rows()), mask);
  return forward(x, masks);
}

void EnsembleApproximator::backward(const ForwardCache& cache, const Matrix& upstream,
                                    std::span<double> param_grad, Matrix* input_grad) const {
  const Eigen::Index in = shape_.input_dim;
  const Eigen::Index h = shape_.hidden;
  const Eigen::Index out_dim = shape_.output_dim;
  if (upstream.cols() != out_dim || upstream.rows() != cache.inv_active.size())
    throw std::invalid_argument("backward: upstream shape mismatch");
  if (!param_grad.empty() && param_grad.size() != params_.size())
    throw std::invalid_argument("backward: gradient buffer size mismatch");
  if (cache.members.size() != static_cast<std::size_t>(shape_.members))
    throw std::invalid_argument("backward: cache does not match this network");
  if (input_grad != nullptr) *input_grad = Matrix::Zero(upstream.rows(), in);

  for (int k = 0; k < shape_.members; ++k) {
    const auto& mc = cache.members[static_cast<std::size_t>(k)];
    if (mc.rows.empty()) continue;
    const auto nk = static_cast<Eigen::Index>(mc.rows.size());
    const double* base = params_.data() + member_params_ * static_cast<std::size_t>(k);
    const ConstRowMap w1(base + layout_.w1, h, in);
    const ConstVecMap g1(base + layout_.g1, h);
    const ConstRowMap w2(base + layout_.w2, h, h);
    const ConstVecMap g2(base + layout_.g2, h);
    const ConstRowMap w3(base + layout_.w3, out_dim, h);

    Matrix gy(nk, out_dim);
    for (Eigen::Index r = 0; r < nk; ++r) {
      const Eigen::Index i = mc.rows[static_cast<std::size_t>(r)];
      gy.row(r) = upstream.row(i) * cache.inv_active(i);
    }

    Matrix dh2 = gy * w3;
    Matrix da2 = normalize_rows_backward(dh2 * g2.asDiagonal(), mc.xhat2, mc.inv_std2);
    Matrix dz2 = (mc.z2.array() > 0.0).select(da2, 0.0);
    if (mc.drop2.size() != 0) dz2 = dz2.cwiseProduct(mc.drop2);

    Matrix dh1 = dz2 * w2;
    Matrix da1 = normalize_rows_backward(dh1 * g1.asDiagonal(), mc.xhat1, mc.inv_std1);
    Matrix dz1 = (mc.z1.array() > 0.0).select(da1, 0.0);
    if (mc.drop1.size() != 0) dz1 = dz1.cwiseProduct(mc.drop1);

    if (!param_grad.empty()) {
      double* gbase = param_grad.data() + member_params_ * static_cast<std::size_t>(k);
      RowMap(gbase + layout_.w3, out_dim, h).noalias() += gy.transpose() * mc.h2;
      VecMap(gbase + layout_.b3, out_dim) += gy.colwise().sum().transpose();
      VecMap(gbase + layout_.g2, h) += dh2.cwiseProduct(mc.xhat2).colwise().sum().transpose();
      VecMap(gbase + layout_.beta2, h) += dh2.colwise().sum().transpose();
      RowMap(gbase + layout_.w2, h, h).noalias() += dz2.transpose() * mc.h1;
      VecMap(gbase + layout_.b2, h) += dz2.colwise().sum().transpose();
      VecMap(gbase + layout_.g1, h) += dh1.cwiseProduct(mc.xhat1).colwise().sum().transpose();
      VecMap(gbase + layout_.beta1, h) += dh1.colwise().sum().transpose();
      RowMap(gbase + layout_.w1, h, in).noalias() += dz1.transpose() * mc.input;
      VecMap(gbase + layout_.b1, h) += dz1.colwise().sum().transpose();
    }
    if (input_grad != nullptr) {
      const Matrix dx = dz1 * w1;
      for (Eigen::Index r = 0; r < nk; ++r) input_grad->row(mc.rows[static_cast<std::size_t>(r)]) += dx.row(r);
    }
  }
}

Vector EnsembleApproximator::forward_masked(const Vector& input, MaskView mask) const {
  const Matrix x = input.transpose();
  const MaskView masks[] = {mask};
  return forward(x, masks).row(0).transpose();
}

std::vector<double> EnsembleApproximator::backward(const Vector& input, MaskView mask,
                                                   const Vector& upstream) const {
  if (upstream.size() != shape_.output_dim) throw std::invalid_argument("backward: upstream size");
  const Matrix x = input.transpose();
  const MaskView masks[] = {mask};
  ForwardCache cache;
  forward(x, masks, &cache);
  std::vector<double> grad(params_.size(), 0.0);
  backward(cache, upstream.transpose(), grad);
  return grad;
}

TargetPair TargetPair::from_online(EnsembleApproximator online) {
  TargetPair pair{online, online};
  return pair;
}

void polyak_update(TargetPair& pair, double rho) {
  if (pair.online.param_count() != pair.target.param_count() ||
      !(pair.online.shape() == pair.target.shape()))
    throw std::invalid_argument("polyak_update: shape mismatch");
  auto tgt = pair.target.params();
  const auto src = std::as_const(pair.online).params();
  const double keep = 1.0 - rho;
  for (std::size_t i = 0; i < tgt.size(); ++i) tgt[i] = keep * tgt[i] + rho * src[i];
}

}  // namespace pitod
