#include "pitod/mask.hpp"

#include <cmath>
#include <stdexcept>

#include "pitod/rng.hpp"

namespace pitod {

std::string_view to_string(Role role) {
  switch (role) {
    case Role::policy: return "policy";
    case Role::q1: return "q1";
    case Role::q2: return "q2";
  }
  return "unknown";
}

void MaskSpec::validate() const {
  if (ensemble_size < 2) throw std::invalid_argument("mask.ensemble_size must be >= 2");
  if (!(dropout_rate >= 0.0 && dropout_rate <= 1.0))
    throw std::invalid_argument("mask.dropout_rate must lie in [0, 1]");
  if (group_size < 1) throw std::invalid_argument("mask.group_size must be >= 1");
}

int GroupMask::active_count() const {
  int n = 0;
  for (auto b : bits) n += b;
  return n;
}

std::uint64_t group_id_of(std::uint64_t iteration_index, std::uint64_t group_size) {
  if (group_size == 0) throw std::invalid_argument("group_size must be >= 1");
  return iteration_index / group_size;
}

MaskBits draw_bits(std::uint64_t key, int size, double dropout_rate) {
  MaskBits bits(static_cast<std::size_t>(size));
  for (int k = 0; k < size; ++k) {
    const double u = unit_interval(splitmix64(key + static_cast<std::uint64_t>(k) * 0x9E3779B97F4A7C15ULL));
    bits[static_cast<std::size_t>(k)] = u < dropout_rate ? 0 : 1;
  }
  return bits;
}

std::uint64_t mask_key(std::uint64_t master_seed, std::uint64_t group_id, Role role,
                       std::uint32_t nonce) {
  const std::uint64_t role_word =
      ((static_cast<std::uint64_t>(role) + 1) << 32) | static_cast<std::uint64_t>(nonce);
  return splitmix64(splitmix64(master_seed) ^ (splitmix64(group_id) * 3) ^ splitmix64(role_word));
}

GroupMask mask_for(std::uint64_t group_id, Role role, const MaskSpec& spec) {
  spec.validate();
  GroupMask out;
  out.group_id = group_id;
  out.role = role;
  for (std::uint32_t nonce = 0; nonce < kMaxMaskNonce; ++nonce) {
    out.bits = draw_bits(mask_key(spec.master_seed, group_id, role, nonce), spec.ensemble_size,
                         spec.dropout_rate);
    out.nonce = nonce;
    const int active = out.active_count();
    // An all-ones mask would leave its flip empty, so it is redrawn too
    // unless dropout is off altogether.
    if (active > 0 && (spec.dropout_rate == 0.0 || active < spec.ensemble_size)) return out;
  }
  throw std::runtime_error("mask_for: no usable mask within nonce limit (dropout_rate too close to 0 or 1)");
}

MaskBits flip(MaskView bits) {
  MaskBits out(bits.size());
  for (std::size_t k = 0; k < bits.size(); ++k) out[k] = bits[k] ? 0 : 1;
  return out;
}

GroupMask flip(const GroupMask& mask) {
  GroupMask out = mask;
  out.bits = flip(mask.view());
  return out;
}

int overlap_count(MaskView a, MaskView b) {
  if (a.size() != b.size()) throw std::invalid_argument("overlap_count: length mismatch");
  int n = 0;
  for (std::size_t k = 0; k < a.size(); ++k) n += (a[k] == b[k]) ? 1 : 0;
  return n;
}

double overlap_probability(int ensemble_size, int overlaps, double dropout_rate) {
  if (ensemble_size < 0 || overlaps < 0 || overlaps > ensemble_size)
    throw std::domain_error("overlap_probability: require 0 <= m <= M");
  if (!(dropout_rate >= 0.0 && dropout_rate <= 1.0))
    throw std::domain_error("overlap_probability: require 0 <= p <= 1");
  const double q = 2.0 * dropout_rate * dropout_rate - 2.0 * dropout_rate + 1.0;
  const int M = ensemble_size;
  const int m = overlaps;
  // q lies in [0.5, 1]; at q == 1 (p in {0, 1}) the log form below degenerates.
  if (q == 1.0) return m == M ? 1.0 : 0.0;
  const double log_choose =
      std::lgamma(M + 1.0) - std::lgamma(m + 1.0) - std::lgamma(M - m + 1.0);
  return std::exp(log_choose + m * std::log(q) + (M - m) * std::log1p(-q));
}

double expected_overlap(int ensemble_size, double dropout_rate) {
  return ensemble_size * (2.0 * dropout_rate * dropout_rate - 2.0 * dropout_rate + 1.0);
}

MaskBank::MaskBank(MaskSpec spec, bool enabled)
    : spec_(spec), enabled_(enabled), all_ones_(static_cast<std::size_t>(spec.ensemble_size), 1) {
  spec_.validate();
}

void MaskBank::ensure(std::uint64_t group_count) {
  while (masks_.size() < group_count) {
    const std::uint64_t g = masks_.size();
    Entry e;
    for (Role r : kAllRoles) {
      const auto i = static_cast<std::size_t>(r);
      if (enabled_) {
        e.mask[i] = mask_for(g, r, spec_);
        if (e.mask[i].nonce > 0) redraws_.push_back({g, r, e.mask[i].nonce});
      } else {
        e.mask[i] = GroupMask{g, r, all_ones_, 0};
      }
      e.flipped[i] = flip(e.mask[i].view());
    }
    masks_.push_back(std::move(e));
  }
}

MaskView MaskBank::mask(std::uint64_t group_id, Role role) const {
  if (group_id >= masks_.size()) throw std::out_of_range("MaskBank: group not materialized");
  return masks_[group_id].mask[static_cast<std::size_t>(role)].view();
}

MaskView MaskBank::flipped(std::uint64_t group_id, Role role) const {
  if (group_id >= masks_.size()) throw std::out_of_range("MaskBank: group not materialized");
  return masks_[group_id].flipped[static_cast<std::size_t>(role)];
}

}  // namespace pitod
