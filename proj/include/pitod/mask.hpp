#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pitod {

using MaskBits = std::vector<std::uint8_t>;
using MaskView = std::span<const std::uint8_t>;

/// Network roles that carry their own mask for every experience group.
enum class Role : std::uint8_t { policy = 0, q1 = 1, q2 = 2 };

inline constexpr Role kAllRoles[] = {Role::policy, Role::q1, Role::q2};

std::string_view to_string(Role role);

struct MaskSpec {
  int ensemble_size = 20;
  double dropout_rate = 0.5;
  std::uint64_t group_size = 5000;
  std::uint64_t master_seed = 0;

  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

struct GroupMask {
  std::uint64_t group_id = 0;
  Role role = Role::policy;
  MaskBits bits;
  /// Number of draws rejected before `bits` was accepted.
  std::uint32_t nonce = 0;

  MaskView view() const { return bits; }
  int active_count() const;
};

/// floor(iteration_index / group_size).
std::uint64_t group_id_of(std::uint64_t iteration_index, std::uint64_t group_size);

/// Raw Bernoulli draw of `size` bits from the counter-based generator keyed by
/// `key`: bit k is 0 iff unit_interval(splitmix64(key + k * 0x9E3779B97F4A7C15)) < p.
MaskBits draw_bits(std::uint64_t key, int size, double dropout_rate);

/// Key for (master_seed, group_id, role, nonce):
///   splitmix64(splitmix64(master_seed) ^ splitmix64(group_id) * 3 ^ splitmix64((role + 1) << 32 | nonce))
std::uint64_t mask_key(std::uint64_t master_seed, std::uint64_t group_id, Role role,
                       std::uint32_t nonce);

/// Deterministic mask for a group and role. All-zero draws, and all-ones draws
/// when dropout_rate > 0 (their flip would be empty), are redrawn with an
/// incremented nonce; throws std::runtime_error when no usable mask appears
/// within kMaxMaskNonce attempts.
GroupMask mask_for(std::uint64_t group_id, Role role, const MaskSpec& spec);

inline constexpr std::uint32_t kMaxMaskNonce = 1024;

/// w = 1 - m.
GroupMask flip(const GroupMask& mask);
MaskBits flip(MaskView bits);

/// Number of positions where a and b agree. Throws on length mismatch.
int overlap_count(MaskView a, MaskView b);

/// P(exactly m agreeing positions) = C(M, m) q^m (1 - q)^(M - m), q = 2p^2 - 2p + 1.
double overlap_probability(int ensemble_size, int overlaps, double dropout_rate);

/// M (2p^2 - 2p + 1).
double expected_overlap(int ensemble_size, double dropout_rate);

/// Lazily materialized masks for every group seen so far. Redraw events are
/// kept so runs can report them.
class MaskBank {
 public:
  MaskBank() = default;
  /// With `enabled == false` every lookup returns the all-ones mask (plain PI).
  explicit MaskBank(MaskSpec spec, bool enabled = true);

  const MaskSpec& spec() const { return spec_; }
  bool enabled() const { return enabled_; }

  /// Materializes masks for groups [0, group_count).
  void ensure(std::uint64_t group_count);
  std::uint64_t group_count() const { return masks_.size(); }

  /// Mask used for training terms of `group_id`. The group must be ensured.
  MaskView mask(std::uint64_t group_id, Role role) const;
  /// Flipped mask used to estimate the group's influence.
  MaskView flipped(std::uint64_t group_id, Role role) const;
  MaskView all_ones() const { return all_ones_; }

  struct Redraw {
    std::uint64_t group_id;
    Role role;
    std::uint32_t nonce;
  };
  const std::vector<Redraw>& redraws() const { return redraws_; }

 private:
  struct Entry {
    GroupMask mask[3];
    MaskBits flipped[3];
  };
  MaskSpec spec_{};
  bool enabled_ = true;
  MaskBits all_ones_;
  std::vector<Entry> masks_;
  std::vector<Redraw> redraws_;
};

}  // namespace pitod
