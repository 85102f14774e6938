#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pitod/rng.hpp"

namespace pitod {

struct Experience {
  std::vector<double> state;
  std::vector<double> action;
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;  // terminal transition: no bootstrap
  std::uint64_t group_id = 0;
  bool poisoned = false;
};

struct GroupInfo {
  std::uint64_t group_id = 0;
  std::size_t size = 0;

  bool operator==(const GroupInfo&) const = default;
};

inline constexpr std::size_t kMaxBatchSize = 65536;

/// `batch` indices drawn uniformly with replacement from [0, pool).
std::vector<std::size_t> sample_indices(std::size_t pool, std::size_t batch, Rng& rng);

/// Append-only experience store. An experience's group is a pure function of
/// its insertion index, so group ids never decrease; there is no eviction.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::uint64_t group_size);

  /// Appends with group_id = floor(insertion_index / group_size). Throws
  /// std::length_error at capacity.
  void push(Experience e);

  std::size_t size() const { return storage_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t group_size() const { return group_size_; }
  std::uint64_t insertion_count() const { return storage_.size(); }
  bool empty() const { return storage_.empty(); }

  const Experience& operator[](std::size_t i) const { return storage_[i]; }
  std::span<const Experience> storage() const { return storage_; }

  /// Contiguous members of one group (empty if the group has none).
  std::span<const Experience> group(std::uint64_t group_id) const;
  std::uint64_t group_count() const;

  /// Uniform with replacement; deterministic in `rng_seed`. Throws on an empty
  /// buffer, batch_size 0, batch_size > size(), or batch_size > kMaxBatchSize.
  std::vector<Experience> sample_minibatch(std::size_t batch_size, std::uint64_t rng_seed) const;

  /// Distinct groups in insertion order with their member counts.
  std::vector<GroupInfo> groups() const;

  /// Columnar CSV: a '#pitod-replay' comment carrying capacity, group size and
  /// dimensions, then one row per experience
  ///   index,group_id,poisoned,done,reward,s0..,a0..,ns0..
  /// Doubles use shortest round-trip formatting, so import is bit-exact.
  void export_csv(const std::filesystem::path& path) const;
  static ReplayBuffer import_csv(const std::filesystem::path& path);

 private:
  std::size_t capacity_;
  std::uint64_t group_size_;
  std::vector<Experience> storage_;
};

}  // namespace pitod
