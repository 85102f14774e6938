#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "pitod/agent.hpp"

namespace pitod {

/// Binary container, host byte order (little-endian on supported targets):
///   "PITODCKP" | u32 version (1)
///   u64 n | n bytes of config JSON
///   u64 mask_master_seed | i32 ensemble_size | f64 dropout_rate | u64 group_size
///   u64 epoch | u64 total_steps | u64 update_count | f64 alpha | f64 log_alpha | f64 gamma
///   five networks in the order policy, q1, q2, q1_target, q2_target, each
///     i32 members | i32 input_dim | i32 output_dim | i32 hidden | u64 count | count f64
///     (parameter layout as documented on EnsembleApproximator)
///   "END."
struct Checkpoint {
  std::string config_json;
  MaskSpec mask;
  std::uint64_t epoch = 0;
  std::uint64_t total_steps = 0;
  AgentState agent;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
/// Throws std::runtime_error on a truncated, foreign, or newer-version file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pitod
