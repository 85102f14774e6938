#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pitod/amendment.hpp"
#include "pitod/config.hpp"

namespace pitod {

inline constexpr const char* kCodeVersion = "pitod 0.1.0";

struct PhaseSeconds {
  double train = 0.0;
  double sweep = 0.0;
  double amend = 0.0;
  double io = 0.0;
  double sum() const { return train + sweep + amend + io; }
};

struct EpochTiming {
  std::uint64_t epoch = 0;
  PhaseSeconds phases;
  double wallclock = 0.0;  // seconds since the run started, at the end of the epoch
};

/// Everything a run produced, in memory and on disk.
struct RunManifest {
  std::string config_hash;
  std::string code_version = kCodeVersion;
  std::uint64_t seed = 0;
  std::string status;      // "complete" or "failed"
  std::string last_phase;  // last phase that finished, e.g. "epoch 3 sweep"
  std::string error;
  std::map<std::string, std::string> files;  // run-relative path -> digest
  std::vector<std::string> checkpoints;
  PhaseSeconds timing;
  double total_seconds = 0.0;
  std::vector<MaskBank::Redraw> mask_redraws;
  std::uint64_t clamped_actions = 0;

  std::vector<EpochMetrics> metrics;
  std::vector<EpochTiming> epoch_timing;
  std::vector<InfluenceRecord> influence;
  std::map<std::uint64_t, std::map<Metric, SignTally>> signs;
  std::vector<AmendmentDecision> amendments;

  nlohmann::json to_json() const;
};

/// Layout of one run directory.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path metrics() const { return root / "metrics" / "metrics.csv"; }
  std::filesystem::path timing() const { return root / "metrics" / "timing.csv"; }
  std::filesystem::path sign_ratios() const { return root / "metrics" / "sign_ratios.csv"; }
  std::filesystem::path influence() const { return root / "influence" / "influence.csv"; }
  std::filesystem::path heatmap(Metric m) const { return root / "influence" / ("heatmap_" + to_string(m) + ".csv"); }
  std::filesystem::path amendments() const { return root / "amendments.csv"; }
  std::filesystem::path buffer() const { return root / "buffer.csv"; }
  std::filesystem::path checkpoint(std::uint64_t epoch) const;
};

/// Trains for cfg.epochs epochs in cfg.output_dir with sweeps, poisoning and
/// amendments as configured. On failure the manifest is still written with
/// status "failed" and the exception is rethrown.
RunManifest run_experiment(const RunConfig& cfg);

// CSV writers shared by the run and the command-line tools.
std::string metrics_csv(const std::vector<EpochMetrics>& rows, const std::vector<EpochTiming>& timing);
std::string timing_csv(const std::vector<EpochTiming>& timing);
std::string heatmap_csv(const std::vector<HeatmapRow>& rows);

struct CostRow {
  std::uint64_t epoch = 0;
  double pitod_seconds = 0.0;          // cumulative measured train + sweep time
  double loo_estimated_seconds = 0.0;  // per-iteration time x loo_total_iterations
};
/// Cost comparison from a run's timing ledger.
std::vector<CostRow> compare_cost(const std::vector<EpochTiming>& timing, std::uint64_t iterations_per_epoch,
                                  std::uint64_t group_size);
std::string cost_csv(const std::vector<CostRow>& rows);
std::vector<EpochTiming> read_timing_csv(const std::filesystem::path& path);

RunConfig load_run_config(const std::filesystem::path& run_dir);

struct TrialSummary {
  std::uint64_t trial = 0;
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  bool ok = false;
  std::string error;
  double final_return = 0.0;
};

struct MultiTrialReport {
  std::vector<TrialSummary> trials;
  std::vector<std::uint64_t> worst;  // trial indices, lowest final return first
  bool partial = false;
};

/// Indices of the k lowest final returns (NaN counts as lowest), ties by index.
std::vector<std::uint64_t> worst_trials(const std::vector<double>& final_returns, std::size_t k);

/// Trials with seeds seed + 0 .. seed + n - 1 in <output_dir>/trial_<k>, then
/// aggregate.csv (epoch, metric, mean, std, n; population std) and worst.csv.
MultiTrialReport multi_trial(const RunConfig& cfg, std::uint64_t n_trials, std::size_t worst_k = 2);

}  // namespace pitod
