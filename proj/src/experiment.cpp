#include "pitod/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <tuple>

#include "pitod/checkpoint.hpp"
#include "pitod/csv.hpp"
#include "pitod/loo.hpp"

namespace pitod {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

void ensure_writable(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  const fs::path probe = dir / ".write-probe";
  {
    std::ofstream f(probe);
    if (!f) throw std::runtime_error("output directory is not writable: " + dir.string());
  }
  fs::remove(probe, ec);
}

std::string sign_csv(const std::map<std::uint64_t, std::map<Metric, SignTally>>& signs) {
  CsvWriter w({"epoch", "metric", "ratio", "satisfied", "total"});
  for (const auto& [epoch, tallies] : signs)
    for (const auto& [metric, t] : tallies)
      w.cell(epoch).cell(to_string(metric)).cell(t.ratio()).cell(t.satisfied).cell(t.total).end_row();
  return w.str();
}

}  // namespace

fs::path RunPaths::checkpoint(std::uint64_t epoch) const {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%05llu.ckpt", static_cast<unsigned long long>(epoch));
  return root / "checkpoints" / name;
}

json RunManifest::to_json() const {
  json files_j = json::object();
  for (const auto& [path, digest] : files) files_j[path] = digest;
  json redraws = json::array();
  for (const auto& r : mask_redraws)
    redraws.push_back({{"group_id", r.group_id}, {"role", std::string(to_string(r.role))}, {"nonce", r.nonce}});
  return json{{"config_hash", config_hash},
              {"code_version", code_version},
              {"seed", seed},
              {"status", status},
              {"last_phase", last_phase},
              {"error", error},
              {"files", files_j},
              {"checkpoints", checkpoints},
              {"timing_seconds",
               {{"train", timing.train},
                {"sweep", timing.sweep},
                {"amend", timing.amend},
                {"io", timing.io},
                {"total", total_seconds}}},
              {"mask_redraws", redraws},
              {"clamped_actions", clamped_actions}};
}

std::string metrics_csv(const std::vector<EpochMetrics>& rows, const std::vector<EpochTiming>& timing) {
  CsvWriter w({"epoch", "mean_td_loss", "mean_policy_obj", "mean_return", "wallclock_s"});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double wall = i < timing.size() ? timing[i].wallclock : std::numeric_limits<double>::quiet_NaN();
    w.cell(rows[i].epoch).cell(rows[i].mean_td_loss).cell(rows[i].mean_policy_obj).cell(rows[i].mean_return)
        .cell(wall).end_row();
  }
  return w.str();
}

std::string timing_csv(const std::vector<EpochTiming>& timing) {
  CsvWriter w({"epoch", "train_s", "sweep_s", "amend_s", "io_s", "wallclock_s"});
  for (const auto& t : timing)
    w.cell(t.epoch).cell(t.phases.train).cell(t.phases.sweep).cell(t.phases.amend).cell(t.phases.io)
        .cell(t.wallclock).end_row();
  return w.str();
}

std::vector<EpochTiming> read_timing_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t ce = t.column("epoch"), ct = t.column("train_s"), cs = t.column("sweep_s"),
                    ca = t.column("amend_s"), ci = t.column("io_s"), cw = t.column("wallclock_s");
  std::vector<EpochTiming> out;
  for (const auto& row : t.rows) {
    EpochTiming e;
    e.epoch = static_cast<std::uint64_t>(parse_int(row.at(ce)));
    e.phases = {parse_double(row.at(ct)), parse_double(row.at(cs)), parse_double(row.at(ca)), parse_double(row.at(ci))};
    e.wallclock = parse_double(row.at(cw));
    out.push_back(e);
  }
  return out;
}

std::string heatmap_csv(const std::vector<HeatmapRow>& rows) {
  CsvWriter w({"epoch", "normalized_index", "value"});
  for (const auto& r : rows) w.cell(r.epoch).cell(r.normalized_index).cell(r.value).end_row();
  return w.str();
}

std::vector<CostRow> compare_cost(const std::vector<EpochTiming>& timing, std::uint64_t iterations_per_epoch,
                                  std::uint64_t group_size) {
  if (timing.empty()) throw std::invalid_argument("compare_cost: empty timing ledger");
  double train = 0.0;
  for (const auto& t : timing) train += t.phases.train;
  const double iterations = static_cast<double>(timing.back().epoch * iterations_per_epoch);
  CostModel model{train / iterations, 0, group_size};
  std::vector<CostRow> out;
  double cumulative = 0.0;
  for (const auto& t : timing) {
    cumulative += t.phases.train + t.phases.sweep;
    model.total_iterations = t.epoch * iterations_per_epoch;
    out.push_back({t.epoch, cumulative, estimate_loo_wallclock(model)});
  }
  return out;
}

std::string cost_csv(const std::vector<CostRow>& rows) {
  CsvWriter w({"epoch", "pitod_seconds", "loo_estimated_seconds"});
  for (const auto& r : rows) w.cell(r.epoch).cell(r.pitod_seconds).cell(r.loo_estimated_seconds).end_row();
  return w.str();
}

RunConfig load_run_config(const fs::path& run_dir) {
  const fs::path p = RunPaths{run_dir}.config();
  if (!fs::exists(p)) throw std::runtime_error("no config.json in " + run_dir.string());
  return validate_config(read_file(p));
}

RunManifest run_experiment(const RunConfig& cfg) {
  cfg.validate();
  const auto t_start = Clock::now();
  const RunPaths paths{cfg.output_dir};
  RunManifest man;
  man.config_hash = cfg.hash();
  man.seed = cfg.seed;
  man.last_phase = "start";

  auto record_file = [&](const fs::path& p) { man.files[fs::relative(p, paths.root).generic_string()] = file_digest(p); };
  auto write_manifest = [&] {
    man.total_seconds = seconds_since(t_start);
    atomic_write(paths.manifest(), man.to_json().dump(2) + "\n");
  };

  EpochTiming epoch_time;
  std::unique_ptr<Trainer> trainer;
  try {
    auto t_io = Clock::now();
    ensure_writable(paths.root);
    fs::create_directories(paths.root / "metrics");
    fs::create_directories(paths.root / "influence");
    if (cfg.checkpoints) fs::create_directories(paths.root / "checkpoints");
    atomic_write(paths.config(), cfg.to_json().dump(2) + "\n");
    record_file(paths.config());

    trainer = std::make_unique<Trainer>(cfg.env, cfg.train, cfg.mask, cfg.seed);
    Environment env(cfg.env);
    ReplayBuffer buffer(cfg.train.replay_capacity, cfg.mask.group_size);
    man.timing.io += seconds_since(t_io);

    for (std::uint64_t e = 0; e < cfg.epochs; ++e) {
      const std::uint64_t done = e + 1;
      epoch_time = EpochTiming{};
      epoch_time.epoch = done;

      auto t0 = Clock::now();
      if (cfg.poison.enabled && e == cfg.poison.epoch)
        trainer->poison_next(cfg.poison.groups * cfg.mask.group_size, cfg.poison.scale);
      man.metrics.push_back(trainer->train_epoch(env, buffer));
      man.metrics.back().epoch = done;
      epoch_time.phases.train = seconds_since(t0);
      man.last_phase = "epoch " + std::to_string(done) + " train";

      const bool sweep = cfg.sweep_due(done);
      const bool amend = cfg.amend_due(done);
      std::vector<InfluenceRecord> amend_records;
      if (sweep) {
        t0 = Clock::now();
        SweepResult s = influence_sweep(trainer->agent(), trainer->masks(), buffer, cfg.env, cfg.eval,
                                        cfg.sweep_metrics, done);
        man.influence.insert(man.influence.end(), s.records.begin(), s.records.end());
        if (!s.signs.empty()) man.signs[done] = s.signs;
        amend_records = s.records;
        epoch_time.phases.sweep = seconds_since(t0);
        man.last_phase = "epoch " + std::to_string(done) + " sweep";
      }
      if (amend) {
        t0 = Clock::now();
        std::vector<Metric> missing;
        for (Metric m : {Metric::ret, Metric::bias})
          if (!sweep || std::find(cfg.sweep_metrics.begin(), cfg.sweep_metrics.end(), m) == cfg.sweep_metrics.end())
            missing.push_back(m);
        if (!missing.empty()) {
          SweepResult s = influence_sweep(trainer->agent(), trainer->masks(), buffer, cfg.env, cfg.eval, missing, done);
          amend_records.insert(amend_records.end(), s.records.begin(), s.records.end());
          man.influence.insert(man.influence.end(), s.records.begin(), s.records.end());
          std::stable_sort(man.influence.begin(), man.influence.end(), [](const auto& a, const auto& b) {
            return std::tie(a.epoch, a.group_id, a.metric) < std::tie(b.epoch, b.group_id, b.metric);
          });
        }
        std::vector<InfluenceRecord> ret, bias;
        for (const auto& r : amend_records) (r.metric == Metric::ret ? ret : bias).push_back(r);
        man.amendments.push_back(amend_policy(trainer->agent(), trainer->masks(), ret, cfg.env, cfg.eval, done));
        man.amendments.push_back(amend_critic(trainer->agent(), trainer->masks(), bias, cfg.env, cfg.eval, done));
        epoch_time.phases.amend = seconds_since(t0);
        man.last_phase = "epoch " + std::to_string(done) + " amend";
      }

      t0 = Clock::now();
      if (cfg.checkpoints && (sweep || amend || done == cfg.epochs)) {
        Checkpoint ck{cfg.to_json().dump(), trainer->masks().spec(), done, trainer->total_steps(), trainer->agent()};
        const fs::path cp = paths.checkpoint(done);
        save_checkpoint(cp, ck);
        man.checkpoints.push_back(fs::relative(cp, paths.root).generic_string());
      }
      // Epoch wall clock covers everything up to here; the file writes below
      // are charged to I/O of the same epoch.
      epoch_time.wallclock = seconds_since(t_start);
      man.epoch_timing.push_back(epoch_time);
      atomic_write(paths.metrics(), metrics_csv(man.metrics, man.epoch_timing));
      atomic_write(paths.timing(), timing_csv(man.epoch_timing));
      if (sweep || amend) {
        atomic_write(paths.influence(), influence_csv(man.influence));
        if (!man.signs.empty()) atomic_write(paths.sign_ratios(), sign_csv(man.signs));
      }
      if (amend) atomic_write(paths.amendments(), amendments_csv(man.amendments));
      const double io = seconds_since(t0);
      man.epoch_timing.back().phases.io = io;
      epoch_time.phases.io = io;
      man.timing.train += epoch_time.phases.train;
      man.timing.sweep += epoch_time.phases.sweep;
      man.timing.amend += epoch_time.phases.amend;
      man.timing.io += io;
      man.last_phase = "epoch " + std::to_string(done) + " io";
    }

    auto t_io2 = Clock::now();
    atomic_write(paths.timing(), timing_csv(man.epoch_timing));
    if (!man.influence.empty()) {
      for (Metric m : {Metric::pe_self, Metric::pi_self, Metric::ret, Metric::bias}) {
        const auto rows = heatmap_table(man.influence, m);
        if (!rows.empty()) {
          atomic_write(paths.heatmap(m), heatmap_csv(rows));
          record_file(paths.heatmap(m));
        }
      }
      record_file(paths.influence());
      if (!man.signs.empty()) record_file(paths.sign_ratios());
    }
    if (!man.amendments.empty()) record_file(paths.amendments());
    if (cfg.save_buffer) {
      buffer.export_csv(paths.buffer());
      record_file(paths.buffer());
    }
    record_file(paths.metrics());
    record_file(paths.timing());
    for (const auto& c : man.checkpoints) record_file(paths.root / c);
    man.mask_redraws = trainer->masks().redraws();
    man.clamped_actions = env.clamped_actions();
    man.status = "complete";
    man.last_phase = "finished";
    man.timing.io += seconds_since(t_io2);
    write_manifest();
    return man;
  } catch (const std::exception& ex) {
    man.status = "failed";
    man.error = ex.what();
    if (trainer) man.mask_redraws = trainer->masks().redraws();
    try {
      write_manifest();
    } catch (...) {
    }
    throw;
  }
}

std::vector<std::uint64_t> worst_trials(const std::vector<double>& final_returns, std::size_t k) {
  std::vector<std::uint64_t> idx(final_returns.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto key = [&](std::uint64_t i) {
    const double v = final_returns[i];
    return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
  };
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return key(a) < key(b); });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

MultiTrialReport multi_trial(const RunConfig& cfg, std::uint64_t n_trials, std::size_t worst_k) {
  if (n_trials < 1) throw std::invalid_argument("multi_trial: n_trials must be >= 1");
  const fs::path root = cfg.output_dir;
  ensure_writable(root);
  MultiTrialReport report;
  std::vector<std::vector<EpochMetrics>> per_trial;
  std::vector<double> finals;
  for (std::uint64_t k = 0; k < n_trials; ++k) {
    RunConfig c = cfg;
    c.seed = cfg.seed + k;
    c.derive_seeds();
    c.output_dir = (root / ("trial_" + std::to_string(k))).string();
    TrialSummary t{k, c.seed, c.output_dir, false, "", std::numeric_limits<double>::quiet_NaN()};
    try {
      RunManifest m = run_experiment(c);
      t.ok = true;
      t.final_return = m.metrics.back().mean_return;
      per_trial.push_back(std::move(m.metrics));
    } catch (const std::exception& ex) {
      t.error = ex.what();
      report.partial = true;
    }
    finals.push_back(t.final_return);
    report.trials.push_back(t);
  }

  CsvWriter agg({"epoch", "metric", "mean", "std", "n"});
  if (report.partial) agg.comment("partial: " + std::to_string(per_trial.size()) + " of " + std::to_string(n_trials) + " trials completed");
  std::size_t epochs = 0;
  for (const auto& m : per_trial) epochs = std::max(epochs, m.size());
  const std::pair<const char*, double EpochMetrics::*> fields[] = {{"mean_td_loss", &EpochMetrics::mean_td_loss},
                                                                   {"mean_policy_obj", &EpochMetrics::mean_policy_obj},
                                                                   {"mean_return", &EpochMetrics::mean_return}};
  for (std::size_t e = 0; e < epochs; ++e)
    for (const auto& [name, field] : fields) {
      std::vector<double> v;
      for (const auto& m : per_trial)
        if (e < m.size() && !std::isnan(m[e].*field)) v.push_back(m[e].*field);
      double mean = std::numeric_limits<double>::quiet_NaN(), sd = mean;
      if (!v.empty()) {
        mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        sd = std::sqrt(ss / static_cast<double>(v.size()));
      }
      agg.cell(static_cast<std::uint64_t>(e + 1)).cell(std::string_view(name)).cell(mean).cell(sd)
          .cell(static_cast<std::uint64_t>(v.size())).end_row();
    }
  agg.save(root / "aggregate.csv");

  report.worst = worst_trials(finals, worst_k);
  CsvWriter worst({"rank", "trial", "seed", "final_return"});
  for (std::size_t r = 0; r < report.worst.size(); ++r) {
    const auto& t = report.trials[report.worst[r]];
    worst.cell(static_cast<std::uint64_t>(r + 1)).cell(t.trial).cell(t.seed).cell(t.final_return).end_row();
  }
  worst.save(root / "worst.csv");
  return report;
}

}  // namespace pitod
