// Command-line front end: one subcommand per experiment step.
#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "pitod/checkpoint.hpp"
#include "pitod/csv.hpp"
#include "pitod/experiment.hpp"
#include "pitod/loo.hpp"

namespace fs = std::filesystem;
using namespace pitod;

namespace {

RunConfig read_config(const std::string& path, std::optional<std::uint64_t> seed, const std::string& out) {
  RunConfig cfg = validate_config(path.empty() ? std::string() : read_file(path));
  if (seed) cfg.seed = *seed;
  if (!out.empty()) cfg.output_dir = out;
  cfg.derive_seeds();
  cfg.validate();
  return cfg;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

MaskBank bank_for(const MaskSpec& spec, std::uint64_t groups) {
  MaskBank bank(spec);
  bank.ensure(groups);
  return bank;
}

// Latest checkpoint at or before `epoch` in a run directory.
std::optional<fs::path> checkpoint_at(const fs::path& run, std::uint64_t epoch) {
  const fs::path p = RunPaths{run}.checkpoint(epoch);
  if (fs::exists(p)) return p;
  return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Experience influence estimation for actor-critic agents"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train one trial and write its run directory");
  std::string train_config, train_out;
  std::optional<std::uint64_t> train_seed;
  train->add_option("--config", train_config, "JSON run configuration (empty: full-scale defaults)")->check(CLI::ExistingFile);
  train->add_option("--seed", train_seed, "Trial seed (overrides the config)");
  train->add_option("--out", train_out, "Run directory (overrides output_dir)");

  // multi-trial
  auto* multi = app.add_subcommand("multi-trial", "Run seeds seed..seed+n-1 and aggregate");
  std::string multi_config, multi_out;
  std::optional<std::uint64_t> multi_seed;
  std::uint64_t multi_n = 10;
  std::size_t multi_worst = 2;
  multi->add_option("--config", multi_config)->check(CLI::ExistingFile);
  multi->add_option("--seed", multi_seed);
  multi->add_option("--trials", multi_n, "Number of trials")->check(CLI::PositiveNumber);
  multi->add_option("--worst", multi_worst, "Size of the worst-trial selection");
  multi->add_option("--out", multi_out);

  // influence
  auto* infl = app.add_subcommand("influence", "Influence sweep of a checkpoint over a buffer export");
  std::string infl_ck, infl_buf, infl_metrics = "pe,pi,return,bias", infl_out;
  infl->add_option("--checkpoint", infl_ck)->required()->check(CLI::ExistingFile);
  infl->add_option("--buffer", infl_buf)->required()->check(CLI::ExistingFile);
  infl->add_option("--metrics", infl_metrics, "Comma-separated: pe,pi,return,bias");
  infl->add_option("--out", infl_out)->required();

  // heatmap
  auto* heat = app.add_subcommand("heatmap", "Heatmap table from influence records");
  std::string heat_in, heat_out, heat_metric = "pe_self";
  heat->add_option("--in", heat_in)->required()->check(CLI::ExistingFile);
  heat->add_option("--out", heat_out)->required();
  heat->add_option("--metric", heat_metric, "Metric to map");

  // correlate
  auto* corr = app.add_subcommand("correlate", "Across-trial influence correlation");
  std::string corr_runs, corr_metric = "return", corr_out;
  corr->add_option("--runs", corr_runs, "Comma-separated run directories")->required();
  corr->add_option("--metric", corr_metric);
  corr->add_option("--out", corr_out)->required();

  // amend
  auto* amend = app.add_subcommand("amend", "Amendment decisions for every swept checkpoint of a run");
  std::string amend_run, amend_target = "policy", amend_out;
  amend->add_option("--run", amend_run)->required()->check(CLI::ExistingDirectory);
  amend->add_option("--target", amend_target, "policy or critic");
  amend->add_option("--out", amend_out)->required();

  // loo
  auto* loo = app.add_subcommand("loo", "Leave-one-group-out retraining oracle");
  std::string loo_run, loo_metric = "return", loo_out;
  std::optional<std::uint64_t> loo_group, loo_budget;
  loo->add_option("--run", loo_run)->required()->check(CLI::ExistingDirectory);
  loo->add_option("--exclude-group", loo_group, "Group to leave out (omit for the control)");
  loo->add_option("--budget", loo_budget, "Retraining iterations (default: the run's total)");
  loo->add_option("--metric", loo_metric);
  loo->add_option("--out", loo_out)->required();

  // compare-cost
  auto* cost = app.add_subcommand("compare-cost", "Measured training and sweep time against the leave-one-out estimate");
  std::string cost_run, cost_out;
  cost->add_option("--run", cost_run)->required()->check(CLI::ExistingDirectory);
  cost->add_option("--out", cost_out)->required();

  // mask-stats
  auto* stats = app.add_subcommand("mask-stats", "Empirical mask overlap against the closed form");
  int stats_m = 20;
  double stats_p = 0.5;
  std::uint64_t stats_n = 10000, stats_seed = 0;
  stats->add_option("--ensemble-size", stats_m)->check(CLI::Range(2, 1 << 20));
  stats->add_option("--dropout-rate", stats_p)->check(CLI::Range(0.0, 1.0));
  stats->add_option("--samples", stats_n)->check(CLI::PositiveNumber);
  stats->add_option("--seed", stats_seed);
  std::string stats_out;
  stats->add_option("--out", stats_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) {
      const RunConfig cfg = read_config(train_config, train_seed, train_out);
      const RunManifest m = run_experiment(cfg);
      std::cout << "run complete: " << cfg.output_dir << " (" << m.metrics.size() << " epochs)\n";
    } else if (*multi) {
      const RunConfig cfg = read_config(multi_config, multi_seed, multi_out);
      const MultiTrialReport r = multi_trial(cfg, multi_n, multi_worst);
      std::cout << "trials: " << r.trials.size() << (r.partial ? " (partial)" : "") << "\n";
      if (r.partial) return 2;
    } else if (*infl) {
      const Checkpoint ck = load_checkpoint(infl_ck);
      const RunConfig cfg = validate_config(ck.config_json);
      const ReplayBuffer buf = ReplayBuffer::import_csv(infl_buf);
      const MaskBank bank = bank_for(ck.mask, buf.group_count());
      const auto metrics = parse_metrics(infl_metrics);
      const SweepResult s = influence_sweep(ck.agent, bank, buf, cfg.env, cfg.eval, metrics, ck.epoch);
      atomic_write(infl_out, influence_csv(s.records));
    } else if (*heat) {
      const auto records = read_influence_csv(heat_in);
      atomic_write(heat_out, heatmap_csv(heatmap_table(records, metric_from_string(heat_metric))));
    } else if (*corr) {
      std::vector<std::vector<InfluenceRecord>> trials;
      for (const auto& dir : split(corr_runs, ','))
        trials.push_back(read_influence_csv(RunPaths{dir}.influence()));
      const auto rows = influence_correlation(trials, metric_from_string(corr_metric));
      CsvWriter w({"epoch", "mean_correlation", "pairs", "excluded_elements"});
      for (const auto& r : rows) w.cell(r.epoch).cell(r.mean_correlation).cell(r.pairs).cell(r.excluded_elements).end_row();
      w.save(corr_out);
    } else if (*amend) {
      const RunPaths paths{amend_run};
      const RunConfig cfg = load_run_config(amend_run);
      const AmendTarget target = amend_target_from_string(amend_target);
      const Metric metric = target == AmendTarget::policy ? Metric::ret : Metric::bias;
      const auto records = read_influence_csv(paths.influence());
      std::map<std::uint64_t, std::vector<InfluenceRecord>> by_epoch;
      for (const auto& r : records)
        if (r.metric == metric) by_epoch[r.epoch].push_back(r);
      if (by_epoch.empty())
        throw std::invalid_argument("run has no " + to_string(metric) + " influence records");
      std::vector<AmendmentDecision> decisions;
      for (const auto& [epoch, recs] : by_epoch) {
        const auto cp = checkpoint_at(amend_run, epoch);
        if (!cp) throw std::runtime_error("no checkpoint for epoch " + std::to_string(epoch));
        const Checkpoint ck = load_checkpoint(*cp);
        std::uint64_t groups = 0;
        for (const auto& r : recs) groups = std::max(groups, r.group_id + 1);
        const MaskBank bank = bank_for(ck.mask, groups);
        decisions.push_back(target == AmendTarget::policy
                                ? amend_policy(ck.agent, bank, recs, cfg.env, cfg.eval, epoch)
                                : amend_critic(ck.agent, bank, recs, cfg.env, cfg.eval, epoch));
      }
      atomic_write(amend_out, amendments_csv(decisions));
    } else if (*loo) {
      const RunPaths paths{loo_run};
      const RunConfig cfg = load_run_config(loo_run);
      if (!fs::exists(paths.buffer())) throw std::runtime_error("run has no recorded buffer (save_buffer was off)");
      const ReplayBuffer buf = ReplayBuffer::import_csv(paths.buffer());
      LooBase base{cfg.env, cfg.train, cfg.mask, cfg.eval, cfg.seed,
                   std::vector<Experience>(buf.storage().begin(), buf.storage().end())};
      LooConfig lc;
      lc.retrain_iterations = loo_budget ? *loo_budget : cfg.total_iterations();
      lc.group_size = cfg.mask.group_size;
      lc.metric = metric_from_string(loo_metric);
      const LooResult r = loo_influence(base, loo_group, lc);
      CsvWriter w({"excluded_group", "metric", "retrain_iterations", "retrained_value", "control_value", "value"});
      if (r.excluded_group)
        w.cell(*r.excluded_group);
      else
        w.cell(std::string_view{});
      w.cell(to_string(r.metric)).cell(r.retrain_iterations).cell(r.retrained_value).cell(r.control_value)
          .cell(r.value).end_row();
      w.save(loo_out);
    } else if (*cost) {
      const RunConfig cfg = load_run_config(cost_run);
      const auto timing = read_timing_csv(RunPaths{cost_run}.timing());
      atomic_write(cost_out, cost_csv(compare_cost(timing, cfg.train.iterations_per_epoch, cfg.mask.group_size)));
    } else if (*stats) {
      double sum = 0.0, sq = 0.0;
      for (std::uint64_t i = 0; i < stats_n; ++i) {
        const auto a = draw_bits(derive_seed(stats_seed, Stream::masks, 2 * i), stats_m, stats_p);
        const auto b = draw_bits(derive_seed(stats_seed, Stream::masks, 2 * i + 1), stats_m, stats_p);
        const double o = overlap_count(a, b);
        sum += o;
        sq += o * o;
      }
      const double n = static_cast<double>(stats_n);
      const double mean = sum / n;
      const double sd = stats_n > 1 ? std::sqrt(std::max(0.0, (sq - n * mean * mean) / (n - 1.0))) : 0.0;
      CsvWriter w({"p", "M", "expected_overlap", "empirical_mean", "empirical_std"});
      w.cell(stats_p).cell(stats_m).cell(expected_overlap(stats_m, stats_p)).cell(mean).cell(sd).end_row();
      w.save(stats_out);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
