#include "pitod/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "pitod/csv.hpp"

namespace pitod {

using nlohmann::json;

namespace {

std::string baseline_name(Baseline b) { return b == Baseline::masked ? "masked" : "unmasked"; }

// Walks one JSON object, remembering which keys were consumed so the rest can
// be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where("") + ": expected an object");
  }

  std::string where(const std::string& key) const {
    if (path_.empty()) return key.empty() ? "<root>" : key;
    return key.empty() ? path_ : path_ + "." + key;
  }

  const json* find(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + ": expected a number");
      out = v->get<double>();
      if (!std::isfinite(out)) throw ConfigError(where(key) + ": must be finite");
    }
  }
  void get(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (v->is_number_unsigned()) {
        out = v->get<std::uint64_t>();
      } else if (v->is_number_integer() && v->get<std::int64_t>() >= 0) {
        out = static_cast<std::uint64_t>(v->get<std::int64_t>());
      } else if (v->is_number_float() && v->get<double>() >= 0.0 &&
                 v->get<double>() == std::floor(v->get<double>()) && v->get<double>() < 1.8e19) {
        out = static_cast<std::uint64_t>(v->get<double>());  // 2e5 style literals
      } else {
        throw ConfigError(where(key) + ": expected a non-negative integer");
      }
    }
  }
  void get(const std::string& key, int& out) {
    std::uint64_t v = out < 0 ? 0 : static_cast<std::uint64_t>(out);
    get(key, v);
    if (v > 1000000000ULL) throw ConfigError(where(key) + ": value too large");
    out = static_cast<int>(v);
  }

  template <class F>
  void section(const std::string& key, F&& body) {
    if (const json* v = find(key)) {
      Section s(*v, where(key));
      body(s);
      s.finish();
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError(where(it.key()) + ": unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <class F>
auto rethrow_as(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

Baseline parse_baseline(Section& s, const std::string& key, Baseline current) {
  std::string text = baseline_name(current);
  s.get(key, text);
  if (text == "masked") return Baseline::masked;
  if (text == "unmasked") return Baseline::unmasked;
  throw ConfigError(s.where(key) + ": expected \"masked\" or \"unmasked\"");
}

bool interval_compatible(std::uint64_t a, std::uint64_t b) { return a % b == 0 || b % a == 0; }

bool due(std::uint64_t epochs_done, std::uint64_t per_epoch, std::uint64_t interval) {
  if (interval <= per_epoch) return true;
  return (epochs_done * per_epoch) % interval == 0;
}

}  // namespace

RunConfig profile_defaults(const std::string& profile) {
  RunConfig c;
  c.profile = profile;
  if (profile == "full") {
    c.eval.estimation_interval = 5000;
    c.amend.interval = 50000;
  } else if (profile == "desk") {
    c.train.batch_size = 64;
    c.train.hidden_units = 32;
    c.train.random_start_steps = 1000;
    c.train.replay_capacity = 200000;
    c.train.iterations_per_epoch = 1000;
    c.mask.group_size = 1000;
    c.eval.estimation_interval = 1000;
    c.amend.interval = 10000;
    c.epochs = 20;
  } else {
    throw ConfigError("profile: expected \"full\" or \"desk\", got \"" + profile + "\"");
  }
  c.derive_seeds();
  return c;
}

void RunConfig::derive_seeds() {
  env.seed = derive_seed(seed, Stream::environment);
  mask.master_seed = derive_seed(seed, Stream::masks);
  eval.seed = derive_seed(seed, Stream::evaluation);
}

bool RunConfig::sweep_due(std::uint64_t epochs_done) const {
  return !sweep_metrics.empty() && due(epochs_done, train.iterations_per_epoch, eval.estimation_interval);
}

bool RunConfig::amend_due(std::uint64_t epochs_done) const {
  return amend.enabled && due(epochs_done, train.iterations_per_epoch, amend.interval);
}

void RunConfig::validate() const {
  rethrow_as("train", [&] { train.validate(); return 0; });
  rethrow_as("mask", [&] { mask.validate(); return 0; });
  rethrow_as("eval", [&] { eval.validate(); return 0; });
  if (epochs < 1) throw ConfigError("epochs: must be >= 1");
  if (env.max_episode_steps < 1) throw ConfigError("env.max_episode_steps: must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
  if (total_iterations() / epochs != train.iterations_per_epoch || total_iterations() > train.replay_capacity)
    throw ConfigError("train.replay_capacity: " + std::to_string(train.replay_capacity) +
                      " cannot hold epochs x iterations_per_epoch = " + std::to_string(epochs) + " x " +
                      std::to_string(train.iterations_per_epoch) + " experiences");
  if (!interval_compatible(eval.estimation_interval, train.iterations_per_epoch))
    throw ConfigError("eval.estimation_interval: " + std::to_string(eval.estimation_interval) +
                      " and train.iterations_per_epoch " + std::to_string(train.iterations_per_epoch) +
                      " must divide one another");
  if (amend.enabled) {
    if (amend.interval < 1) throw ConfigError("amend.interval: must be >= 1");
    if (!interval_compatible(amend.interval, train.iterations_per_epoch))
      throw ConfigError("amend.interval: " + std::to_string(amend.interval) +
                        " and train.iterations_per_epoch must divide one another");
  }
  if (poison.enabled) {
    if (poison.epoch >= epochs) throw ConfigError("poison.epoch: must be below epochs");
    if (poison.groups < 1) throw ConfigError("poison.groups: must be >= 1");
    if (!std::isfinite(poison.scale)) throw ConfigError("poison.scale: must be finite");
    const std::uint64_t start = poison.epoch * train.iterations_per_epoch;
    if (start % mask.group_size != 0)
      throw ConfigError("poison.epoch: epoch start " + std::to_string(start) +
                        " is not a group boundary (mask.group_size " + std::to_string(mask.group_size) + ")");
    if (start + poison.groups * mask.group_size > total_iterations())
      throw ConfigError("poison.groups: poisoned span runs past the end of training");
  }
}

json RunConfig::to_json() const {
  json metrics = json::array();
  for (Metric m : sweep_metrics) metrics.push_back(to_string(m));
  return json{
      {"profile", profile},
      {"epochs", epochs},
      {"seed", seed},
      {"output_dir", output_dir},
      {"save_buffer", save_buffer},
      {"checkpoints", checkpoints},
      {"env", {{"name", to_string(env.name)}, {"max_episode_steps", env.max_episode_steps}}},
      {"train",
       {{"learning_rate", train.learning_rate},
        {"gamma", train.gamma},
        {"rho", train.rho},
        {"batch_size", train.batch_size},
        {"replay_ratio", train.replay_ratio},
        {"random_start_steps", train.random_start_steps},
        {"iterations_per_epoch", train.iterations_per_epoch},
        {"replay_capacity", train.replay_capacity},
        {"hidden_units", train.hidden_units},
        {"variant", to_string(train.variant)},
        {"droq_dropout", train.droq_dropout},
        {"reset_interval", train.reset_interval},
        {"alpha", train.alpha},
        {"auto_alpha", train.auto_alpha},
        {"adam_beta1", train.adam_beta1},
        {"adam_beta2", train.adam_beta2},
        {"adam_epsilon", train.adam_epsilon}}},
      {"mask",
       {{"ensemble_size", mask.ensemble_size}, {"dropout_rate", mask.dropout_rate}, {"group_size", mask.group_size}}},
      {"eval",
       {{"rollouts_per_policy", eval.rollouts_per_policy},
        {"horizon", eval.horizon},
        {"estimation_interval", eval.estimation_interval},
        {"samples_per_group", eval.samples_per_group},
        {"gamma_eval", eval.gamma_eval},
        {"mean_action", eval.mean_action},
        {"pe_critic", eval.pe_critic},
        {"pe_baseline", baseline_name(eval.pe_baseline)},
        {"pi_baseline", baseline_name(eval.pi_baseline)},
        {"return_baseline", baseline_name(eval.return_baseline)},
        {"bias_baseline", baseline_name(eval.bias_baseline)},
        {"metrics", metrics}}},
      {"poison",
       {{"enabled", poison.enabled}, {"epoch", poison.epoch}, {"groups", poison.groups}, {"scale", poison.scale}}},
      {"amend", {{"enabled", amend.enabled}, {"interval", amend.interval}}},
  };
}

std::string RunConfig::hash() const { return fnv1a_hex(to_json().dump()); }

RunConfig config_from_json(const json& j) {
  Section root(j, "");
  std::string profile = "full";
  root.get("profile", profile);
  RunConfig c = profile_defaults(profile);

  root.get("epochs", c.epochs);
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  root.get("save_buffer", c.save_buffer);
  root.get("checkpoints", c.checkpoints);

  root.section("env", [&](Section& s) {
    std::string name = to_string(c.env.name);
    s.get("name", name);
    int steps = c.env.max_episode_steps;
    s.get("max_episode_steps", steps);
    const EnvName en = rethrow_as(s.where("name"), [&] { return env_name_from_string(name); });
    c.env = EnvSpec::make(en, steps, 0);
  });
  root.section("train", [&](Section& s) {
    TrainConfig& t = c.train;
    s.get("learning_rate", t.learning_rate);
    s.get("gamma", t.gamma);
    s.get("rho", t.rho);
    s.get("batch_size", t.batch_size);
    s.get("replay_ratio", t.replay_ratio);
    s.get("random_start_steps", t.random_start_steps);
    s.get("iterations_per_epoch", t.iterations_per_epoch);
    s.get("replay_capacity", t.replay_capacity);
    s.get("hidden_units", t.hidden_units);
    std::string variant = to_string(t.variant);
    s.get("variant", variant);
    t.variant = rethrow_as(s.where("variant"), [&] { return variant_from_string(variant); });
    s.get("droq_dropout", t.droq_dropout);
    s.get("reset_interval", t.reset_interval);
    s.get("alpha", t.alpha);
    s.get("auto_alpha", t.auto_alpha);
    s.get("adam_beta1", t.adam_beta1);
    s.get("adam_beta2", t.adam_beta2);
    s.get("adam_epsilon", t.adam_epsilon);
  });
  root.section("mask", [&](Section& s) {
    s.get("ensemble_size", c.mask.ensemble_size);
    s.get("dropout_rate", c.mask.dropout_rate);
    s.get("group_size", c.mask.group_size);
  });
  root.section("eval", [&](Section& s) {
    EvalBudget& e = c.eval;
    s.get("rollouts_per_policy", e.rollouts_per_policy);
    s.get("horizon", e.horizon);
    s.get("estimation_interval", e.estimation_interval);
    s.get("samples_per_group", e.samples_per_group);
    s.get("gamma_eval", e.gamma_eval);
    s.get("mean_action", e.mean_action);
    s.get("pe_critic", e.pe_critic);
    e.pe_baseline = parse_baseline(s, "pe_baseline", e.pe_baseline);
    e.pi_baseline = parse_baseline(s, "pi_baseline", e.pi_baseline);
    e.return_baseline = parse_baseline(s, "return_baseline", e.return_baseline);
    e.bias_baseline = parse_baseline(s, "bias_baseline", e.bias_baseline);
    if (const json* m = s.find("metrics")) {
      if (!m->is_array()) throw ConfigError(s.where("metrics") + ": expected an array of metric names");
      c.sweep_metrics.clear();
      for (const auto& item : *m) {
        if (!item.is_string()) throw ConfigError(s.where("metrics") + ": expected metric names");
        const Metric mm = rethrow_as(s.where("metrics"), [&] { return metric_from_string(item.get<std::string>()); });
        if (std::find(c.sweep_metrics.begin(), c.sweep_metrics.end(), mm) == c.sweep_metrics.end())
          c.sweep_metrics.push_back(mm);
      }
      std::sort(c.sweep_metrics.begin(), c.sweep_metrics.end());
    }
  });
  root.section("poison", [&](Section& s) {
    s.get("enabled", c.poison.enabled);
    s.get("epoch", c.poison.epoch);
    s.get("groups", c.poison.groups);
    s.get("scale", c.poison.scale);
  });
  root.section("amend", [&](Section& s) {
    s.get("enabled", c.amend.enabled);
    s.get("interval", c.amend.interval);
  });
  root.finish();

  c.derive_seeds();
  c.validate();
  return c;
}

RunConfig validate_config(std::string_view text) {
  bool blank = true;
  for (char ch : text)
    if (!std::isspace(static_cast<unsigned char>(ch))) blank = false;
  if (blank) return config_from_json(json::object());
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("<root>: not valid JSON (") + e.what() + ")");
  }
  return config_from_json(j);
}

}  // namespace pitod
