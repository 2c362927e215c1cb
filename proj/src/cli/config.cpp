#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "ttm/cli.hpp"
#include "ttm/error.hpp"

namespace ttm::cli {

using nlohmann::ordered_json;

namespace {

// Reads one JSON object, remembering which keys were consumed so leftovers can be rejected.
class Block {
 public:
  Block(const ordered_json& j, std::string path) : json_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(label() + " must be a JSON object");
  }

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!json_.contains(key)) return;
    try {
      out = json_.at(key).get<T>();
    } catch (const ordered_json::exception& e) {
      throw ConfigError(label(key) + ": " + e.what());
    }
  }

  // null or absent leaves the optional empty.
  template <class T>
  void read(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!json_.contains(key) || json_.at(key).is_null()) return;
    T value{};
    read(key, value);
    out = value;
  }

  const ordered_json* child(const char* key) {
    seen_.insert(key);
    return json_.contains(key) ? &json_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, _] : json_.items())
      if (!seen_.count(key)) throw ConfigError("unknown key '" + key + "' in " + label());
  }

  std::string label(const char* key = nullptr) const {
    const std::string where = path_.empty() ? "config" : "block '" + path_ + "'";
    return key ? where + " key '" + key + "'" : where;
  }

 private:
  const ordered_json& json_;
  std::string path_;
  std::set<std::string> seen_;
};

TaskSpec read_task(const ordered_json& j, const std::string& path) {
  TaskSpec t;
  Block b(j, path);
  std::string kind(to_string(t.kind));
  b.read("kind", kind);
  t.kind = parse_task_kind(kind);
  b.read("length", t.length);
  b.read("alphabet", t.alphabet);
  b.read("count", t.count);
  b.read("seed", t.seed);
  b.finish();
  t.validate();
  return t;
}

ordered_json task_json(const TaskSpec& t) {
  return {{"kind", to_string(t.kind)}, {"length", t.length}, {"alphabet", t.alphabet}, {"count", t.count},
          {"seed", t.seed}};
}

TrainBlock read_train(const ordered_json& j) {
  TrainBlock out;
  Block b(j, "train");
  auto& c = out.train;
  b.read("eta0", c.eta0);
  b.read("t0", c.t0);
  b.read("clip_lo", c.clip_lo);
  b.read("clip_hi", c.clip_hi);
  b.read("temp_lr_ratio", c.temp_lr_ratio);
  b.read("lambda_t", c.lambda_t);
  b.read("lambda_s", c.lambda_s);
  b.read("stability_tau", c.stability_tau);
  b.read("weight_decay", c.weight_decay);
  b.read("batch", c.batch);
  b.read("steps", c.steps);
  b.read("seed", c.seed);
  b.read("spike_factor", c.spike_factor);
  b.read("collapse_threshold", c.collapse_threshold);
  b.read("collapse_eps", c.collapse_eps);
  b.read("log_every", c.log_every);
  b.read("inject_spike_step", c.inject_spike_step);
  b.read("eval_count", out.eval_count);
  if (const auto* task = b.child("task")) out.task = read_task(*task, "train.task");
  b.finish();
  c.validate();
  if (out.eval_count < 0) throw ConfigError("train.eval_count must be nonnegative");
  return out;
}

ordered_json train_json(const TrainBlock& t) {
  const auto& c = t.train;
  const auto opt = [](const auto& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  return {{"eta0", c.eta0},
          {"t0", c.t0},
          {"clip_lo", c.clip_lo},
          {"clip_hi", c.clip_hi},
          {"temp_lr_ratio", c.temp_lr_ratio},
          {"lambda_t", c.lambda_t},
          {"lambda_s", c.lambda_s},
          {"stability_tau", opt(c.stability_tau)},
          {"weight_decay", c.weight_decay},
          {"batch", c.batch},
          {"steps", c.steps},
          {"seed", c.seed},
          {"spike_factor", c.spike_factor},
          {"collapse_threshold", c.collapse_threshold},
          {"collapse_eps", c.collapse_eps},
          {"log_every", c.log_every},
          {"inject_spike_step", opt(c.inject_spike_step)},
          {"eval_count", t.eval_count},
          {"task", task_json(t.task)}};
}

GridSpacing parse_spacing(const std::string& s) {
  if (s == "linear") return GridSpacing::linear;
  if (s == "log") return GridSpacing::log;
  throw ConfigError("sweep.spacing must be linear or log, got '" + s + "'");
}

SweepBlock read_sweep(const ordered_json& j) {
  SweepBlock out;
  Block b(j, "sweep");
  b.read("t_min", out.t_min);
  b.read("t_max", out.t_max);
  b.read("steps", out.steps);
  std::string spacing = out.spacing == GridSpacing::log ? "log" : "linear";
  b.read("spacing", spacing);
  out.spacing = parse_spacing(spacing);
  b.read("checkpoint", out.checkpoint);
  if (const auto* task = b.child("task")) out.task = read_task(*task, "sweep.task");
  b.finish();
  // Grid validity is checked by sweep_grid itself so the message matches the library's.
  sweep_grid(out.t_min, out.t_max, out.steps, out.spacing);
  return out;
}

ordered_json sweep_json(const SweepBlock& s) {
  return {{"t_min", s.t_min},
          {"t_max", s.t_max},
          {"steps", s.steps},
          {"spacing", s.spacing == GridSpacing::log ? "log" : "linear"},
          {"checkpoint", s.checkpoint ? ordered_json(*s.checkpoint) : ordered_json(nullptr)},
          {"task", task_json(s.task)}};
}

GsotBlock read_gsot(const ordered_json& j) {
  GsotBlock out;
  Block b(j, "gsot");
  auto& g = out.gsot;
  b.read("theta", g.theta);
  b.read("tau_p", g.tau_p);
  b.read("tau_h", g.tau_h);
  b.read("tau_backtrack", g.tau_backtrack);
  b.read("steps", g.steps);
  b.read("max_paths", g.max_paths);
  b.read("rank_schedule", g.rank_schedule);
  b.read("tokens", out.tokens);
  b.read("hidden_count", out.hidden_count);
  b.read("checkpoint", out.checkpoint);
  b.finish();
  g.validate();
  if (out.tokens.empty()) throw ConfigError("gsot.tokens must not be empty");
  if (out.hidden_count < 0) throw ConfigError("gsot.hidden_count must be nonnegative");
  return out;
}

ordered_json gsot_json(const GsotBlock& s) {
  const auto& g = s.gsot;
  return {{"theta", g.theta},
          {"tau_p", g.tau_p},
          {"tau_h", g.tau_h},
          {"tau_backtrack", g.tau_backtrack},
          {"steps", g.steps},
          {"max_paths", g.max_paths},
          {"rank_schedule", g.rank_schedule},
          {"tokens", s.tokens},
          {"hidden_count", s.hidden_count},
          {"checkpoint", s.checkpoint ? ordered_json(*s.checkpoint) : ordered_json(nullptr)}};
}

BenchBlock read_bench(const ordered_json& j) {
  BenchBlock out;
  Block b(j, "bench");
  b.read("lengths", out.lengths);
  b.read("hidden_count", out.hidden_count);
  b.finish();
  if (out.lengths.size() < 4) throw ConfigError("bench.lengths needs at least four entries for the fit");
  for (Index n : out.lengths)
    if (n < 2) throw ConfigError("bench.lengths entries must be at least 2");
  if (out.hidden_count < 0) throw ConfigError("bench.hidden_count must be nonnegative");
  return out;
}

ordered_json bench_json(const BenchBlock& s) {
  return {{"lengths", s.lengths}, {"hidden_count", s.hidden_count}};
}

StatsBlock read_stats(const ordered_json& j) {
  StatsBlock out;
  Block b(j, "stats");
  b.read("samples", out.samples);
  b.read("input", out.input);
  b.read("level", out.level);
  b.read("p_value", out.p_value);
  b.read("memory_seq_len", out.memory_seq_len);
  b.read("memory_heads", out.memory_heads);
  b.read("memory_batch", out.memory_batch);
  b.read("memory_bytes", out.memory_bytes);
  b.read("quoted_memory_gb", out.quoted_memory_gb);
  b.finish();
  if (out.level != 0.90 && out.level != 0.95 && out.level != 0.99)
    throw ConfigError("stats.level must be 0.90, 0.95 or 0.99");
  if (out.p_value && !(*out.p_value >= 0.0 && *out.p_value <= 1.0)) throw ConfigError("stats.p_value must lie in [0, 1]");
  return out;
}

ordered_json stats_json(const StatsBlock& s) {
  return {{"samples", s.samples},
          {"input", s.input ? ordered_json(*s.input) : ordered_json(nullptr)},
          {"level", s.level},
          {"p_value", s.p_value ? ordered_json(*s.p_value) : ordered_json(nullptr)},
          {"memory_seq_len", s.memory_seq_len},
          {"memory_heads", s.memory_heads},
          {"memory_batch", s.memory_batch},
          {"memory_bytes", s.memory_bytes},
          {"quoted_memory_gb", s.quoted_memory_gb}};
}

EvolutionConfig default_evolution() {
  EvolutionConfig e;
  e.mix = 1.0;
  e.gain = 3.6;  // Lipschitz (1 - 2 eps) * 3.6 / 4 < 0.9
  return e;
}

EvolutionConfig read_evolution(const ordered_json& j) {
  EvolutionConfig e = default_evolution();
  Block b(j, "evolution");
  b.read("mix", e.mix);
  b.read("gain", e.gain);
  b.read("noise_bound", e.noise_bound);
  b.read("max_iter", e.max_iter);
  b.read("tolerance", e.tolerance);
  b.read("seed", e.seed);
  b.finish();
  e.validate();
  return e;
}

ordered_json evolution_json(const EvolutionConfig& e) {
  return {{"mix", e.mix},           {"gain", e.gain},   {"noise_bound", e.noise_bound},
          {"max_iter", e.max_iter}, {"tolerance", e.tolerance}, {"seed", e.seed}};
}

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  c.evolution = default_evolution();
  c.train = TrainBlock{};
  c.sweep = SweepBlock{};
  c.gsot = GsotBlock{};
  c.bench = BenchBlock{};
  c.stats = StatsBlock{};
  c.stats->samples = {1.0, 2.0, 3.0, 4.0, 5.0};
  c.stats->p_value = 0.003;
  return c;
}

RunConfig parse_run_config(const std::string& json_text) {
  ordered_json j;
  try {
    j = ordered_json::parse(json_text);
  } catch (const ordered_json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  c.evolution = default_evolution();
  Block top(j, "");
  top.read("output_dir", c.output_dir);
  top.read("seed", c.seed);
  if (const auto* m = top.child("model")) {
    if (!m->is_object()) throw ConfigError("block 'model' must be a JSON object");
    c.model = ModelConfig::from_json(m->dump());
  }
  c.model.validate();
  if (const auto* e = top.child("evolution")) c.evolution = read_evolution(*e);
  if (const auto* b = top.child("train")) c.train = read_train(*b);
  if (const auto* b = top.child("sweep")) c.sweep = read_sweep(*b);
  if (const auto* b = top.child("gsot")) c.gsot = read_gsot(*b);
  if (const auto* b = top.child("bench")) c.bench = read_bench(*b);
  if (const auto* b = top.child("stats")) c.stats = read_stats(*b);
  top.finish();
  if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

std::string to_json(const RunConfig& cfg) {
  ordered_json j;
  j["output_dir"] = cfg.output_dir;
  j["seed"] = cfg.seed;
  j["model"] = ordered_json::parse(cfg.model.to_json());
  j["evolution"] = evolution_json(cfg.evolution);
  if (cfg.train) j["train"] = train_json(*cfg.train);
  if (cfg.sweep) j["sweep"] = sweep_json(*cfg.sweep);
  if (cfg.gsot) j["gsot"] = gsot_json(*cfg.gsot);
  if (cfg.bench) j["bench"] = bench_json(*cfg.bench);
  if (cfg.stats) j["stats"] = stats_json(*cfg.stats);
  return j.dump(2) + "\n";
}

void apply_seed(RunConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.model.seed = seed;
  cfg.evolution.seed = seed;
  if (cfg.train) cfg.train->train.seed = seed;
}

}  // namespace ttm::cli
