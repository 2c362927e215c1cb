#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "ttm/check.hpp"
#include "ttm/dynamics.hpp"
#include "ttm/error.hpp"
#include "ttm/gsot.hpp"
#include "ttm/numerics/rng.hpp"
#include "ttm/numerics/tape.hpp"
#include "ttm/training.hpp"

namespace ttm::cli {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &utc);
  return buf;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

ModelParams load_or_init(const std::optional<std::string>& checkpoint, const ModelConfig& model) {
  if (!checkpoint) return ModelParams::init(model);
  if (!fs::exists(*checkpoint)) throw ConfigError("checkpoint not found: " + *checkpoint);
  return checkpoint_load(*checkpoint);
}

void require_vocab(const ModelConfig& model, const TaskSpec& task) {
  if (model.vocab_size < task_vocab_size(task)) {
    throw ConfigError("model vocab_size " + std::to_string(model.vocab_size) + " is smaller than the " +
                      std::string(to_string(task.kind)) + " task needs (" + std::to_string(task_vocab_size(task)) + ")");
  }
}

}  // namespace

Session::Session(RunConfig cfg, std::string command) : cfg_(std::move(cfg)), out_(cfg_.output_dir) {
  fs::create_directories(out_);
  log_.open(out_ / "run.log", std::ios::app);
  log("ttm_lab " + command + " seed " + std::to_string(cfg_.seed));
  write("config.resolved.json", to_json(cfg_));
}

void Session::say(const std::string& line) {
  std::cout << line << '\n';
  log(line);
}

void Session::log(const std::string& line) { log_ << '[' << timestamp() << "] " << line << '\n' << std::flush; }

void Session::write(const std::string& file, const std::string& contents) const {
  std::ofstream f(out_ / file, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + (out_ / file).string());
  f << contents;
}

// --- check / gradcheck ------------------------------------------------------------

int cmd_check(Session& s, const std::string& filter) {
  CheckContext ctx;
  ctx.model = s.config().model;
  ctx.seed = s.config().seed;
  ordered_json report = {{"seed", ctx.seed}, {"filter", filter}, {"properties", ordered_json::array()}};
  bool all = true;
  std::size_t ran = 0;
  for (const auto& p : property_registry()) {
    const std::string id = p.module + "/" + p.name;
    if (!filter.empty() && filter != p.module && filter != id) continue;
    ++ran;
    PropertyOutcome outcome;
    try {
      outcome = p.run(ctx);
    } catch (const Error& e) {
      outcome = {false, std::string("threw: ") + e.what()};
    }
    all = all && outcome.passed;
    s.say(std::string(outcome.passed ? "PASS " : "FAIL ") + id + "  " + outcome.detail);
    report["properties"].push_back({{"module", p.module}, {"name", p.name}, {"passed", outcome.passed},
                                    {"detail", outcome.detail}});
  }
  if (ran == 0) throw ConfigError("no property matches --filter '" + filter + "'");
  report["passed"] = all;
  s.write("check.json", report.dump(2) + "\n");
  s.say(std::to_string(ran) + " properties, " + (all ? "all passed" : "failures present"));
  return all ? kExitOk : kExitFailure;
}

int cmd_gradcheck(Session& s, const std::string& filter, const GradcheckFlags& flags) {
  // Restores the backward rules even if a check throws.
  struct FaultGuard {
    explicit FaultGuard(const std::string& op) { fault::set_faulty_backward(op); }
    ~FaultGuard() { fault::set_faulty_backward(""); }
  } guard(flags.inject_fault);
  if (!flags.inject_fault.empty()) s.log("fault injected into backward of " + flags.inject_fault);

  const auto entries = gradcheck_suite(flags.eps, filter);
  if (entries.empty()) throw ConfigError("no gradient check group matches --filter '" + filter + "'");
  ordered_json report = {{"eps", flags.eps}, {"entries", ordered_json::array()}};
  std::vector<std::string> failing;
  for (const auto& e : entries) {
    s.say((e.passed() ? "ok    " : "FAIL  ") + e.module + "/" + e.component + "  " + num(e.max_rel_err) +
          "  (< " + num(e.threshold) + ")");
    report["entries"].push_back({{"module", e.module}, {"component", e.component}, {"max_rel_err", e.max_rel_err},
                                 {"threshold", e.threshold}, {"passed", e.passed()}});
    if (!e.passed()) failing.push_back(e.module + "/" + e.component);
  }
  report["passed"] = failing.empty();
  s.write("gradcheck.json", report.dump(2) + "\n");
  if (failing.empty()) return kExitOk;
  std::string names;
  for (const auto& f : failing) names += (names.empty() ? "" : ", ") + f;
  std::cerr << "gradient check failed: " << names << '\n';
  s.log("gradient check failed: " + names);
  return kExitFailure;
}

// --- train ------------------------------------------------------------------------

int cmd_train(Session& s) {
  const auto& cfg = s.config();
  if (!cfg.train) throw ConfigError("config has no 'train' block");
  const TrainBlock& tb = *cfg.train;
  require_vocab(cfg.model, tb.task);
  const auto data = make_task(tb.task);
  auto params = ModelParams::init(cfg.model);

  const double initial = mean_loss(params, data);
  const auto result = train(params, data, tb.train);
  s.write("metrics.csv", metrics_csv(result.history));

  double worst_collapse = 0.0;
  for (const auto& m : result.history) worst_collapse = std::max(worst_collapse, m.collapse_fraction);
  ordered_json summary = {{"steps_run", result.history.empty() ? 0 : result.history.back().step},
                          {"initial_loss", initial},
                          {"aborted", result.aborted},
                          {"events", result.events},
                          {"lambda_t_final", result.lambda_t_final},
                          {"max_collapse_fraction", worst_collapse}};
  if (result.aborted) {
    s.write("summary.json", summary.dump(2) + "\n");
    const int step = result.history.empty() ? 0 : result.history.back().step;
    std::cerr << "training stopped at step " << step << ": non-finite loss or gradient; parameters restored\n";
    s.log("aborted at step " + std::to_string(step));
    return kExitFailure;
  }
  const double final_loss = mean_loss(params, data);
  summary["final_loss"] = final_loss;
  s.say("loss " + num(initial) + " -> " + num(final_loss) + " over " + std::to_string(tb.train.steps) + " steps, " +
        std::to_string(result.events) + " instability events");
  if (tb.eval_count > 0) {
    TaskSpec held_out = tb.task;
    held_out.seed = tb.task.seed + 1;
    held_out.count = tb.eval_count;
    const double acc = exact_accuracy(params, make_task(held_out));
    summary["heldout_accuracy"] = acc;
    s.say("held-out exact accuracy " + num(acc) + " on " + std::to_string(tb.eval_count) + " examples");
  }
  checkpoint_save(params, s.out_dir() / "model.ckpt");
  s.write("summary.json", summary.dump(2) + "\n");
  return kExitOk;
}

// --- sweep ------------------------------------------------------------------------

int cmd_sweep(Session& s) {
  const auto& cfg = s.config();
  if (!cfg.sweep) throw ConfigError("config has no 'sweep' block");
  const SweepBlock& sb = *cfg.sweep;
  const auto params = load_or_init(sb.checkpoint, cfg.model);
  require_vocab(params.cfg, sb.task);
  const auto data = make_task(sb.task);
  const auto r = temperature_sweep(params, data, sb.t_min, sb.t_max, sb.steps, sb.spacing);

  std::string csv = "temperature,loss\n";
  char row[64];
  for (std::size_t i = 0; i < r.grid.size(); ++i) {
    std::snprintf(row, sizeof row, "%.10g,%.10g\n", r.grid[i], r.losses[i]);
    csv += row;
  }
  s.write("sweep.csv", csv);
  s.write("sweep.json", ordered_json({{"t_star", r.t_star}, {"best_loss", r.losses[r.best]}}).dump(2) + "\n");
  s.say("t_star " + num(r.t_star) + " (loss " + num(r.losses[r.best]) + ") over " + std::to_string(r.grid.size()) +
        " grid points");
  return kExitOk;
}

// --- gsot -------------------------------------------------------------------------

int cmd_gsot(Session& s) {
  const auto& cfg = s.config();
  if (!cfg.gsot) throw ConfigError("config has no 'gsot' block");
  const GsotBlock& gb = *cfg.gsot;
  const auto params = load_or_init(gb.checkpoint, cfg.model);
  for (int t : gb.tokens)
    if (t < 0 || t >= params.cfg.vocab_size)
      throw ConfigError("gsot token " + std::to_string(t) + " outside vocab_size " + std::to_string(params.cfg.vocab_size));
  const auto universe = TokenUniverse::from_model(params, gb.hidden_count, cfg.seed);

  GsotResult r;
  try {
    r = gsot_pipeline(gb.tokens, universe, params, gb.gsot);
  } catch (const EmptyPathError& e) {
    throw EmptyPathError(std::string("gsot: ") + e.what() + " (lower gsot.tau_p or enable rank_schedule)");
  }
  s.write("trace.jsonl", r.trace.to_jsonl());
  Index answer = 0;
  r.logits.row(r.logits.rows() - 1).maxCoeff(&answer);
  const ordered_json summary = {{"tokens", gb.tokens},
                                {"sequence", r.sequence},
                                {"primary_positions", r.primary_positions},
                                {"hidden", r.hidden},
                                {"steps", r.trace.steps.size()},
                                {"backtracks", r.recovery.backtracks},
                                {"failed", r.recovery.failed},
                                {"op_count", r.op_count},
                                {"prediction", answer}};
  s.write("gsot.json", summary.dump(2) + "\n");
  s.say(std::to_string(r.primary_positions.size()) + " of " + std::to_string(gb.tokens.size()) +
        " primary tokens kept, " + std::to_string(r.hidden.size()) + " hidden, " +
        std::to_string(r.recovery.backtracks) + " backtracks, " + std::to_string(r.op_count) + " ops");
  return r.recovery.failed ? kExitFailure : kExitOk;
}

// --- bench ------------------------------------------------------------------------

namespace {

double seconds_for(const std::function<void()>& work, int repeats) {
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < repeats; ++i) work();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / repeats;
}

}  // namespace

int cmd_bench(Session& s) {
  const auto& cfg = s.config();
  if (!cfg.bench) throw ConfigError("config has no 'bench' block");
  const BenchBlock& bb = *cfg.bench;
  const GsotConfig gsot = cfg.gsot ? cfg.gsot->gsot : GsotConfig{};
  const auto params = ModelParams::init(cfg.model);
  const auto universe = TokenUniverse::from_model(params, bb.hidden_count, cfg.seed);

  const auto samples = measure_pipeline_costs(params, universe, gsot, bb.lengths, cfg.seed);
  const auto fit = complexity_fit(samples);
  std::string csv = "n,ops,n_log2_n\n";
  for (const auto& c : samples) {
    const double x = static_cast<double>(c.n) * std::log2(static_cast<double>(c.n));
    csv += std::to_string(c.n) + "," + std::to_string(static_cast<std::uint64_t>(c.ops)) + "," + num(x) + "\n";
  }
  s.write("complexity.csv", csv);
  s.say("ops ~ c n log2 n: c = " + num(fit.coefficient) + ", r^2 = " + num(fit.r_squared));

  // Fixed-point run of the evolution map from a random field, one row per head.
  const EvolutionConfig& evo = cfg.evolution;
  Rng noise(evo.seed);
  const FieldMap update = [&](const Matrix& t) {
    return evolve_layer(TemperatureField(t, cfg.model.eps_min), Vector(), Matrix(), evo, noise).values();
  };
  Rng start_rng(cfg.seed);
  const Matrix start = start_rng.uniform_matrix(cfg.model.heads, 16, cfg.model.eps_min, 1.0 - cfg.model.eps_min);
  const auto conv = iterate_to_fixed_point(update, start, evo.tolerance, evo.max_iter);
  s.write("convergence.csv", series_csv(conv.residuals));
  Rng probe(evo.seed);
  const FieldMap noiseless = [&](const Matrix& t) {
    EvolutionConfig quiet = evo;
    quiet.noise_bound = 0.0;
    return evolve_layer(TemperatureField(t, cfg.model.eps_min), Vector(), Matrix(), quiet, probe).values();
  };
  const double lipschitz = estimate_contraction(noiseless, 64, cfg.seed, cfg.model.heads, 16, cfg.model.eps_min,
                                                1.0 - cfg.model.eps_min);
  s.say("fixed point: " + std::to_string(conv.iterations) + " iterations, converged " +
        (conv.converged ? "yes" : "no") + ", alpha_hat " + num(conv.alpha_hat) + ", gamma_hat " +
        num(conv.gamma_hat) + ", sampled Lipschitz " + num(lipschitz));

  // Wall-clock overhead of the temperature path; timing is not deterministic so it is printed only.
  ModelConfig base_cfg = cfg.model;
  base_cfg.attention_variant = AttentionVariant::baseline;
  const auto base = ModelParams::init(base_cfg);
  std::vector<int> tokens(256);
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = static_cast<int>(i % static_cast<std::size_t>(cfg.model.vocab_size));
  const double t_base = seconds_for([&] { model_forward(base, tokens); }, 3);
  const double t_temp = seconds_for([&] { model_forward(params, tokens); }, 3);
  s.say("forward at n=256: " + to_string(cfg.model.attention_variant) + " " + num(t_temp * 1e3) + " ms, baseline " +
        num(t_base * 1e3) + " ms, ratio " + num(t_temp / t_base));
  return kExitOk;
}

// --- stats ------------------------------------------------------------------------

namespace {

std::vector<double> read_samples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read stats input " + path);
  std::vector<double> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    double v = 0.0;
    if (!(fields >> v)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw ConfigError(path + ":" + std::to_string(lineno) + ": not a number");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace

int cmd_stats(Session& s) {
  const auto& cfg = s.config();
  if (!cfg.stats) throw ConfigError("config has no 'stats' block");
  const StatsBlock& sb = *cfg.stats;
  const auto samples = sb.input ? read_samples(*sb.input) : sb.samples;
  const auto ci = confidence_interval(samples, sb.level);
  const double n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (double v : samples) mean += v;
  mean /= n;

  ordered_json report = {{"n", samples.size()}, {"mean", mean}, {"level", sb.level}, {"interval", {ci.lo, ci.hi}}};
  s.say("mean " + num(mean) + ", " + num(sb.level * 100) + "% interval [" + num(ci.lo) + ", " + num(ci.hi) + "]");
  if (sb.p_value) {
    const auto label = significance_label(*sb.p_value);
    report["p_value"] = *sb.p_value;
    report["significance"] = std::string(to_string(label));
    s.say("p = " + num(*sb.p_value) + ": " + std::string(to_string(label)));
  }
  const auto bytes = memory_estimate(sb.memory_seq_len, sb.memory_heads, sb.memory_batch, sb.memory_bytes);
  const double gb = static_cast<double>(bytes) / 1e9;
  report["memory"] = {{"seq_len", sb.memory_seq_len}, {"heads", sb.memory_heads},   {"batch", sb.memory_batch},
                      {"bytes_per_element", sb.memory_bytes}, {"bytes", to_string_u128(bytes)}, {"gb", gb},
                      {"quoted_gb", sb.quoted_memory_gb}};
  s.say("attention memory n^2 h b bytes = " + to_string_u128(bytes) + " B (" + num(gb) + " GB); quoted figure " +
        num(sb.quoted_memory_gb) + " GB");
  s.write("stats.json", report.dump(2) + "\n");
  return kExitOk;
}

}  // namespace ttm::cli
