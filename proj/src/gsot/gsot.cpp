#include "ttm/gsot.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

#include <json.hpp>

#include "ttm/error.hpp"
#include "ttm/numerics/kernels.hpp"
#include "ttm/numerics/rng.hpp"

namespace ttm {

namespace {

bool in_open_unit(double v) { return v > 0.0 && v < 1.0; }

Matrix gather_embeddings(const TokenUniverse& universe, std::span<const int> ids) {
  Matrix out(static_cast<Index>(ids.size()), universe.width());
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Index>(i)) = universe.embedding(ids[i]);
  return out;
}

struct StepEval {
  Matrix field;
  RowVector summaries;  // one per row of the sequence
  std::uint64_t ops = 0;
};

StepEval evaluate(const TokenUniverse& universe, const ModelParams& params, std::span<const int> sequence) {
  const auto out = model_forward_embedded(params, gather_embeddings(universe, sequence));
  StepEval e;
  e.field = out.fields.back().values();
  e.summaries = out.fields.back().token_means();
  e.ops = forward_op_count(params.cfg, static_cast<Index>(sequence.size()));
  return e;
}

std::vector<int> build_sequence(std::span<const int> tokens, const std::vector<int>& positions,
                                const std::vector<int>& hidden) {
  std::vector<int> seq;
  seq.reserve(positions.size() + hidden.size());
  for (int p : positions) seq.push_back(tokens[static_cast<std::size_t>(p)]);
  seq.insert(seq.end(), hidden.begin(), hidden.end());
  return seq;
}

// Hidden ids attached to the surviving primary tokens whose temperature clears tau_h.
std::vector<int> admit_hidden(std::span<const int> tokens, const std::vector<int>& positions, const Vector& context,
                              const TokenUniverse& universe, const GsotConfig& cfg) {
  std::set<int> admitted;
  if (universe.hidden_count() == 0) return {};
  for (int p : positions) {
    const int token = tokens[static_cast<std::size_t>(p)];
    const Vector probs = hidden_probabilities(token, context, universe);
    const double peak = probs.maxCoeff();
    for (int h : hidden_tokens(token, context, universe, cfg.theta)) {
      const double relevance = probs(h - static_cast<int>(universe.primary_count())) / peak;
      if (hidden_temperature(h, relevance, universe) > cfg.tau_h) admitted.insert(h);
    }
  }
  return {admitted.begin(), admitted.end()};
}

void check_tokens(std::span<const int> tokens, const TokenUniverse& universe) {
  if (tokens.empty()) throw DimensionError("GSoT needs a nonempty token sequence");
  for (int t : tokens) {
    if (!universe.is_primary(t)) throw DimensionError("token " + std::to_string(t) + " is not a primary token");
  }
}

void check_universe_matches(const TokenUniverse& universe, const ModelParams& params) {
  universe.validate(params.cfg.d_c);
  if (universe.width() != params.cfg.d_model || universe.primary_count() != params.cfg.vocab_size) {
    throw DimensionError("token universe does not match the model's vocabulary or width");
  }
}

}  // namespace

RowVector TokenUniverse::embedding(int id) const {
  if (is_primary(id)) return primary.row(id);
  if (is_hidden(id)) return hidden.row(id - primary_count());
  throw DimensionError("id " + std::to_string(id) + " is outside the token universe");
}

void TokenUniverse::validate(Index context_width) const {
  const Index d = width();
  if (d == 0 || primary_count() == 0) throw DimensionError("token universe needs primary embeddings");
  if (hidden_count() > 0 && hidden.cols() != d) throw DimensionError("hidden embeddings must match primary width");
  if (hidden_count() > 0 && (scorer.rows() != d || scorer.cols() != d + context_width)) {
    throw DimensionError("hidden scorer must be d x (d + d_c)");
  }
  if (hidden_count() > 0 && temp_weight.size() != d) throw DimensionError("hidden temperature weight must have width d");
  if (!(eps_min >= 0.0 && eps_min < 0.5)) throw ConfigError("eps_min must lie in [0, 0.5)");
}

TokenUniverse TokenUniverse::from_model(const ModelParams& params, Index hidden_count, std::uint64_t seed) {
  if (hidden_count < 0) throw ConfigError("hidden token count must be nonnegative");
  const Index d = params.cfg.d_model;
  Rng rng(seed);
  TokenUniverse u;
  u.primary = params.tok_emb;
  u.hidden = rng.normal_matrix(hidden_count, d, 1.0 / std::sqrt(static_cast<double>(d)));
  u.scorer = rng.normal_matrix(d, d + params.cfg.d_c, 1.0 / std::sqrt(static_cast<double>(d + params.cfg.d_c)));
  u.temp_weight = rng.normal_matrix(1, d, 1.0 / std::sqrt(static_cast<double>(d)));
  u.temp_bias = 0.0;
  u.eps_min = params.cfg.eps_min;
  return u;
}

void GsotConfig::validate() const {
  if (!in_open_unit(theta) || !in_open_unit(tau_p) || !in_open_unit(tau_h) || !in_open_unit(tau_backtrack)) {
    throw ConfigError("GSoT thresholds must lie in (0, 1)");
  }
  if (steps < 1) throw ConfigError("GSoT step budget must be at least 1");
}

Vector hidden_probabilities(int token, const Vector& context, const TokenUniverse& universe) {
  if (!universe.is_primary(token)) throw DimensionError("token " + std::to_string(token) + " is not a primary token");
  if (universe.hidden_count() == 0) return Vector();
  if (context.size() + universe.width() != universe.scorer.cols()) {
    throw DimensionError("context width does not match the hidden scorer");
  }
  Vector joint(universe.scorer.cols());
  joint << universe.primary.row(token).transpose(), context;
  const Vector query = universe.scorer * joint;
  const Matrix scores = (universe.hidden * query).transpose();
  return kernels::softmax_rows(scores).row(0).transpose();
}

std::vector<int> hidden_tokens(int token, const Vector& context, const TokenUniverse& universe, double theta) {
  const Vector probs = hidden_probabilities(token, context, universe);
  std::vector<int> out;
  for (Index j = 0; j < probs.size(); ++j) {
    if (probs(j) > theta) out.push_back(universe.hidden_id(j));
  }
  return out;
}

double hidden_temperature(int id, double relevance, const TokenUniverse& universe) {
  if (!universe.is_hidden(id)) throw DimensionError("id " + std::to_string(id) + " is not a hidden token");
  if (!(relevance >= 0.0 && relevance <= 1.0)) throw NumericError("relevance must lie in [0, 1]");
  const double z = universe.temp_weight.dot(universe.embedding(id)) + universe.temp_bias;
  return universe.eps_min + (1.0 - 2.0 * universe.eps_min) * kernels::sigmoid(z) * relevance;
}

Vector sequence_context(const ModelParams& params, std::span<const int> tokens) {
  Matrix emb(static_cast<Index>(tokens.size()), params.cfg.d_model);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= params.cfg.vocab_size) throw DimensionError("token outside vocabulary");
    emb.row(static_cast<Index>(i)) = params.tok_emb.row(tokens[i]);
  }
  const Tensor ctx = context_processor(Tensor::from_matrix(emb), params.ctx);
  return ctx.matrix().colwise().mean().transpose();
}

std::string_view to_string(Decision d) { return d == Decision::proceed ? "continue" : "backtrack"; }

void ReasoningTrace::validate() const {
  for (std::size_t i = 1; i < steps.size(); ++i) {
    if (steps[i].step <= steps[i - 1].step) throw ConfigError("trace step indices must increase");
    if (steps[i].op_count < steps[i - 1].op_count) throw ConfigError("trace op counts must be cumulative");
  }
}

std::string ReasoningTrace::to_jsonl() const {
  std::string out;
  for (const auto& s : steps) {
    nlohmann::ordered_json rec;
    rec["step"] = s.step;
    rec["active_primary"] = s.active_primary;
    rec["active_hidden"] = s.active_hidden;
    rec["mean_temperature"] = s.mean_temperature;
    rec["decision"] = std::string(to_string(s.decision));
    rec["op_count"] = s.op_count;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

std::uint64_t forward_op_count(const ModelConfig& cfg, Index rows) {
  const auto m = static_cast<std::uint64_t>(rows);
  const auto d = static_cast<std::uint64_t>(cfg.d_model);
  const auto ff = static_cast<std::uint64_t>(cfg.d_ff);
  const std::uint64_t projections = 4 * m * d * d;  // q, k, v, o with h * d_k = d
  const std::uint64_t mixing = 2 * m * m * d;       // scores and weighted values over all heads
  const std::uint64_t ffn = 2 * m * d * ff;
  return static_cast<std::uint64_t>(cfg.layers) * (projections + mixing + ffn);
}

ProcessingResult integrated_token_processing(std::span<const int> tokens, const Vector& context,
                                             const TokenUniverse& universe, const ModelParams& params,
                                             const GsotConfig& cfg) {
  cfg.validate();
  check_universe_matches(universe, params);
  check_tokens(tokens, universe);
  const StepEval e = evaluate(universe, params, tokens);

  ProcessingResult r;
  double total = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const double t = e.summaries(static_cast<Index>(i));
    if (t > cfg.tau_p) {
      r.active_primary.push_back(static_cast<int>(i));
      total += t;
    }
  }
  r.active_hidden = admit_hidden(tokens, r.active_primary, context, universe, cfg);

  TraceStep step;
  step.active_primary = r.active_primary;
  step.active_hidden = r.active_hidden;
  step.field = e.field;
  step.mean_temperature = r.active_primary.empty() ? 0.0 : total / static_cast<double>(r.active_primary.size());
  step.op_count = e.ops;
  r.trace.steps.push_back(std::move(step));
  return r;
}

Decision recovery_step(double field_summary, const GsotConfig& cfg, RecoveryState& state) {
  if (!(field_summary >= 0.0 && field_summary <= 1.0)) throw NumericError("field summary must lie in [0, 1]");
  if (field_summary >= cfg.tau_backtrack) return Decision::proceed;
  if (state.branch == 0) {
    state.branch = 1;
    ++state.backtracks;
  } else {
    state.failed = true;
  }
  return Decision::backtrack;
}

ReasoningTrace run_with_recovery(const StepRunner& runner, const GsotConfig& cfg, RecoveryState& state) {
  cfg.validate();
  ReasoningTrace trace;
  for (int k = 0; k < cfg.steps && !state.failed; ++k) {
    state.branch = 0;
    const TraceStep* previous = trace.steps.empty() ? nullptr : &trace.steps.back();
    TraceStep candidate = runner(k, 0, previous);
    candidate.step = k;
    if (recovery_step(candidate.mean_temperature, cfg, state) == Decision::backtrack) {
      candidate = runner(k, 1, previous);
      candidate.step = k;
      candidate.decision = recovery_step(candidate.mean_temperature, cfg, state);
    }
    trace.steps.push_back(std::move(candidate));
  }
  return trace;
}

Index schedule_bound(Index n, int step, int steps) {
  if (steps < 1 || step < 0 || step > steps) throw ConfigError("schedule step outside [0, K]");
  return (static_cast<Index>(steps - step) * n) / steps;
}

GsotResult gsot_pipeline(std::span<const int> tokens, const TokenUniverse& universe, const ModelParams& params,
                         const GsotConfig& cfg) {
  cfg.validate();
  check_universe_matches(universe, params);
  check_tokens(tokens, universe);
  const Vector context = sequence_context(params, tokens);
  const auto n = static_cast<Index>(tokens.size());

  const StepRunner runner = [&](int k, int branch, const TraceStep* previous) {
    std::vector<int> positions;
    std::vector<int> hidden;
    if (previous != nullptr) {
      positions = previous->active_primary;
      hidden = previous->active_hidden;
    } else {
      for (Index i = 0; i < n; ++i) positions.push_back(static_cast<int>(i));
    }
    if (branch == 1) hidden.clear();

    const StepEval e = evaluate(universe, params, build_sequence(tokens, positions, hidden));
    const RowVector temps = e.summaries.head(static_cast<Index>(positions.size()));

    // Rank cut: the top `keep` summaries survive, ties going to the earlier position, so the
    // count bound holds even when saturated temperatures tie at the cut.
    std::vector<char> ranked_in(static_cast<std::size_t>(temps.size()), 1);
    if (cfg.rank_schedule) {
      const Index keep = schedule_bound(n, k, cfg.steps);
      if (keep < temps.size()) {
        std::vector<Index> order(static_cast<std::size_t>(temps.size()));
        for (Index i = 0; i < temps.size(); ++i) order[static_cast<std::size_t>(i)] = i;
        std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return temps(a) > temps(b); });
        for (std::size_t r = static_cast<std::size_t>(keep); r < order.size(); ++r) ranked_in[static_cast<std::size_t>(order[r])] = 0;
      }
    }

    TraceStep rec;
    double total = 0.0;
    for (Index i = 0; i < temps.size(); ++i) {
      if (ranked_in[static_cast<std::size_t>(i)] && temps(i) > cfg.tau_p) {
        rec.active_primary.push_back(positions[static_cast<std::size_t>(i)]);
        total += temps(i);
      }
    }
    if (rec.active_primary.empty()) {
      throw EmptyPathError("temperature thresholding removed every primary token at step " + std::to_string(k));
    }
    if (branch == 0) rec.active_hidden = admit_hidden(tokens, rec.active_primary, context, universe, cfg);
    rec.field = e.field;
    rec.mean_temperature = total / static_cast<double>(rec.active_primary.size());
    rec.op_count = (previous != nullptr ? previous->op_count : 0) + e.ops;
    return rec;
  };

  GsotResult r;
  r.trace = run_with_recovery(runner, cfg, r.recovery);
  const TraceStep& last = r.trace.steps.back();
  r.primary_positions = last.active_primary;
  r.hidden = last.active_hidden;
  r.sequence = build_sequence(tokens, r.primary_positions, r.hidden);

  const auto out = model_forward_embedded(params, gather_embeddings(universe, r.sequence));
  r.logits = out.logits;
  r.reasoning = reasoning_head(Tensor::from_matrix(out.attn_outs.back()), out.fields.back(), params.reasoning).matrix();
  r.op_count = last.op_count + forward_op_count(params.cfg, static_cast<Index>(r.sequence.size()));
  return r;
}

PathSelection select_path(std::span<const ReasoningPath> paths, std::span<const LabeledInstance> dataset,
                          const PathLoss& loss, std::size_t max_paths) {
  if (paths.empty()) throw ConfigError("select_path needs at least one path");
  if (dataset.empty()) throw ConfigError("select_path needs a nonempty dataset");
  if (max_paths != 0 && paths.size() > max_paths) throw ConfigError("more candidate paths than max_paths allows");

  PathSelection s;
  s.expected_losses.reserve(paths.size());
  for (std::size_t p = 0; p < paths.size(); ++p) {
    double total = 0.0;
    for (const auto& inst : dataset) total += loss(paths[p].run(inst.input), inst.label);
    const double mean = total / static_cast<double>(dataset.size());
    s.expected_losses.push_back(mean);
    const double best = s.expected_losses[s.best];
    if (p > 0 && (mean < best || (mean == best && paths[p].id < paths[s.best].id))) s.best = p;
  }
  s.best_id = paths[s.best].id;
  return s;
}

ScheduleReport active_set_schedule_check(const ReasoningTrace& trace, Index n, int steps) {
  if (steps < 1) throw ConfigError("step budget must be at least 1");
  if (trace.steps.size() > static_cast<std::size_t>(steps)) throw ConfigError("trace has more steps than the budget");
  ScheduleReport r;
  for (const auto& s : trace.steps) {
    // (K - k) n / K rather than (1 - k/K) n: the subtraction can round below an exact integer bound.
    const double bound = static_cast<double>(steps - s.step) * static_cast<double>(n) / steps;
    const double margin = bound - static_cast<double>(s.active_primary.size());
    r.margins.push_back(margin);
    if (margin < 0.0) r.satisfied = false;
  }
  return r;
}

ComplexityFit complexity_fit(std::span<const CostSample> samples) {
  std::set<Index> distinct;
  for (const auto& s : samples) {
    if (s.n < 2) throw ConfigError("complexity samples need n >= 2");
    distinct.insert(s.n);
  }
  if (distinct.size() < 4) throw ConfigError("complexity fit needs at least four distinct n values");

  double xy = 0.0;
  double xx = 0.0;
  double mean = 0.0;
  for (const auto& s : samples) {
    const double x = static_cast<double>(s.n) * std::log2(static_cast<double>(s.n));
    xy += x * s.ops;
    xx += x * x;
    mean += s.ops;
  }
  mean /= static_cast<double>(samples.size());
  ComplexityFit fit;
  fit.coefficient = xy / xx;
  double residual = 0.0;
  double spread = 0.0;
  for (const auto& s : samples) {
    const double x = static_cast<double>(s.n) * std::log2(static_cast<double>(s.n));
    residual += (s.ops - fit.coefficient * x) * (s.ops - fit.coefficient * x);
    spread += (s.ops - mean) * (s.ops - mean);
  }
  fit.r_squared = spread > 0.0 ? 1.0 - residual / spread : (residual == 0.0 ? 1.0 : 0.0);
  return fit;
}

std::vector<CostSample> measure_pipeline_costs(const ModelParams& params, const TokenUniverse& universe,
                                               const GsotConfig& cfg, std::span<const Index> lengths,
                                               std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CostSample> out;
  for (Index n : lengths) {
    if (n < 1) throw ConfigError("sequence lengths must be positive");
    std::vector<int> tokens(static_cast<std::size_t>(n));
    for (auto& t : tokens) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(universe.primary_count())));
    const auto r = gsot_pipeline(tokens, universe, params, cfg);
    out.push_back({n, static_cast<double>(r.op_count)});
  }
  return out;
}

}  // namespace ttm
