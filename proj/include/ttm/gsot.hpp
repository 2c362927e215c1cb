#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ttm/model.hpp"
#include "ttm/numerics/tensor.hpp"
#include "ttm/temperature.hpp"

namespace ttm {

/// Primary ids occupy [0, V); hidden ids occupy [V, V + |H|).
struct TokenUniverse {
  Matrix primary;         // V x d
  Matrix hidden;          // |H| x d
  Matrix scorer;          // d x (d + d_c): score(h) = e_h . (scorer * [e_x; c])
  RowVector temp_weight;  // d
  double temp_bias = 0.0;
  double eps_min = kDefaultEpsMin;

  Index primary_count() const { return primary.rows(); }
  Index hidden_count() const { return hidden.rows(); }
  Index width() const { return primary.cols(); }
  bool is_primary(int id) const { return id >= 0 && id < primary_count(); }
  bool is_hidden(int id) const { return id >= primary_count() && id < primary_count() + hidden_count(); }
  int hidden_id(Index slot) const { return static_cast<int>(primary_count() + slot); }
  RowVector embedding(int id) const;

  void validate(Index context_width) const;

  /// Primary rows are the model's token embeddings; the rest is drawn from `seed`.
  static TokenUniverse from_model(const ModelParams& params, Index hidden_count, std::uint64_t seed);
};

struct GsotConfig {
  double theta = 0.2;          // hidden relevance threshold
  double tau_p = 0.1;          // primary temperature floor; the rank schedule does the selecting
  double tau_h = 0.2;          // hidden temperature threshold
  double tau_backtrack = 0.3;  // recovery threshold on the step summary
  int steps = 4;
  std::size_t max_paths = 16;
  /// Tighten tau_p per step so that at most floor((K - k) n / K) primary tokens survive step k.
  bool rank_schedule = true;

  void validate() const;
};

/// P(h | x, c) for every hidden slot.
Vector hidden_probabilities(int token, const Vector& context, const TokenUniverse& universe);
/// Hidden ids with P strictly above theta, in id order.
std::vector<int> hidden_tokens(int token, const Vector& context, const TokenUniverse& universe, double theta);
/// eps + (1 - 2 eps) * sigmoid(w . e_h + b) * relevance, relevance in [0, 1].
double hidden_temperature(int id, double relevance, const TokenUniverse& universe);

/// Mean over tokens of the context processor applied to the token embeddings.
Vector sequence_context(const ModelParams& params, std::span<const int> tokens);

enum class Decision { proceed, backtrack };
std::string_view to_string(Decision d);

struct TraceStep {
  int step = 0;
  std::vector<int> active_primary;  // positions into the input sequence
  std::vector<int> active_hidden;   // hidden ids
  Matrix field;                     // final-layer field of the sequence this step ran on
  double mean_temperature = 0.0;    // mean summary temperature over surviving primary tokens
  Decision decision = Decision::proceed;
  std::uint64_t op_count = 0;       // cumulative
};

struct ReasoningTrace {
  std::vector<TraceStep> steps;

  /// Throws ConfigError if step indices are not strictly increasing or op counts shrink.
  void validate() const;
  std::string to_jsonl() const;
};

struct ProcessingResult {
  std::vector<int> active_primary;
  std::vector<int> active_hidden;
  ReasoningTrace trace;
};

/// Single threshold pass with cfg.tau_p / cfg.tau_h and no schedule.
ProcessingResult integrated_token_processing(std::span<const int> tokens, const Vector& context,
                                             const TokenUniverse& universe, const ModelParams& params,
                                             const GsotConfig& cfg);

/// Multiply-accumulates for one forward over `rows` tokens (attention and FFN only).
std::uint64_t forward_op_count(const ModelConfig& cfg, Index rows);

// --- recovery ---------------------------------------------------------------------

struct RecoveryState {
  int branch = 0;  // 0 = primary branch, 1 = alternate (no hidden tokens)
  bool failed = false;
  int backtracks = 0;
};

Decision recovery_step(double field_summary, const GsotConfig& cfg, RecoveryState& state);

/// Produces the candidate record for (step, branch) given the last committed record (null at step 0).
using StepRunner = std::function<TraceStep(int step, int branch, const TraceStep* previous)>;

/// Runs cfg.steps steps; a rejected candidate is dropped and the step re-run on branch 1.
/// A second rejection commits that record with decision backtrack and stops with state.failed.
ReasoningTrace run_with_recovery(const StepRunner& runner, const GsotConfig& cfg, RecoveryState& state);

// --- pipeline ---------------------------------------------------------------------

struct GsotResult {
  Matrix logits;                 // rows follow `sequence`
  Matrix reasoning;              // reasoning-head probabilities, same rows
  std::vector<int> sequence;     // surviving primary ids, then hidden ids
  std::vector<int> primary_positions;
  std::vector<int> hidden;
  ReasoningTrace trace;
  RecoveryState recovery;
  std::uint64_t op_count = 0;
};

/// Throws EmptyPathError when thresholding removes every primary token.
GsotResult gsot_pipeline(std::span<const int> tokens, const TokenUniverse& universe, const ModelParams& params,
                         const GsotConfig& cfg);

// --- path selection ---------------------------------------------------------------

struct LabeledInstance {
  std::vector<int> input;
  int label = 0;
};

struct ReasoningPath {
  int id = 0;
  std::vector<std::string> steps;
  std::function<Vector(std::span<const int>)> run;
};

using PathLoss = std::function<double(const Vector& output, int label)>;

struct PathSelection {
  std::size_t best = 0;  // index into the path list
  int best_id = 0;
  std::vector<double> expected_losses;
};

/// Argmin of mean loss; ties go to the lowest path id. max_paths = 0 disables the cap.
PathSelection select_path(std::span<const ReasoningPath> paths, std::span<const LabeledInstance> dataset,
                          const PathLoss& loss, std::size_t max_paths = 0);

// --- complexity -------------------------------------------------------------------

struct ScheduleReport {
  bool satisfied = true;
  std::vector<double> margins;  // bound - |X_k|, negative = violated
};

ScheduleReport active_set_schedule_check(const ReasoningTrace& trace, Index n, int steps);

/// Largest count allowed at step k: floor((K - k) n / K), in integer arithmetic.
Index schedule_bound(Index n, int step, int steps);

struct CostSample {
  Index n = 0;
  double ops = 0.0;
};

struct ComplexityFit {
  double coefficient = 0.0;
  double r_squared = 0.0;
};

/// Least squares ops ~ c * n * log2(n) through the origin; needs four distinct n.
ComplexityFit complexity_fit(std::span<const CostSample> samples);

/// Pipeline op counts on one random primary sequence per length, drawn from `seed`.
std::vector<CostSample> measure_pipeline_costs(const ModelParams& params, const TokenUniverse& universe,
                                               const GsotConfig& cfg, std::span<const Index> lengths,
                                               std::uint64_t seed);

}  // namespace ttm
