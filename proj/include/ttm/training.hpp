#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ttm/model.hpp"
#include "ttm/temperature.hpp"

namespace ttm {

struct TrainConfig {
  double eta0 = 0.05;
  double t0 = 500.0;              // steps before the 1/sqrt(t) decay starts
  double clip_lo = 0.5;           // temperature-gradient norm clamp for the LR factor
  double clip_hi = 2.0;
  double temp_lr_ratio = 1.0;     // lr_temp = ratio * lr_main
  double lambda_t = 0.1;
  double lambda_s = 0.0;
  std::optional<double> stability_tau;  // default 1 / sqrt(d_k)
  double weight_decay = 0.01;
  int batch = 8;
  int steps = 500;
  std::uint64_t seed = 0;
  double spike_factor = 5.0;      // loss >= factor * running mean counts as a spike
  double collapse_threshold = 0.5;
  double collapse_eps = 0.02;
  int log_every = 1;
  std::optional<int> inject_spike_step;  // scales that step's observed loss by 10

  void validate() const;
};

// --- loss and schedule -------------------------------------------------------------

/// Squared excess of the field-gradient norm over tau; zero inside the bound.
double stability_term(double grad_norm, double tau);

/// task + lambda_t * collapse_penalty(field, 1) + lambda_s * stability.
double total_loss(double task_loss, const TemperatureField& field, double stability, const TrainConfig& cfg);

/// eta0 * min(1, sqrt(t0 / t)) * clamp(grad_norm, clip_lo, clip_hi).
double lr_schedule(int step, double grad_norm, const TrainConfig& cfg);

// --- tasks -------------------------------------------------------------------------

enum class TaskKind { copy, reverse, arithmetic_chain };
std::string_view to_string(TaskKind k);
TaskKind parse_task_kind(std::string_view s);

struct TaskSpec {
  TaskKind kind = TaskKind::copy;
  int length = 6;     // sequence length (maximum length for arithmetic_chain)
  int alphabet = 8;   // symbols, or number range 0..alphabet-1 for arithmetic_chain
  int count = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Token ids of the arithmetic program language; numbers occupy [0, alphabet).
enum class ArithOp { init, add, sub, halve, twice, equals };
int arithmetic_token(ArithOp op, int alphabet);
/// Token count the model needs for this task.
int task_vocab_size(const TaskSpec& spec);

/// Value of [INIT a] [ADD b | SUB b | HALVE | DOUBLE]* [EQ]? (halving floors).
int arithmetic_answer(std::span<const int> program, int alphabet);

/// Deterministic from spec.seed. Arithmetic targets are -1 except the answer at the EQ position.
std::vector<Example> make_task(const TaskSpec& spec);

/// Fraction of examples whose every labelled position is predicted by argmax.
double exact_accuracy(const ModelParams& params, std::span<const Example> data, const ForwardOptions& opts = {});

// --- training ----------------------------------------------------------------------

struct StepMetrics {
  int step = 0;
  double task_loss = 0.0;
  double temp_penalty = 0.0;       // unweighted sum (T - 0.5)^2, batch mean
  double stability_penalty = 0.0;  // unweighted
  double total_loss = 0.0;
  double lr_main = 0.0;
  double lr_temp = 0.0;
  double temp_min = 0.0;
  double temp_max = 0.0;
  double collapse_fraction = 0.0;
  double grad_norm_temp = 0.0;
  std::string event;  // "", "spike", "collapse", "nonfinite"
};

struct TrainResult {
  std::vector<StepMetrics> history;
  bool aborted = false;  // non-finite loss; params hold the last good state
  int events = 0;
  double lambda_t_final = 0.0;
};

/// Plain gradient descent on the batch-mean loss. Temperature parameters use lr_temp,
/// other weight matrices get decoupled weight decay.
TrainResult train(ModelParams& params, std::span<const Example> data, const TrainConfig& cfg);

std::string metrics_csv(std::span<const StepMetrics> history);

// --- statistics --------------------------------------------------------------------

/// Two-sided Student t quantile t_{(1-level)/2, df}; level in {0.90, 0.95, 0.99}.
/// Tabulated for df <= 120, normal quantile beyond.
double t_quantile(double level, int df);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

Interval confidence_interval(std::span<const double> samples, double level);

enum class Significance { strong, moderate, insufficient };
std::string_view to_string(Significance s);
Significance significance_label(double p);

/// n^2 * h * b * bytes, exact in 128 bits.
unsigned __int128 memory_estimate(std::uint64_t n, std::uint64_t heads, std::uint64_t batch,
                                  std::uint64_t bytes_per_element);
std::string to_string_u128(unsigned __int128 v);

}  // namespace ttm
