#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ttm/numerics/rng.hpp"
#include "ttm/numerics/tape.hpp"
#include "ttm/numerics/tensor.hpp"
#include "ttm/numerics/types.hpp"

namespace ttm {

inline constexpr double kDefaultEpsMin = 0.01;

/// Per-token neighbour lists (token indices).
using Neighborhoods = std::vector<std::vector<Index>>;

struct TemperatureHeadParams {
  Matrix w_t;                 // heads x d_model
  RowVector b_t;              // heads
  std::optional<Matrix> w_c;  // heads x d_c; absent for the context-free head
  double eps_min = kDefaultEpsMin;

  Index heads() const { return w_t.rows(); }
  Index model_width() const { return w_t.cols(); }
  /// Throws ConfigError unless 0 < eps_min < 0.5, shapes agree and all entries are finite.
  void validate() const;
};

/// heads x tokens matrix of temperatures, every entry in [eps_min, 1 - eps_min].
class TemperatureField {
 public:
  /// eps_min may be 0 here (unit-temperature test fields); values outside the
  /// band by more than 1e-12 are rejected, smaller excursions are clamped.
  TemperatureField(Matrix values, double eps_min);

  static TemperatureField constant(Index heads, Index tokens, double value, double eps_min = kDefaultEpsMin);

  const Matrix& values() const { return values_; }
  Index head_count() const { return values_.rows(); }
  Index seq_len() const { return values_.cols(); }
  double eps_min() const { return eps_min_; }
  double operator()(Index head, Index token) const { return values_(head, token); }

  /// Mean over heads, one entry per token.
  RowVector token_means() const { return values_.colwise().mean(); }
  double mean() const { return values_.mean(); }
  double sum() const { return values_.sum(); }

  Tensor tensor() const { return Tensor::from_matrix(values_); }
  /// Header "head,token,value", one row per entry.
  std::string to_csv() const;

 private:
  Matrix values_;
  double eps_min_;
};

// --- core temperature head -------------------------------------------------

/// Differentiable head: squash(A W_t^T + b_t), returned as heads x n.
/// `w_t` is heads x d_model and `b_t` is 1 x heads.
Var temperature_field(Var activations, Var w_t, Var b_t, double eps_min);

TemperatureField compute_temperature(const Tensor& activations, const TemperatureHeadParams& params);

enum class ContextMode {
  per_token,  // W_t a_i + W_c c + b_t for every token i
  broadcast,  // one vector from the mean activation, repeated over tokens
};

TemperatureField compute_temperature_ctx(const Tensor& activations, const Tensor& context,
                                         const TemperatureHeadParams& params,
                                         ContextMode mode = ContextMode::per_token);

// --- stability fixes -------------------------------------------------------

/// lambda * sum((T - 0.5)^2).
double collapse_penalty(const TemperatureField& field, double lambda);
Var collapse_penalty(Var field, double lambda);

struct CollapseReport {
  bool collapsed = false;
  double fraction = 0.0;  // share of entries outside (eps, 1 - eps)
  std::size_t low_count = 0;
  std::size_t high_count = 0;
  double min = 0.0;
  double max = 0.0;
};

/// Collapse iff some entry is strictly below eps or strictly above 1 - eps.
CollapseReport detect_collapse(const TemperatureField& field, double eps);

/// 1 / sqrt(d_k).
double default_clip_tau(Index d_k);
Tensor clip_temperature_grad(const Tensor& grad, double tau);

struct NormalizedField {
  TemperatureField field;
  Matrix standardized;  // per-head standardized values before the re-squash
  bool warning = false; // fewer than two tokens; field returned unchanged
};

NormalizedField normalize_temperature(const TemperatureField& field);

// --- structured extensions -------------------------------------------------

struct MultiScaleConfig {
  std::vector<Matrix> weights;          // per scale, heads x d_model
  std::vector<RowVector> biases;        // per scale, heads
  std::vector<double> coupling;         // gamma_s per scale, each in (0, 1)
  std::vector<Neighborhoods> neighborhoods;  // per scale
  /// Weight on the base field inside the scale-1 logit; 0 gives sigma(W_1 x + b_1).
  double base_coupling = 0.0;

  std::size_t scale_count() const { return weights.size(); }
  void validate(Index heads, Index tokens, Index width) const;
};

std::vector<TemperatureField> multiscale_temperature(const TemperatureField& base, const Tensor& embeddings,
                                                     const MultiScaleConfig& cfg);

struct Adjacency {
  Neighborhoods neighbors;
  bool directed = false;  // undirected adjacency must be symmetric
};

/// base(i) + sum_{j in N(i)} alpha * cos(e_i, e_j), clamped into the band.
TemperatureField coupled_temperature(const TemperatureField& base, const Tensor& embeddings, const Adjacency& adjacency,
                                     double alpha);

/// Learnable outer map of the n-gram field: squash(scale * z + shift).
struct NgramTransform {
  double scale = 1.0;
  double shift = 0.0;
};

/// One value per window of `n_gram` consecutive tokens: heads x (n - n_gram + 1).
TemperatureField ngram_temperature(const TemperatureField& base, std::size_t n_gram, const std::vector<double>& weights,
                                   const NgramTransform& transform);

struct ContextCategory {
  std::string name;
  double scale_logit = 0.0;     // gamma(c) = sigmoid(scale_logit) + 0.5
  double jump_magnitude = 0.0;  // beta_k
  RowVector jump_weights;       // h_k(x) = tanh(jump_weights . x + jump_bias)
  double jump_bias = 0.0;
  double lipschitz_bound = 0.0; // M(c)
};

struct AdaptiveTempConfig {
  std::vector<ContextCategory> categories;
  double max_jump = 0.1;  // J, applied to |Delta_c(x)| by clamping

  static constexpr const char* kNeutral = "neutral";
  const ContextCategory* find(const std::string& name) const;
};

struct AdaptiveResult {
  TemperatureField field;
  Matrix jumps;        // 1 x n clamped Delta_c per token
  double gamma = 1.0;
  bool unknown_category = false;
};

double adaptive_scale(const ContextCategory& category);

/// base * gamma(c) + Delta_c(x), clamped. Unknown categories fall back to the
/// neutral one (gamma = 1, Delta = 0) and set the flag.
AdaptiveResult adaptive_temperature(const TemperatureField& base, const std::string& context_id,
                                    const Tensor& features, const AdaptiveTempConfig& cfg);

struct InvarianceReport {
  std::vector<double> layer_sums;
  double max_drift = 0.0;  // max_l |sum_l - sum_1|
  std::vector<TemperatureField> renormalized;  // enforce mode only
  std::vector<bool> clamped;                   // enforce mode: clamp changed the rescaled layer
};

InvarianceReport invariance_diagnostic(const std::vector<TemperatureField>& fields, bool enforce = false);

/// Random head of the given shape; used by property checks and tools.
TemperatureHeadParams random_head(Rng& rng, Index heads, Index width, double weight_scale, double bias_scale,
                                  double eps_min = kDefaultEpsMin);

}  // namespace ttm
