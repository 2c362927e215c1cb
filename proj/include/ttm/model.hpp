#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ttm/attention.hpp"
#include "ttm/numerics/rng.hpp"
#include "ttm/numerics/tape.hpp"
#include "ttm/numerics/tensor.hpp"
#include "ttm/numerics/types.hpp"
#include "ttm/temperature.hpp"

namespace ttm {

enum class AttentionVariant { baseline, broadcast, outer };

std::string to_string(AttentionVariant v);
AttentionVariant parse_attention_variant(const std::string& name);

struct ModelConfig {
  Index d_model = 32;
  Index heads = 4;
  Index layers = 2;
  Index d_ff = 64;
  Index vocab_size = 24;
  Index d_c = 8;
  double eps_min = kDefaultEpsMin;
  double blend_alpha = 0.0;
  AttentionVariant attention_variant = AttentionVariant::broadcast;
  double temp_init_mean = 0.5;
  double temp_init_std = 0.01;
  std::uint64_t seed = 0;

  Index d_k() const { return d_model / heads; }
  /// Throws ConfigError on any violated invariant.
  void validate() const;

  /// JSON object with exactly the twelve documented keys.
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

struct BlockParams {
  AttentionParams attn;
  Matrix ffn_w1;  // d_model x d_ff
  RowVector ffn_b1;
  Matrix ffn_w2;  // d_ff x d_model
  RowVector ffn_b2;
  RowVector ln1_gain, ln1_bias;
  RowVector ln2_gain, ln2_bias;
  TemperatureHeadParams temp;
};

struct ContextProcessorParams {
  Matrix lin_w;  // d_model x d_model
  RowVector lin_b;
  RowVector ln_gain, ln_bias;
  Matrix w_c;  // 3 d_model x d_c
};

struct ImportanceParams {
  Matrix w;  // d_c x 1
  double b = 0.0;
};

struct ReasoningHeadParams {
  Matrix w;  // (d_model + heads) x vocab
  RowVector b;
};

enum class ParamCategory { embeddings, attention, ffn, temperature, other };

std::string to_string(ParamCategory c);

struct ParamInfo {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  ParamCategory category = ParamCategory::other;
};

/// Every tensor a model of this config owns, in checkpoint order.
std::vector<ParamInfo> parameter_table(const ModelConfig& cfg);

struct ModelParams {
  ModelConfig cfg;
  Matrix tok_emb;  // vocab x d_model
  std::vector<BlockParams> blocks;
  Matrix out_w;  // d_model x vocab
  RowVector out_b;
  ContextProcessorParams ctx;
  ImportanceParams importance;
  ReasoningHeadParams reasoning;

  /// Allocates and initializes every tensor from cfg.seed.
  static ModelParams init(const ModelConfig& cfg);

  /// Visits tensors in parameter_table order. Row vectors and the scalar
  /// importance bias are exposed as 1 x k matrices through the callback copy.
  void for_each(const std::function<void(const ParamInfo&, Matrix&)>& fn);
  void for_each(const std::function<void(const ParamInfo&, const Matrix&)>& fn) const;
};

struct ParameterCount {
  std::uint64_t embeddings = 0;
  std::uint64_t attention = 0;
  std::uint64_t ffn = 0;
  std::uint64_t temperature = 0;
  std::uint64_t other = 0;
  std::uint64_t total = 0;
};

ParameterCount count_parameters(const ModelConfig& cfg);

// --- forward ----------------------------------------------------------------

struct ForwardOptions {
  double temp_multiplier = 1.0;       // scales every field before use
  std::optional<double> field_clip;   // clip the field's incoming gradient (training)
};

struct BlockVars {
  AttentionVars attn;
  Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Var temp_w, temp_b;
};

/// Tape handles for the parameters used by the forward pass.
struct ModelVars {
  Var tok_emb;
  std::vector<BlockVars> blocks;
  Var out_w, out_b;
};

/// `trainable` selects leaf (gradient) or constant nodes.
ModelVars attach(Tape& tape, const ModelParams& params, bool trainable);

struct BlockResult {
  Var out;
  Var field;     // heads x n, unscaled
  Var attn_out;  // the attention output that fed the residual
};

/// LN2(h + FFN(h)) with h = LN1(x + TempAttn(x)). The field is computed from
/// the unmodulated attention output, then modulates a second attention pass.
BlockResult block_forward(Var x, const BlockVars& p, const ModelConfig& cfg, const ForwardOptions& opts = {});

struct ForwardVars {
  Var logits;           // n x vocab, temperature scaled
  Var hidden;           // n x d_model, final block output
  std::vector<Var> fields;
  std::vector<Var> attn_outs;
};

/// Embeds ids (plus sinusoidal positions) and runs the stack.
ForwardVars model_forward(const ModelVars& p, const ModelConfig& cfg, std::span<const int> tokens,
                          const ForwardOptions& opts = {});
/// Same, starting from already-embedded rows (positions are added here).
ForwardVars model_forward_embedded(const ModelVars& p, const ModelConfig& cfg, Var embedded,
                                   const ForwardOptions& opts = {});

struct ModelOutput {
  Matrix logits;
  Matrix hidden;
  std::vector<TemperatureField> fields;
  std::vector<Matrix> attn_outs;
};

ModelOutput model_forward(const ModelParams& params, std::span<const int> tokens, const ForwardOptions& opts = {});
ModelOutput model_forward_embedded(const ModelParams& params, const Matrix& embedded, const ForwardOptions& opts = {});

/// Plain (non-tape) block evaluation; returns the output and the field used.
std::pair<Tensor, TemperatureField> block_forward(const Tensor& x, const BlockParams& params, const ModelConfig& cfg);

Matrix sinusoidal_positions(Index n, Index d_model);

inline constexpr double kLayerNormEps = 1e-5;

// --- auxiliary heads ----------------------------------------------------------

/// [Linear(x), LayerNorm(x), GELU(x)] * W_c, one row per token.
Tensor context_processor(const Tensor& x, const ContextProcessorParams& params);
/// sigmoid(ctx * w + b), one value per token.
Tensor token_importance(const Tensor& ctx, const ImportanceParams& params);
/// softmax([attn_out ; field^T] * W + b), rows sum to 1.
Tensor reasoning_head(const Tensor& attn_out, const TemperatureField& field, const ReasoningHeadParams& params);

// --- checkpoints ----------------------------------------------------------------

/// Binary tensors at `path`, config JSON at `path` + ".json".
void checkpoint_save(const ModelParams& params, const std::filesystem::path& path);
/// Loads using the sidecar config.
ModelParams checkpoint_load(const std::filesystem::path& path);
/// Loads into an expected config; a tensor whose name or shape disagrees raises ShapeError.
ModelParams checkpoint_load(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace ttm

namespace ttm {

/// One supervised sequence. target[i] < 0 marks a position without a label.
struct Example {
  std::vector<int> input;
  std::vector<int> target;
};

/// (row, label) pairs for the labelled positions of an example.
std::vector<std::pair<Index, int>> labelled_positions(const Example& ex);

/// Mean cross-entropy per labelled position, averaged over the examples.
double mean_loss(const ModelParams& params, std::span<const Example> data, const ForwardOptions& opts = {});

}  // namespace ttm
