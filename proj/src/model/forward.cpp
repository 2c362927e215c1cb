#include <cmath>
#include <string>

#include "ttm/error.hpp"
#include "ttm/model.hpp"
#include "ttm/numerics/ops.hpp"

namespace ttm {

Matrix sinusoidal_positions(Index n, Index d_model) {
  Matrix pe(n, d_model);
  for (Index pos = 0; pos < n; ++pos) {
    for (Index i = 0; i < d_model; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d_model));
      const double angle = static_cast<double>(pos) * rate;
      pe(pos, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

ModelVars attach(Tape& tape, const ModelParams& params, bool trainable) {
  const auto make = [&](const auto& m) { return trainable ? tape.leaf(Matrix(m)) : tape.constant(Matrix(m)); };
  ModelVars v;
  v.tok_emb = make(params.tok_emb);
  for (const auto& b : params.blocks) {
    BlockVars bv;
    bv.attn = attach(tape, b.attn, trainable);
    bv.ffn_w1 = make(b.ffn_w1);
    bv.ffn_b1 = make(b.ffn_b1);
    bv.ffn_w2 = make(b.ffn_w2);
    bv.ffn_b2 = make(b.ffn_b2);
    bv.ln1_gain = make(b.ln1_gain);
    bv.ln1_bias = make(b.ln1_bias);
    bv.ln2_gain = make(b.ln2_gain);
    bv.ln2_bias = make(b.ln2_bias);
    bv.temp_w = make(b.temp.w_t);
    bv.temp_b = make(b.temp.b_t);
    v.blocks.push_back(bv);
  }
  v.out_w = make(params.out_w);
  v.out_b = make(params.out_b);
  return v;
}

namespace {

Modulation modulation_for(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::baseline: return Modulation::none;
    case AttentionVariant::broadcast: return Modulation::broadcast;
    case AttentionVariant::outer: return Modulation::outer;
  }
  return Modulation::none;
}

struct BlockInternal {
  BlockResult result;
  Var field_used;
};

BlockInternal run_block(Var x, const BlockVars& p, const ModelConfig& cfg, const ForwardOptions& opts) {
  const auto base_w = attention_weights(x, p.attn, Modulation::none, std::nullopt);
  const Var base_out = attention_values(x, p.attn, base_w);
  const Var field = temperature_field(base_out, p.temp_w, p.temp_b, cfg.eps_min);
  Var used = field;
  if (opts.field_clip) used = clip_grad(used, *opts.field_clip);
  if (opts.temp_multiplier != 1.0) used = scale(used, opts.temp_multiplier);

  Var attn_out = base_out;
  const Modulation mode = modulation_for(cfg.attention_variant);
  if (mode != Modulation::none) {
    const auto mod_w = attention_weights(x, p.attn, mode, used);
    attn_out = attention_values(x, p.attn, residual_blend(base_w, mod_w, cfg.blend_alpha));
  }
  const Var h = layer_norm(add(x, attn_out), p.ln1_gain, p.ln1_bias, kLayerNormEps);
  const Var ff = add_row(matmul(gelu(add_row(matmul(h, p.ffn_w1), p.ffn_b1)), p.ffn_w2), p.ffn_b2);
  const Var out = layer_norm(add(h, ff), p.ln2_gain, p.ln2_bias, kLayerNormEps);
  return {{out, field, attn_out}, used};
}

}  // namespace

BlockResult block_forward(Var x, const BlockVars& p, const ModelConfig& cfg, const ForwardOptions& opts) {
  return run_block(x, p, cfg, opts).result;
}

ForwardVars model_forward_embedded(const ModelVars& p, const ModelConfig& cfg, Var embedded,
                                   const ForwardOptions& opts) {
  if (embedded.cols() != cfg.d_model) throw DimensionError("embedded input width does not match d_model");
  if (embedded.rows() == 0) throw DimensionError("cannot run the model on an empty sequence");
  if (static_cast<Index>(p.blocks.size()) != cfg.layers) throw ConfigError("parameter block count differs from layers");
  ForwardVars out;
  Var x = add_constant(embedded, sinusoidal_positions(embedded.rows(), cfg.d_model));
  Var last_used;
  for (const auto& b : p.blocks) {
    const auto r = run_block(x, b, cfg, opts);
    x = r.result.out;
    out.fields.push_back(r.result.field);
    out.attn_outs.push_back(r.result.attn_out);
    last_used = r.field_used;
  }
  out.hidden = x;
  const Var raw = add_row(matmul(x, p.out_w), p.out_b);
  out.logits = scale_by(raw, mean(last_used));
  return out;
}

ForwardVars model_forward(const ModelVars& p, const ModelConfig& cfg, std::span<const int> tokens,
                          const ForwardOptions& opts) {
  for (int t : tokens) {
    if (t < 0 || t >= cfg.vocab_size) {
      throw DimensionError("token id " + std::to_string(t) + " outside vocabulary of size " +
                           std::to_string(cfg.vocab_size));
    }
  }
  return model_forward_embedded(p, cfg, gather_rows(p.tok_emb, tokens), opts);
}

namespace {

ModelOutput collect(const ForwardVars& f, const ModelConfig& cfg) {
  ModelOutput o;
  o.logits = f.logits.value();
  o.hidden = f.hidden.value();
  for (const auto& v : f.fields) o.fields.emplace_back(v.value(), cfg.eps_min);
  for (const auto& v : f.attn_outs) o.attn_outs.push_back(v.value());
  return o;
}

}  // namespace

ModelOutput model_forward(const ModelParams& params, std::span<const int> tokens, const ForwardOptions& opts) {
  Tape tape;
  const ModelVars v = attach(tape, params, false);
  return collect(model_forward(v, params.cfg, tokens, opts), params.cfg);
}

ModelOutput model_forward_embedded(const ModelParams& params, const Matrix& embedded, const ForwardOptions& opts) {
  Tape tape;
  const ModelVars v = attach(tape, params, false);
  return collect(model_forward_embedded(v, params.cfg, tape.constant(embedded), opts), params.cfg);
}

std::pair<Tensor, TemperatureField> block_forward(const Tensor& x, const BlockParams& params, const ModelConfig& cfg) {
  if (x.rank() != 2) throw DimensionError("block input must be n x d_model, got " + x.shape_string());
  Tape tape;
  BlockVars bv;
  bv.attn = attach(tape, params.attn, false);
  bv.ffn_w1 = tape.constant(params.ffn_w1);
  bv.ffn_b1 = tape.constant(params.ffn_b1);
  bv.ffn_w2 = tape.constant(params.ffn_w2);
  bv.ffn_b2 = tape.constant(params.ffn_b2);
  bv.ln1_gain = tape.constant(params.ln1_gain);
  bv.ln1_bias = tape.constant(params.ln1_bias);
  bv.ln2_gain = tape.constant(params.ln2_gain);
  bv.ln2_bias = tape.constant(params.ln2_bias);
  bv.temp_w = tape.constant(params.temp.w_t);
  bv.temp_b = tape.constant(params.temp.b_t);
  const auto r = block_forward(tape.constant(x.matrix()), bv, cfg);
  return {Tensor::from_matrix(r.out.value()), TemperatureField(r.field.value(), cfg.eps_min)};
}

}  // namespace ttm

namespace ttm {

std::vector<std::pair<Index, int>> labelled_positions(const Example& ex) {
  if (ex.target.size() != ex.input.size()) throw DimensionError("example target length differs from input length");
  std::vector<std::pair<Index, int>> out;
  for (std::size_t i = 0; i < ex.target.size(); ++i) {
    if (ex.target[i] >= 0) out.emplace_back(static_cast<Index>(i), ex.target[i]);
  }
  return out;
}

double mean_loss(const ModelParams& params, std::span<const Example> data, const ForwardOptions& opts) {
  if (data.empty()) throw ConfigError("loss needs at least one example");
  Tape tape;
  const ModelVars v = attach(tape, params, false);
  double total = 0.0;
  for (const auto& ex : data) {
    const auto targets = labelled_positions(ex);
    if (targets.empty()) throw ConfigError("example has no labelled positions");
    total += cross_entropy(model_forward(v, params.cfg, ex.input, opts).logits, targets).scalar();
  }
  return total / static_cast<double>(data.size());
}

}  // namespace ttm
