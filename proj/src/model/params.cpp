#include <cmath>
#include <string>

#include "ttm/error.hpp"
#include "ttm/model.hpp"

namespace ttm {

std::string to_string(ParamCategory c) {
  switch (c) {
    case ParamCategory::embeddings: return "embeddings";
    case ParamCategory::attention: return "attention";
    case ParamCategory::ffn: return "ffn";
    case ParamCategory::temperature: return "temperature";
    case ParamCategory::other: return "other";
  }
  return "?";
}

std::vector<ParamInfo> parameter_table(const ModelConfig& cfg) {
  cfg.validate();
  const Index d = cfg.d_model;
  const Index v = cfg.vocab_size;
  using C = ParamCategory;
  std::vector<ParamInfo> t;
  t.push_back({"tok_emb", v, d, C::embeddings});
  for (Index l = 0; l < cfg.layers; ++l) {
    const std::string b = "block" + std::to_string(l) + ".";
    for (const char* w : {"w_q", "w_k", "w_v", "w_o"}) t.push_back({b + "attn." + w, d, d, C::attention});
    t.push_back({b + "ffn.w1", d, cfg.d_ff, C::ffn});
    t.push_back({b + "ffn.b1", 1, cfg.d_ff, C::ffn});
    t.push_back({b + "ffn.w2", cfg.d_ff, d, C::ffn});
    t.push_back({b + "ffn.b2", 1, d, C::ffn});
    for (const char* n : {"ln1.gain", "ln1.bias", "ln2.gain", "ln2.bias"}) t.push_back({b + n, 1, d, C::other});
    t.push_back({b + "temp.w_t", cfg.heads, d, C::temperature});
    t.push_back({b + "temp.b_t", 1, cfg.heads, C::temperature});
  }
  t.push_back({"out.w", d, v, C::embeddings});
  t.push_back({"out.b", 1, v, C::embeddings});
  t.push_back({"ctx.lin.w", d, d, C::other});
  t.push_back({"ctx.lin.b", 1, d, C::other});
  t.push_back({"ctx.ln.gain", 1, d, C::other});
  t.push_back({"ctx.ln.bias", 1, d, C::other});
  t.push_back({"ctx.w_c", 3 * d, cfg.d_c, C::other});
  t.push_back({"imp.w", cfg.d_c, 1, C::other});
  t.push_back({"imp.b", 1, 1, C::other});
  t.push_back({"reason.w", d + cfg.heads, v, C::other});
  t.push_back({"reason.b", 1, v, C::other});
  return t;
}

ParameterCount count_parameters(const ModelConfig& cfg) {
  ParameterCount c;
  for (const auto& p : parameter_table(cfg)) {
    const auto n = static_cast<std::uint64_t>(p.rows) * static_cast<std::uint64_t>(p.cols);
    switch (p.category) {
      case ParamCategory::embeddings: c.embeddings += n; break;
      case ParamCategory::attention: c.attention += n; break;
      case ParamCategory::ffn: c.ffn += n; break;
      case ParamCategory::temperature: c.temperature += n; break;
      case ParamCategory::other: c.other += n; break;
    }
    c.total += n;
  }
  return c;
}

namespace {

// Visits every tensor slot in table order. Row vectors and the importance bias
// go through a temporary 1 x k matrix.
template <typename Params, typename Fn>
void visit(Params& p, Fn&& fn) {
  const auto table = parameter_table(p.cfg);
  std::size_t i = 0;
  const auto mat = [&](auto& m) { fn(table[i++], m); };
  const auto row = [&](auto& r) {
    Matrix tmp = r;
    fn(table[i++], tmp);
    if constexpr (!std::is_const_v<std::remove_reference_t<decltype(r)>>) r = tmp.row(0);
  };
  mat(p.tok_emb);
  for (auto& b : p.blocks) {
    mat(b.attn.w_q);
    mat(b.attn.w_k);
    mat(b.attn.w_v);
    mat(b.attn.w_o);
    mat(b.ffn_w1);
    row(b.ffn_b1);
    mat(b.ffn_w2);
    row(b.ffn_b2);
    row(b.ln1_gain);
    row(b.ln1_bias);
    row(b.ln2_gain);
    row(b.ln2_bias);
    mat(b.temp.w_t);
    row(b.temp.b_t);
  }
  mat(p.out_w);
  row(p.out_b);
  mat(p.ctx.lin_w);
  row(p.ctx.lin_b);
  row(p.ctx.ln_gain);
  row(p.ctx.ln_bias);
  mat(p.ctx.w_c);
  mat(p.importance.w);
  {
    Matrix tmp = Matrix::Constant(1, 1, p.importance.b);
    fn(table[i++], tmp);
    if constexpr (!std::is_const_v<Params>) p.importance.b = tmp(0, 0);
  }
  mat(p.reasoning.w);
  row(p.reasoning.b);
}

}  // namespace

void ModelParams::for_each(const std::function<void(const ParamInfo&, Matrix&)>& fn) { visit(*this, fn); }

void ModelParams::for_each(const std::function<void(const ParamInfo&, const Matrix&)>& fn) const {
  visit(*this, fn);
}

ModelParams ModelParams::init(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const Index d = cfg.d_model;
  const Index v = cfg.vocab_size;
  const auto inv_sqrt = [](Index k) { return 1.0 / std::sqrt(static_cast<double>(k)); };

  ModelParams p;
  p.cfg = cfg;
  p.tok_emb = rng.normal_matrix(v, d, 1.0);

  // Field = eps + (1 - 2 eps) sigmoid(b): pick the bias mean and spread so the
  // initial field has the requested mean and standard deviation.
  const double span = 1.0 - 2.0 * cfg.eps_min;
  const double u = (cfg.temp_init_mean - cfg.eps_min) / span;
  const double bias_mean = std::log(u / (1.0 - u));
  const double bias_sd = cfg.temp_init_std / (span * u * (1.0 - u));

  for (Index l = 0; l < cfg.layers; ++l) {
    BlockParams b;
    b.attn = AttentionParams::random(rng, d, cfg.heads, cfg.d_k());
    b.ffn_w1 = rng.normal_matrix(d, cfg.d_ff, inv_sqrt(d));
    b.ffn_b1 = RowVector::Zero(cfg.d_ff);
    b.ffn_w2 = rng.normal_matrix(cfg.d_ff, d, inv_sqrt(cfg.d_ff));
    b.ffn_b2 = RowVector::Zero(d);
    b.ln1_gain = RowVector::Ones(d);
    b.ln1_bias = RowVector::Zero(d);
    b.ln2_gain = RowVector::Ones(d);
    b.ln2_bias = RowVector::Zero(d);
    b.temp.w_t = rng.normal_matrix(cfg.heads, d, 0.1 * inv_sqrt(d));
    b.temp.b_t = (rng.normal_matrix(1, cfg.heads, bias_sd).array() + bias_mean).matrix();
    b.temp.eps_min = cfg.eps_min;
    p.blocks.push_back(std::move(b));
  }
  p.out_w = rng.normal_matrix(d, v, inv_sqrt(d));
  p.out_b = RowVector::Zero(v);
  p.ctx.lin_w = rng.normal_matrix(d, d, inv_sqrt(d));
  p.ctx.lin_b = RowVector::Zero(d);
  p.ctx.ln_gain = RowVector::Ones(d);
  p.ctx.ln_bias = RowVector::Zero(d);
  p.ctx.w_c = rng.normal_matrix(3 * d, cfg.d_c, inv_sqrt(3 * d));
  p.importance.w = rng.normal_matrix(cfg.d_c, 1, inv_sqrt(cfg.d_c));
  p.importance.b = 0.0;
  p.reasoning.w = rng.normal_matrix(d + cfg.heads, v, inv_sqrt(d + cfg.heads));
  p.reasoning.b = RowVector::Zero(v);
  return p;
}

}  // namespace ttm
