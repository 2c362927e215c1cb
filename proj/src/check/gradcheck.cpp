#include <map>
#include <utility>

#include "ttm/attention.hpp"
#include "ttm/check.hpp"
#include "ttm/numerics.hpp"
#include "ttm/temperature.hpp"

namespace ttm {

ModelConfig gradcheck_model_config(AttentionVariant variant) {
  ModelConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.layers = 2;
  c.d_ff = 16;
  c.vocab_size = 11;
  c.d_c = 4;
  c.attention_variant = variant;
  c.blend_alpha = 0.25;
  c.seed = 5;
  return c;
}

namespace {

using Case = std::pair<std::string, ScalarFn>;

void run_cases(std::vector<GradCheckEntry>& out, const std::string& module, const std::vector<Case>& cases,
               const Matrix& at, double threshold, double eps) {
  for (const auto& [name, f] : cases)
    out.push_back({module, name, grad_check_detailed(f, at, eps).max_rel_err, threshold});
}

void op_checks(std::vector<GradCheckEntry>& out, double eps) {
  Rng rng(21);
  const Matrix x = rng.normal_matrix(3, 4, 0.8);
  const Matrix w = rng.normal_matrix(4, 3, 0.8);
  const Matrix r4 = rng.normal_matrix(1, 4, 0.8);
  const Matrix pos = rng.uniform_matrix(3, 4, 0.5, 2.0);
  const std::vector<std::pair<Index, int>> targets{{0, 1}, {2, 3}};
  const std::vector<int> ids{2, 0, 2};

  // Each case routes the input through one op (plus sum/square to make a scalar).
  const std::vector<Case> cases = {
      {"matmul", [=](Tape& t, Var v) { return sum(square(matmul(v, t.constant(w)))); }},
      {"transpose", [=](Tape& t, Var v) { return sum(hadamard(transpose(v), t.constant(w))); }},
      {"add", [=](Tape& t, Var v) { return sum(square(add(v, t.constant(x * 0.3)))); }},
      {"sub", [=](Tape& t, Var v) { return sum(square(sub(scale(v, 2.0), t.constant(x * 0.3)))); }},
      {"hadamard", [](Tape&, Var v) { return sum(hadamard(v, square(v))); }},
      {"add_row", [=](Tape& t, Var v) { return sum(square(add_row(t.constant(x), row_block(v, 0, 1)))); }},
      {"scale", [](Tape&, Var v) { return sum(square(scale(v, -1.7))); }},
      {"shift", [](Tape&, Var v) { return sum(square(shift(v, 0.4))); }},
      {"scale_by", [=](Tape& t, Var v) { return sum(square(scale_by(v, mean(hadamard(v, t.constant(x)))))); }},
      {"scale_columns", [](Tape&, Var v) { return sum(square(scale_columns(v, row_block(v, 1, 1)))); }},
      {"scale_rows", [](Tape&, Var v) { return sum(square(scale_rows(v, transpose(col_block(v, 1, 1))))); }},
      {"sigmoid", [](Tape&, Var v) { return sum(square(sigmoid(v))); }},
      {"squash", [](Tape&, Var v) { return sum(square(squash(v, 0.01))); }},
      {"gelu", [](Tape&, Var v) { return sum(square(gelu(v))); }},
      {"square", [=](Tape& t, Var v) { return sum(hadamard(square(v), t.constant(x))); }},
      {"softmax_rows", [=](Tape& t, Var v) { return sum(hadamard(softmax_rows(v), t.constant(x))); }},
      {"normalize_rows",
       [=](Tape& t, Var v) { return sum(hadamard(normalize_rows(add_constant(square(v), pos)), t.constant(x))); }},
      {"layer_norm",
       [=](Tape& t, Var v) {
         return sum(hadamard(layer_norm(v, row_block(v, 0, 1), t.constant(r4), 1e-5), t.constant(x)));
       }},
      {"sum", [=](Tape& t, Var v) { return sum(hadamard(v, t.constant(x))); }},
      {"mean", [](Tape&, Var v) { return mean(square(v)); }},
      {"col_block", [](Tape&, Var v) { return sum(square(col_block(v, 1, 2))); }},
      {"row_block", [](Tape&, Var v) { return sum(square(row_block(v, 1, 2))); }},
      {"hconcat", [](Tape&, Var v) { return sum(square(hconcat({col_block(v, 0, 2), col_block(v, 3, 1)}))); }},
      {"vconcat", [](Tape&, Var v) { return sum(square(vconcat({row_block(v, 2, 1), v}))); }},
      {"gather_rows", [=](Tape&, Var v) { return sum(square(gather_rows(v, ids))); }},
      {"add_constant", [=](Tape&, Var v) { return sum(square(add_constant(v, pos))); }},
      {"cross_entropy", [=](Tape&, Var v) { return cross_entropy(v, targets); }},
      {"clip_grad", [](Tape&, Var v) { return sum(square(clip_grad(v, 100.0))); }},
      {"collapse_penalty", [](Tape&, Var v) { return collapse_penalty(sigmoid(v), 0.7); }},
  };
  run_cases(out, "numerics", cases, x, kOpGradTolerance, eps);
}

void temperature_checks(std::vector<GradCheckEntry>& out, double eps) {
  Rng rng(3);
  const auto head = random_head(rng, 2, 3, 1.0, 0.5);
  const Matrix acts = rng.normal_matrix(4, 3, 1.0);
  const Matrix probe = rng.normal_matrix(2, 4, 1.0);
  const auto loss = [=](Tape& t, Var a, Var w, Var b) {
    return sum(hadamard(temperature_field(a, w, b, head.eps_min), t.constant(probe)));
  };
  out.push_back({"temperature", "temperature_field/activations",
                 grad_check_detailed([&](Tape& t, Var a) { return loss(t, a, t.constant(head.w_t), t.constant(head.b_t)); },
                                     acts, eps)
                     .max_rel_err,
                 kOpGradTolerance});
  out.push_back({"temperature", "temperature_field/w_t",
                 grad_check_detailed([&](Tape& t, Var w) { return loss(t, t.constant(acts), w, t.constant(head.b_t)); },
                                     head.w_t, eps)
                     .max_rel_err,
                 kOpGradTolerance});
  out.push_back({"temperature", "temperature_field/b_t",
                 grad_check_detailed([&](Tape& t, Var b) { return loss(t, t.constant(acts), t.constant(head.w_t), b); },
                                     head.b_t, eps)
                     .max_rel_err,
                 kOpGradTolerance});
}

void attention_checks(std::vector<GradCheckEntry>& out, double eps) {
  Rng rng(11);
  const auto p = AttentionParams::random(rng, 4, 2, 2);
  const Matrix x = rng.normal_matrix(3, 4, 1.0);
  const Matrix t = rng.uniform_matrix(2, 3, 0.1, 0.9);
  const Matrix probe = rng.normal_matrix(3, 4, 1.0);

  for (Modulation mode : {Modulation::broadcast, Modulation::outer}) {
    const std::string tag = mode == Modulation::broadcast ? "broadcast" : "outer";
    // Loss of the blended attention output given every input as a tape node.
    const auto loss = [=](Tape& tape, Var xv, AttentionVars pv, Var field) {
      auto w = residual_blend(attention_weights(xv, pv, Modulation::none, std::nullopt),
                              attention_weights(xv, pv, mode, field), 0.3);
      return sum(hadamard(attention_values(xv, pv, w), tape.constant(probe)));
    };
    const auto consts = [&p](Tape& tape) { return attach(tape, p, false); };

    out.push_back({"attention", tag + "/x",
                   grad_check_detailed([&](Tape& tp, Var v) { return loss(tp, v, consts(tp), tp.constant(t)); }, x, eps)
                       .max_rel_err,
                   kOpGradTolerance});
    out.push_back({"attention", tag + "/field",
                   grad_check_detailed([&](Tape& tp, Var v) { return loss(tp, tp.constant(x), consts(tp), v); }, t, eps)
                       .max_rel_err,
                   kOpGradTolerance});
    const std::vector<std::pair<std::string, Var AttentionVars::*>> weights = {
        {"w_q", &AttentionVars::w_q}, {"w_k", &AttentionVars::w_k}, {"w_v", &AttentionVars::w_v}, {"w_o", &AttentionVars::w_o}};
    const std::map<std::string, const Matrix*> values = {{"w_q", &p.w_q}, {"w_k", &p.w_k}, {"w_v", &p.w_v}, {"w_o", &p.w_o}};
    for (const auto& [name, member] : weights) {
      const ScalarFn f = [&, member](Tape& tp, Var v) {
        AttentionVars pv = consts(tp);
        pv.*member = v;
        return loss(tp, tp.constant(x), pv, tp.constant(t));
      };
      out.push_back({"attention", tag + "/" + name, grad_check_detailed(f, *values.at(name), eps).max_rel_err,
                     kOpGradTolerance});
    }
  }
}

// Pairs each forward-pass tape handle with its name in the parameter table.
std::vector<std::pair<std::string, std::function<Var&(ModelVars&)>>> forward_handles(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, std::function<Var&(ModelVars&)>>> h;
  h.emplace_back("tok_emb", [](ModelVars& v) -> Var& { return v.tok_emb; });
  for (Index l = 0; l < cfg.layers; ++l) {
    const std::string b = "block" + std::to_string(l) + ".";
    const auto at = [l](ModelVars& v) -> BlockVars& { return v.blocks[static_cast<std::size_t>(l)]; };
    h.emplace_back(b + "attn.w_q", [at](ModelVars& v) -> Var& { return at(v).attn.w_q; });
    h.emplace_back(b + "attn.w_k", [at](ModelVars& v) -> Var& { return at(v).attn.w_k; });
    h.emplace_back(b + "attn.w_v", [at](ModelVars& v) -> Var& { return at(v).attn.w_v; });
    h.emplace_back(b + "attn.w_o", [at](ModelVars& v) -> Var& { return at(v).attn.w_o; });
    h.emplace_back(b + "ffn.w1", [at](ModelVars& v) -> Var& { return at(v).ffn_w1; });
    h.emplace_back(b + "ffn.b1", [at](ModelVars& v) -> Var& { return at(v).ffn_b1; });
    h.emplace_back(b + "ffn.w2", [at](ModelVars& v) -> Var& { return at(v).ffn_w2; });
    h.emplace_back(b + "ffn.b2", [at](ModelVars& v) -> Var& { return at(v).ffn_b2; });
    h.emplace_back(b + "ln1.gain", [at](ModelVars& v) -> Var& { return at(v).ln1_gain; });
    h.emplace_back(b + "ln1.bias", [at](ModelVars& v) -> Var& { return at(v).ln1_bias; });
    h.emplace_back(b + "ln2.gain", [at](ModelVars& v) -> Var& { return at(v).ln2_gain; });
    h.emplace_back(b + "ln2.bias", [at](ModelVars& v) -> Var& { return at(v).ln2_bias; });
    h.emplace_back(b + "temp.w_t", [at](ModelVars& v) -> Var& { return at(v).temp_w; });
    h.emplace_back(b + "temp.b_t", [at](ModelVars& v) -> Var& { return at(v).temp_b; });
  }
  h.emplace_back("out.w", [](ModelVars& v) -> Var& { return v.out_w; });
  h.emplace_back("out.b", [](ModelVars& v) -> Var& { return v.out_b; });
  return h;
}

void model_checks(std::vector<GradCheckEntry>& out, double eps) {
  const std::vector<int> tokens{1, 4, 2, 9, 0};
  const std::vector<std::pair<Index, int>> targets{{0, 3}, {1, 1}, {2, 7}, {3, 9}, {4, 0}};
  for (auto variant : {AttentionVariant::broadcast, AttentionVariant::outer}) {
    const ModelConfig cfg = gradcheck_model_config(variant);
    auto params = ModelParams::init(cfg);
    // The default head init keeps fields near 0.5; a wider head exercises the squash curvature.
    for (auto& b : params.blocks) b.temp.w_t *= 10.0;
    std::map<std::string, Matrix> values;
    params.for_each([&](const ParamInfo& info, const Matrix& m) { values[info.name] = m; });

    for (const auto& [name, pick] : forward_handles(cfg)) {
      const ScalarFn f = [&, pick](Tape& tape, Var leaf) {
        ModelVars v = attach(tape, params, false);
        pick(v) = leaf;
        return cross_entropy(model_forward(v, cfg, tokens).logits, targets);
      };
      out.push_back({"model", to_string(variant) + "/" + name, grad_check_detailed(f, values.at(name), eps).max_rel_err,
                     kModelGradTolerance});
    }
  }
}

}  // namespace

std::vector<GradCheckEntry> gradcheck_suite(double eps, const std::string& module) {
  std::vector<GradCheckEntry> out;
  const auto want = [&](const char* m) { return module.empty() || module == m; };
  if (want("numerics")) op_checks(out, eps);
  if (want("temperature")) temperature_checks(out, eps);
  if (want("attention")) attention_checks(out, eps);
  if (want("model")) model_checks(out, eps);
  return out;
}

}  // namespace ttm
