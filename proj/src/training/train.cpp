#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "ttm/error.hpp"
#include "ttm/numerics/ops.hpp"
#include "ttm/numerics/rng.hpp"
#include "ttm/training.hpp"

namespace ttm {

void TrainConfig::validate() const {
  if (!(eta0 > 0.0)) throw ConfigError("eta0 must be positive");
  if (!(t0 > 0.0)) throw ConfigError("t0 must be positive");
  if (!(clip_lo > 0.0 && clip_lo <= clip_hi)) throw ConfigError("need 0 < clip_lo <= clip_hi");
  if (!(lambda_t >= 0.0 && lambda_s >= 0.0)) throw ConfigError("loss weights must be nonnegative");
  if (!(temp_lr_ratio >= 0.0)) throw ConfigError("temperature LR ratio must be nonnegative");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be nonnegative");
  if (stability_tau && !(*stability_tau > 0.0)) throw ConfigError("stability tau must be positive");
  if (batch < 1) throw ConfigError("batch must be positive");
  if (steps < 0) throw ConfigError("steps must be nonnegative");
  if (!(spike_factor > 1.0)) throw ConfigError("spike factor must exceed 1");
  if (!(collapse_threshold > 0.0 && collapse_threshold <= 1.0)) throw ConfigError("collapse threshold must lie in (0, 1]");
  if (!(collapse_eps > 0.0 && collapse_eps < 0.5)) throw ConfigError("collapse eps must lie in (0, 0.5)");
  if (log_every < 1) throw ConfigError("log_every must be positive");
}

double stability_term(double grad_norm, double tau) {
  const double excess = grad_norm - tau;
  return excess > 0.0 ? excess * excess : 0.0;
}

double total_loss(double task_loss, const TemperatureField& field, double stability, const TrainConfig& cfg) {
  return task_loss + cfg.lambda_t * collapse_penalty(field, 1.0) + cfg.lambda_s * stability;
}

double lr_schedule(int step, double grad_norm, const TrainConfig& cfg) {
  if (step < 1) throw ConfigError("schedule steps start at 1");
  const double warm = std::min(1.0, std::sqrt(cfg.t0 / static_cast<double>(step)));
  return cfg.eta0 * warm * std::clamp(grad_norm, cfg.clip_lo, cfg.clip_hi);
}

namespace {

enum class Group { temperature, decayed, plain };

struct Slot {
  Var var;
  Group group;
  std::function<void(const Matrix& delta)> apply;  // param += delta
  std::function<Matrix()> value;
};

template <class P>
Slot slot(P& param, Var var, Group g) {
  return {var, g, [&param](const Matrix& delta) { param += delta; }, [&param] { return Matrix(param); }};
}

std::vector<Slot> trainable_slots(ModelParams& p, const ModelVars& v) {
  std::vector<Slot> s;
  s.push_back(slot(p.tok_emb, v.tok_emb, Group::decayed));
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    auto& b = p.blocks[l];
    const auto& bv = v.blocks[l];
    s.push_back(slot(b.attn.w_q, bv.attn.w_q, Group::decayed));
    s.push_back(slot(b.attn.w_k, bv.attn.w_k, Group::decayed));
    s.push_back(slot(b.attn.w_v, bv.attn.w_v, Group::decayed));
    s.push_back(slot(b.attn.w_o, bv.attn.w_o, Group::decayed));
    s.push_back(slot(b.ffn_w1, bv.ffn_w1, Group::decayed));
    s.push_back(slot(b.ffn_b1, bv.ffn_b1, Group::plain));
    s.push_back(slot(b.ffn_w2, bv.ffn_w2, Group::decayed));
    s.push_back(slot(b.ffn_b2, bv.ffn_b2, Group::plain));
    s.push_back(slot(b.ln1_gain, bv.ln1_gain, Group::plain));
    s.push_back(slot(b.ln1_bias, bv.ln1_bias, Group::plain));
    s.push_back(slot(b.ln2_gain, bv.ln2_gain, Group::plain));
    s.push_back(slot(b.ln2_bias, bv.ln2_bias, Group::plain));
    s.push_back(slot(b.temp.w_t, bv.temp_w, Group::temperature));
    s.push_back(slot(b.temp.b_t, bv.temp_b, Group::temperature));
  }
  s.push_back(slot(p.out_w, v.out_w, Group::decayed));
  s.push_back(slot(p.out_b, v.out_b, Group::plain));
  return s;
}

struct BatchStats {
  double task = 0.0;
  double penalty = 0.0;
  double grad_norm_temp = 0.0;
  double temp_min = std::numeric_limits<double>::infinity();
  double temp_max = -std::numeric_limits<double>::infinity();
  double collapse_fraction = 0.0;
  bool finite = true;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

TrainResult train(ModelParams& params, std::span<const Example> data, const TrainConfig& cfg) {
  cfg.validate();
  params.cfg.validate();
  TrainResult result;
  result.lambda_t_final = cfg.lambda_t;
  if (cfg.steps == 0) return result;
  if (data.empty()) throw ConfigError("training needs at least one example");

  const double tau = cfg.stability_tau.value_or(default_clip_tau(params.cfg.d_k()));
  ForwardOptions opts;
  opts.field_clip = default_clip_tau(params.cfg.d_k());

  Rng rng(cfg.seed);
  double lr_scale = 1.0;
  double lambda_t = cfg.lambda_t;
  double running = std::numeric_limits<double>::quiet_NaN();
  ModelParams last_good = params;

  for (int step = 1; step <= cfg.steps; ++step) {
    Tape tape;
    const ModelVars vars = attach(tape, params, true);
    std::vector<Var> fields;
    std::vector<Var> objectives;
    BatchStats st;
    std::size_t entries = 0;
    std::size_t outside = 0;
    const double inv_batch = 1.0 / static_cast<double>(cfg.batch);
    Var objective;
    // The numeric kernels throw on non-finite values; treat that like a non-finite loss.
    try {
      for (int b = 0; b < cfg.batch; ++b) {
        const Example& ex = data[rng.below(data.size())];
        const auto targets = labelled_positions(ex);
        if (targets.empty()) throw ConfigError("training example has no labelled positions");
        const ForwardVars fv = model_forward(vars, params.cfg, ex.input, opts);
        const Var task = cross_entropy(fv.logits, targets);
        Var penalty = collapse_penalty(fv.fields.front(), 1.0);
        for (std::size_t l = 1; l < fv.fields.size(); ++l) penalty = add(penalty, collapse_penalty(fv.fields[l], 1.0));
        objectives.push_back(add(task, scale(penalty, lambda_t)));
        st.task += task.scalar();
        st.penalty += penalty.scalar();
        for (const Var& f : fv.fields) {
          fields.push_back(f);
          if (!f.value().allFinite()) {
            st.finite = false;
            continue;
          }
          const auto report = detect_collapse(TemperatureField(f.value(), 0.0), cfg.collapse_eps);
          st.temp_min = std::min(st.temp_min, report.min);
          st.temp_max = std::max(st.temp_max, report.max);
          entries += static_cast<std::size_t>(f.value().size());
          outside += report.low_count + report.high_count;
        }
      }
      objective = objectives.front();
      for (std::size_t i = 1; i < objectives.size(); ++i) objective = add(objective, objectives[i]);
      objective = scale(objective, inv_batch);
      tape.backward(objective);
    } catch (const NumericError&) {
      st.finite = false;
    }

    st.task *= inv_batch;
    st.penalty *= inv_batch;
    double g2 = 0.0;
    for (const Var& f : fields) g2 += tape.grad(f).squaredNorm();
    st.grad_norm_temp = std::sqrt(g2);
    st.collapse_fraction = static_cast<double>(outside) / static_cast<double>(entries);

    const auto slots = trainable_slots(params, vars);
    for (const auto& s : slots) st.finite = st.finite && tape.grad(s.var).allFinite();
    st.finite = st.finite && objective.valid() && std::isfinite(objective.scalar()) && std::isfinite(st.grad_norm_temp);

    StepMetrics m;
    m.step = step;
    m.task_loss = st.task;
    if (cfg.inject_spike_step && *cfg.inject_spike_step == step) m.task_loss *= 10.0;
    m.temp_penalty = st.penalty;
    m.stability_penalty = stability_term(st.grad_norm_temp, tau);
    m.total_loss = m.task_loss + lambda_t * m.temp_penalty + cfg.lambda_s * m.stability_penalty;
    m.temp_min = st.temp_min;
    m.temp_max = st.temp_max;
    m.collapse_fraction = st.collapse_fraction;
    m.grad_norm_temp = st.grad_norm_temp;

    if (!st.finite || !std::isfinite(m.total_loss)) {
      m.event = "nonfinite";
      result.aborted = true;
      params = last_good;
      result.history.push_back(m);
      break;
    }

    last_good = params;
    const bool spike = std::isfinite(running) && m.task_loss >= cfg.spike_factor * running;
    const bool collapse = m.collapse_fraction >= cfg.collapse_threshold;
    if (spike || collapse) {
      m.event = spike ? "spike" : "collapse";
      lr_scale *= 0.5;
      lambda_t *= 2.0;
      ++result.events;
    } else {
      running = std::isfinite(running) ? 0.9 * running + 0.1 * m.task_loss : m.task_loss;
    }

    m.lr_main = lr_schedule(step, st.grad_norm_temp, cfg) * lr_scale;
    m.lr_temp = cfg.temp_lr_ratio * m.lr_main;
    for (const auto& s : slots) {
      const Matrix& g = tape.grad(s.var);
      switch (s.group) {
        case Group::temperature: s.apply(-m.lr_temp * g); break;
        case Group::decayed: s.apply(-m.lr_main * (g + cfg.weight_decay * s.value())); break;
        case Group::plain: s.apply(-m.lr_main * g); break;
      }
    }
    if (step % cfg.log_every == 0 || !m.event.empty() || step == cfg.steps) result.history.push_back(m);
  }
  result.lambda_t_final = lambda_t;
  return result;
}

std::string metrics_csv(std::span<const StepMetrics> history) {
  std::string out =
      "step,task_loss,temp_penalty,stability_penalty,total_loss,lr_main,lr_temp,temp_min,temp_max,"
      "collapse_fraction,grad_norm_temp,event\n";
  for (const auto& m : history) {
    out += std::to_string(m.step);
    for (double v : {m.task_loss, m.temp_penalty, m.stability_penalty, m.total_loss, m.lr_main, m.lr_temp, m.temp_min,
                     m.temp_max, m.collapse_fraction, m.grad_norm_temp}) {
      out += ',';
      out += fmt(v);
    }
    out += ',';
    out += m.event;
    out += '\n';
  }
  return out;
}

}  // namespace ttm
