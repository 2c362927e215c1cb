#include <algorithm>
#include <cmath>
#include <string>

#include "ttm/error.hpp"
#include "ttm/numerics/kernels.hpp"
#include "ttm/temperature.hpp"

namespace ttm {

namespace {

Matrix embedding_matrix(const Tensor& embeddings, Index tokens) {
  if (embeddings.rank() != 2 || static_cast<Index>(embeddings.extent(0)) != tokens) {
    throw DimensionError("expected " + std::to_string(tokens) + " embedding rows, got " + embeddings.shape_string());
  }
  return embeddings.matrix();
}

void check_neighborhoods(const Neighborhoods& nb, Index tokens, const char* what) {
  if (nb.empty()) return;
  if (static_cast<Index>(nb.size()) != tokens) {
    throw ConfigError(std::string(what) + " lists " + std::to_string(nb.size()) + " tokens, sequence has " +
                      std::to_string(tokens));
  }
  for (const auto& list : nb) {
    for (Index j : list) {
      if (j < 0 || j >= tokens) throw ConfigError(std::string(what) + " references token " + std::to_string(j));
    }
  }
}

Matrix clamp_band(const Matrix& m, double eps) { return m.cwiseMax(eps).cwiseMin(1.0 - eps); }

}  // namespace

void MultiScaleConfig::validate(Index heads, Index tokens, Index width) const {
  const std::size_t s = weights.size();
  if (s == 0) throw ConfigError("multi-scale temperature needs at least one scale");
  if (biases.size() != s || coupling.size() != s || neighborhoods.size() != s) {
    throw ConfigError("multi-scale weights, biases, coupling and neighborhoods must all have one entry per scale");
  }
  for (std::size_t k = 0; k < s; ++k) {
    if (weights[k].rows() != heads || weights[k].cols() != width) {
      throw ConfigError("scale " + std::to_string(k + 1) + " weights must be " + std::to_string(heads) + "x" +
                        std::to_string(width));
    }
    if (biases[k].size() != heads) throw ConfigError("scale " + std::to_string(k + 1) + " bias needs one entry per head");
    if (!(coupling[k] > 0.0 && coupling[k] < 1.0)) {
      throw ConfigError("coupling for scale " + std::to_string(k + 1) + " must lie in (0, 1)");
    }
    check_neighborhoods(neighborhoods[k], tokens, "neighborhood");
  }
  if (!std::isfinite(base_coupling)) throw ConfigError("base coupling must be finite");
}

std::vector<TemperatureField> multiscale_temperature(const TemperatureField& base, const Tensor& embeddings,
                                                     const MultiScaleConfig& cfg) {
  const Index heads = base.head_count();
  const Index n = base.seq_len();
  const Matrix e = embedding_matrix(embeddings, n);
  cfg.validate(heads, n, e.cols());
  const double eps = base.eps_min();
  const auto squash_all = [eps](const Matrix& z) {
    return Matrix(z.unaryExpr([eps](double v) { return kernels::squash(v, eps); }));
  };

  std::vector<TemperatureField> out;
  out.reserve(cfg.scale_count());
  Matrix logits = cfg.weights[0] * e.transpose();
  logits.colwise() += cfg.biases[0].transpose();
  if (cfg.base_coupling != 0.0) logits += cfg.base_coupling * base.values();
  out.emplace_back(squash_all(logits), eps);

  for (std::size_t s = 1; s < cfg.scale_count(); ++s) {
    const Matrix& prev = out.back().values();
    logits = cfg.weights[s] * e.transpose();
    logits.colwise() += cfg.biases[s].transpose();
    const Neighborhoods& nb = cfg.neighborhoods[s];
    if (!nb.empty()) {
      for (Index i = 0; i < n; ++i) {
        for (Index j : nb[static_cast<std::size_t>(i)]) logits.col(i) += cfg.coupling[s] * prev.col(j);
      }
    }
    out.emplace_back(squash_all(logits), eps);
  }
  return out;
}

TemperatureField coupled_temperature(const TemperatureField& base, const Tensor& embeddings, const Adjacency& adjacency,
                                     double alpha) {
  if (!std::isfinite(alpha)) throw ConfigError("coupling coefficient must be finite");
  const Index n = base.seq_len();
  const Matrix e = embedding_matrix(embeddings, n);
  check_neighborhoods(adjacency.neighbors, n, "adjacency");
  const auto& nb = adjacency.neighbors;
  if (!adjacency.directed) {
    for (Index i = 0; i < static_cast<Index>(nb.size()); ++i) {
      for (Index j : nb[static_cast<std::size_t>(i)]) {
        const auto& back = nb[static_cast<std::size_t>(j)];
        if (std::find(back.begin(), back.end(), i) == back.end()) {
          throw ConfigError("undirected adjacency is not symmetric at (" + std::to_string(i) + ", " +
                            std::to_string(j) + ")");
        }
      }
    }
  }

  Vector norms = e.rowwise().norm();
  Matrix out = base.values();
  for (Index i = 0; i < static_cast<Index>(nb.size()); ++i) {
    double shift_i = 0.0;
    for (Index j : nb[static_cast<std::size_t>(i)]) {
      const double denom = norms(i) * norms(j);
      const double cosine = denom > 0.0 ? e.row(i).dot(e.row(j)) / denom : 0.0;
      shift_i += alpha * cosine;
    }
    out.col(i).array() += shift_i;
  }
  return TemperatureField(clamp_band(out, base.eps_min()), base.eps_min());
}

TemperatureField ngram_temperature(const TemperatureField& base, std::size_t n_gram, const std::vector<double>& weights,
                                   const NgramTransform& transform) {
  const Index n = base.seq_len();
  if (n_gram < 1) throw DimensionError("n-gram length must be at least 1");
  if (static_cast<Index>(n_gram) > n) {
    throw DimensionError("n-gram length " + std::to_string(n_gram) + " exceeds sequence length " + std::to_string(n));
  }
  if (weights.size() != n_gram) throw DimensionError("n-gram needs one weight per window position");
  const Index windows = n - static_cast<Index>(n_gram) + 1;
  const double eps = base.eps_min();
  Matrix out(base.head_count(), windows);
  for (Index i = 0; i < windows; ++i) {
    Vector z = Vector::Zero(base.head_count());
    for (std::size_t k = 0; k < n_gram; ++k) z += weights[k] * base.values().col(i + static_cast<Index>(k));
    out.col(i) = z.unaryExpr([&](double v) { return kernels::squash(transform.scale * v + transform.shift, eps); });
  }
  return TemperatureField(std::move(out), eps);
}

const ContextCategory* AdaptiveTempConfig::find(const std::string& name) const {
  for (const auto& c : categories) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

double adaptive_scale(const ContextCategory& category) { return kernels::sigmoid(category.scale_logit) + 0.5; }

AdaptiveResult adaptive_temperature(const TemperatureField& base, const std::string& context_id, const Tensor& features,
                                    const AdaptiveTempConfig& cfg) {
  if (!(cfg.max_jump >= 0.0)) throw ConfigError("max_jump must be non-negative");
  const Index n = base.seq_len();
  const ContextCategory* cat = cfg.find(context_id);
  if (cat == nullptr) {
    return {base, Matrix::Zero(1, n), 1.0, context_id != AdaptiveTempConfig::kNeutral};
  }

  Matrix jumps = Matrix::Zero(1, n);
  if (cat->jump_magnitude != 0.0) {
    if (features.rank() != 2 || static_cast<Index>(features.extent(0)) != n) {
      throw DimensionError("adaptive features must have one row per token, got " + features.shape_string());
    }
    const Matrix x = features.matrix();
    if (cat->jump_weights.size() != x.cols()) {
      throw DimensionError("category '" + cat->name + "' jump weights do not match feature width");
    }
    for (Index i = 0; i < n; ++i) {
      const double h = std::tanh(cat->jump_weights.dot(x.row(i)) + cat->jump_bias);
      jumps(0, i) = std::clamp(cat->jump_magnitude * h, -cfg.max_jump, cfg.max_jump);
    }
  }
  const double gamma = adaptive_scale(*cat);
  Matrix out = base.values() * gamma;
  out.rowwise() += jumps.row(0);
  return {TemperatureField(clamp_band(out, base.eps_min()), base.eps_min()), std::move(jumps), gamma, false};
}

InvarianceReport invariance_diagnostic(const std::vector<TemperatureField>& fields, bool enforce) {
  if (fields.size() < 2) throw ConfigError("invariance diagnostic needs at least two layers");
  InvarianceReport r;
  for (const auto& f : fields) r.layer_sums.push_back(f.sum());
  const double target = r.layer_sums.front();
  for (double s : r.layer_sums) r.max_drift = std::max(r.max_drift, std::abs(s - target));
  if (!enforce) return r;

  for (std::size_t l = 0; l < fields.size(); ++l) {
    const double eps = fields[l].eps_min();
    Matrix scaled = fields[l].values() * (target / r.layer_sums[l]);
    Matrix clamped = clamp_band(scaled, eps);
    r.clamped.push_back(clamped != scaled);
    r.renormalized.emplace_back(std::move(clamped), eps);
  }
  return r;
}

}  // namespace ttm
