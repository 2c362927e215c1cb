#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <json.hpp>

#include "ttm/error.hpp"
#include "ttm/model.hpp"
#include "ttm/numerics.hpp"

using namespace ttm;

namespace {

ModelConfig toy(Index layers = 2, AttentionVariant variant = AttentionVariant::broadcast) {
  ModelConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.layers = layers;
  c.d_ff = 16;
  c.vocab_size = 11;
  c.d_c = 4;
  c.attention_variant = variant;
  c.seed = 5;
  return c;
}

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

Matrix ln_oracle(const Matrix& x, const RowVector& gain, const RowVector& bias) {
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    long double mu = 0, var = 0;
    for (Index j = 0; j < x.cols(); ++j) mu += x(i, j);
    mu /= x.cols();
    for (Index j = 0; j < x.cols(); ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
    var /= x.cols();
    for (Index j = 0; j < x.cols(); ++j)
      out(i, j) = static_cast<double>((x(i, j) - mu) / std::sqrt(var + kLayerNormEps) * gain(j) + bias(j));
  }
  return out;
}

Matrix gelu_oracle(const Matrix& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); });
}

// Straight-line block built from the plain attention/temperature entry points.
std::pair<Matrix, Matrix> block_oracle(const Matrix& x, const BlockParams& b, const ModelConfig& cfg) {
  const Tensor xt = Tensor::from_matrix(x);
  const auto base = attention_baseline(xt, b.attn);
  const auto field = compute_temperature(Tensor::from_matrix(base.values), b.temp);
  Matrix attn = base.values;
  if (cfg.attention_variant != AttentionVariant::baseline) {
    const auto mod = cfg.attention_variant == AttentionVariant::broadcast ? attention_temp_broadcast(xt, b.attn, field)
                                                                          : attention_temp_outer(xt, b.attn, field);
    const auto w = residual_blend(base.weights, mod.weights, cfg.blend_alpha);
    const Matrix v = x * b.attn.w_v;
    Matrix heads(x.rows(), b.attn.heads * b.attn.d_k);
    for (Index h = 0; h < b.attn.heads; ++h)
      heads.middleCols(h * b.attn.d_k, b.attn.d_k) = w[h] * v.middleCols(h * b.attn.d_k, b.attn.d_k);
    attn = heads * b.attn.w_o;
  }
  const Matrix h = ln_oracle(x + attn, b.ln1_gain, b.ln1_bias);
  Matrix pre = h * b.ffn_w1;
  pre.rowwise() += b.ffn_b1;
  Matrix ff = gelu_oracle(pre) * b.ffn_w2;
  ff.rowwise() += b.ffn_b2;
  return {ln_oracle(h + ff, b.ln2_gain, b.ln2_bias), field.values()};
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ttm_model_test_" + name);
}

std::string bytes_of(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(ModelConfig, ValidationAndJson) {
  ModelConfig c = toy();
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy();
  c.vocab_size = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy();
  c.eps_min = 0.6;
  EXPECT_THROW(c.validate(), ConfigError);

  const ModelConfig r = ModelConfig::from_json(toy().to_json());
  EXPECT_EQ(r.to_json(), toy().to_json());
  const auto j = nlohmann::json::parse(toy().to_json());
  EXPECT_EQ(j.size(), 12u);
  EXPECT_THROW(ModelConfig::from_json(R"({"d_model": 8, "bogus": 1})"), ConfigError);
  EXPECT_THROW(ModelConfig::from_json(R"({"attention_variant": "sideways"})"), ConfigError);
  EXPECT_THROW(ModelConfig::from_json("{not json"), ConfigError);
  EXPECT_EQ(ModelConfig::from_json(R"({"layers": 3})").layers, 3);
}

TEST(Block, BaselineWithZeroFfnMatchesComposition) {
  auto cfg = toy(1, AttentionVariant::baseline);
  auto params = ModelParams::init(cfg);
  auto& b = params.blocks[0];
  b.ffn_w1.setZero();
  b.ffn_b1.setZero();
  b.ffn_w2.setZero();
  b.ffn_b2.setZero();
  Rng rng(1);
  const Matrix x = rng.normal_matrix(4, 8, 1.0);
  const auto [out, field] = block_forward(Tensor::from_matrix(x), b, cfg);
  const auto attn = attention_baseline(Tensor::from_matrix(x), b.attn).values;
  const Matrix once = ln_oracle(x + attn, b.ln1_gain, b.ln1_bias);
  EXPECT_LT(max_abs(out.matrix() - ln_oracle(once, b.ln2_gain, b.ln2_bias)), 1e-12);
  EXPECT_EQ(field.head_count(), 2);
  EXPECT_EQ(field.seq_len(), 4);
}

TEST(Block, ZeroTemperatureHeadGivesHalfField) {
  auto cfg = toy(1);
  auto params = ModelParams::init(cfg);
  params.blocks[0].temp.w_t.setZero();
  params.blocks[0].temp.b_t.setZero();
  Rng rng(2);
  for (int trial = 0; trial < 3; ++trial) {
    const auto [out, field] = block_forward(Tensor::from_matrix(rng.normal_matrix(5, 8, 3.0)), params.blocks[0], cfg);
    EXPECT_TRUE((field.values().array() == 0.5).all());
  }
}

TEST(Block, SingleTokenReduction) {
  for (auto variant : {AttentionVariant::baseline, AttentionVariant::broadcast, AttentionVariant::outer}) {
    const auto cfg = toy(1, variant);
    const auto params = ModelParams::init(cfg);
    const auto& b = params.blocks[0];
    Rng rng(3);
    const Matrix x = rng.normal_matrix(1, 8, 1.0);
    const Matrix v1 = x * b.attn.w_v * b.attn.w_o;  // single token attends to itself
    const Matrix h = ln_oracle(x + v1, b.ln1_gain, b.ln1_bias);
    Matrix pre = h * b.ffn_w1;
    pre.rowwise() += b.ffn_b1;
    Matrix ff = gelu_oracle(pre) * b.ffn_w2;
    ff.rowwise() += b.ffn_b2;
    const auto [out, field] = block_forward(Tensor::from_matrix(x), b, cfg);
    EXPECT_LT(max_abs(out.matrix() - ln_oracle(h + ff, b.ln2_gain, b.ln2_bias)), 1e-12);
  }
}

TEST(Block, MatchesStraightLineOracleForEveryVariant) {
  for (auto variant : {AttentionVariant::baseline, AttentionVariant::broadcast, AttentionVariant::outer}) {
    for (double alpha : {0.0, 0.3}) {
      auto cfg = toy(1, variant);
      cfg.blend_alpha = alpha;
      auto params = ModelParams::init(cfg);
      params.blocks[0].temp.w_t *= 20.0;  // make the field vary across tokens
      Rng rng(4);
      const Matrix x = rng.normal_matrix(6, 8, 1.0);
      const auto [out, field] = block_forward(Tensor::from_matrix(x), params.blocks[0], cfg);
      const auto [o_out, o_field] = block_oracle(x, params.blocks[0], cfg);
      EXPECT_LT(max_abs(out.matrix() - o_out), 1e-10);
      EXPECT_LT(max_abs(field.values() - o_field), 1e-14);
    }
  }
}

TEST(Model, HalfFieldScalesLogitsByHalf) {
  auto cfg = toy(2);
  auto params = ModelParams::init(cfg);
  params.blocks.back().temp.w_t.setZero();
  params.blocks.back().temp.b_t.setZero();
  const std::vector<int> tokens{1, 4, 2, 9, 0};
  const auto out = model_forward(params, tokens);
  Matrix raw = out.hidden * params.out_w;
  raw.rowwise() += params.out_b;
  EXPECT_EQ(out.logits, (raw * 0.5).eval());
}

TEST(Model, StraightLineOracleOneLayer) {
  auto cfg = toy(1);
  auto params = ModelParams::init(cfg);
  params.blocks[0].temp.w_t *= 20.0;
  const std::vector<int> tokens{3, 3, 7, 1};
  Matrix x(4, 8);
  for (Index i = 0; i < 4; ++i) x.row(i) = params.tok_emb.row(tokens[i]);
  for (Index pos = 0; pos < 4; ++pos)
    for (Index i = 0; i < 8; ++i) {
      const double angle = pos / std::pow(10000.0, 2.0 * (i / 2) / 8.0);
      x(pos, i) += i % 2 ? std::cos(angle) : std::sin(angle);
    }
  const auto [hidden, field] = block_oracle(x, params.blocks[0], cfg);
  Matrix logits = hidden * params.out_w;
  logits.rowwise() += params.out_b;
  logits *= field.mean();
  EXPECT_LT(max_abs(model_forward(params, tokens).logits - logits), 1e-10);
}

TEST(Model, OutOfRangeToken) {
  const auto params = ModelParams::init(toy());
  const std::vector<int> bad{1, 11};
  EXPECT_THROW(model_forward(params, bad), DimensionError);
  const std::vector<int> neg{-1};
  EXPECT_THROW(model_forward(params, neg), DimensionError);
}

TEST(ContextProcessor, Cases) {
  const auto params = ModelParams::init(toy());
  const Tensor zero = context_processor(Tensor::zeros({3, 8}), params.ctx);
  for (double v : zero.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(zero.shape(), (Tensor::Shape{3, 4}));

  EXPECT_EQ(kernels::gelu(0.0), 0.0);
  EXPECT_NEAR(kernels::gelu(10.0), 10.0, 1e-6);

  Rng rng(5);
  auto p = params.ctx;
  p.lin_b = rng.normal_matrix(1, 8, 1.0);
  p.ln_gain = rng.normal_matrix(1, 8, 1.0);
  p.ln_bias = rng.normal_matrix(1, 8, 1.0);
  const Matrix x = rng.normal_matrix(2, 8, 1.0);
  Matrix lin = x * p.lin_w;
  lin.rowwise() += p.lin_b;
  Matrix stages(2, 24);
  stages << lin, ln_oracle(x, p.ln_gain, p.ln_bias), gelu_oracle(x);
  EXPECT_LT(max_abs(context_processor(Tensor::from_matrix(x), p).matrix() - stages * p.w_c), 1e-12);
  EXPECT_THROW(context_processor(Tensor::zeros({2, 7}), p), DimensionError);
}

TEST(Importance, Cases) {
  ImportanceParams p{Matrix::Zero(3, 1), 0.0};
  const Tensor neutral = token_importance(Tensor::zeros({4, 3}), p);
  for (double v : neutral.values()) EXPECT_EQ(v, 0.5);

  p.w = Matrix(3, 1);
  p.w << 0.5, -1.0, 2.0;
  p.b = 0.25;
  const Matrix c = (Matrix(2, 3) << 1.0, 0.0, 0.5, -1.0, 2.0, 0.0).finished();
  const Tensor imp = token_importance(Tensor::from_matrix(c), p);
  EXPECT_NEAR(imp.values()[0], 1.0 / (1.0 + std::exp(-(0.5 + 1.0 + 0.25))), 1e-15);
  EXPECT_NEAR(imp.values()[1], 1.0 / (1.0 + std::exp(-(-0.5 - 2.0 + 0.25))), 1e-15);

  double prev = 0.0;
  for (double logit : {-3.0, -1.0, 0.0, 2.0, 5.0}) {
    p.b = logit;
    const double v = token_importance(Tensor::zeros({1, 3}), p).values()[0];
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(ReasoningHead, Cases) {
  Rng rng(6);
  auto params = ModelParams::init(toy());
  const Tensor attn = Tensor::from_matrix(rng.normal_matrix(3, 8, 1.0));
  const TemperatureField f1(rng.uniform_matrix(2, 3, 0.1, 0.9), 0.01);
  const TemperatureField f2(rng.uniform_matrix(2, 3, 0.1, 0.9), 0.01);
  const Matrix p1 = reasoning_head(attn, f1, params.reasoning).matrix();
  EXPECT_LT((p1.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-9);
  EXPECT_GT(max_abs(p1 - reasoning_head(attn, f2, params.reasoning).matrix()), 1e-6);

  auto ablated = params.reasoning;
  ablated.w.bottomRows(2).setZero();
  EXPECT_EQ(reasoning_head(attn, f1, ablated).matrix(), reasoning_head(attn, f2, ablated).matrix());

  const Matrix a = attn.matrix();
  for (Index i = 0; i < 3; ++i) {
    std::vector<long double> z(11);
    long double mx = -1e300L, sum = 0.0L;
    for (Index k = 0; k < 11; ++k) {
      z[k] = params.reasoning.b(k);
      for (Index j = 0; j < 8; ++j) z[k] += a(i, j) * params.reasoning.w(j, k);
      for (Index h = 0; h < 2; ++h) z[k] += f1(h, i) * params.reasoning.w(8 + h, k);
      mx = std::max(mx, z[k]);
    }
    for (auto& v : z) sum += std::exp(v - mx);
    for (Index k = 0; k < 11; ++k) EXPECT_NEAR(p1(i, k), static_cast<double>(std::exp(z[k] - mx) / sum), 1e-14);
  }
  EXPECT_THROW(reasoning_head(Tensor::zeros({3, 7}), f1, params.reasoning), DimensionError);
}

TEST(ParameterCount, ToyHandCount) {
  ModelConfig c = toy(1);
  c.d_c = 8;
  const auto n = count_parameters(c);
  EXPECT_EQ(n.embeddings, 11u * 8 + 8 * 11 + 11);
  EXPECT_EQ(n.attention, 4u * 8 * 8);
  EXPECT_EQ(n.ffn, 8u * 16 + 16 + 16 * 8 + 8);
  EXPECT_EQ(n.temperature, 2u * 8 + 2);
  EXPECT_EQ(n.other, 4u * 8 + (64 + 8 + 8 + 8 + 24 * 8) + (8 + 1) + (10 * 11 + 11));
  EXPECT_EQ(n.total, n.embeddings + n.attention + n.ffn + n.temperature + n.other);
  EXPECT_EQ(n.total, 1183u);

  std::uint64_t allocated = 0;
  ModelParams::init(c).for_each([&](const ParamInfo& info, const Matrix& m) {
    EXPECT_EQ(m.rows(), info.rows) << info.name;
    EXPECT_EQ(m.cols(), info.cols) << info.name;
    allocated += static_cast<std::uint64_t>(m.size());
  });
  EXPECT_EQ(allocated, n.total);
}

TEST(ParameterCount, LinearInLayers) {
  const auto one = count_parameters(toy(3));
  const auto two = count_parameters(toy(6));
  EXPECT_EQ(two.attention, 2 * one.attention);
  EXPECT_EQ(two.ffn, 2 * one.ffn);
  EXPECT_EQ(two.temperature, 2 * one.temperature);
  EXPECT_EQ(two.embeddings, one.embeddings);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto params = ModelParams::init(toy());
  const auto a = temp_path("a.qsr");
  const auto b = temp_path("b.qsr");
  checkpoint_save(params, a);
  const auto loaded = checkpoint_load(a);
  checkpoint_save(loaded, b);
  EXPECT_EQ(bytes_of(a), bytes_of(b));
  EXPECT_EQ(bytes_of(a.string() + ".json"), bytes_of(b.string() + ".json"));
  EXPECT_EQ(bytes_of(a).substr(0, 4), "QSR1");
  loaded.for_each([&](const ParamInfo& info, const Matrix& m) {
    params.for_each([&](const ParamInfo& other, const Matrix& o) {
      if (other.name == info.name) EXPECT_EQ(m, o) << info.name;
    });
  });
}

TEST(Checkpoint, DistinctErrors) {
  const auto params = ModelParams::init(toy());
  const auto path = temp_path("err.qsr");
  checkpoint_save(params, path);
  const std::string good = bytes_of(path);

  std::string bad = good;
  bad[0] = 'X';
  std::ofstream(path, std::ios::binary) << bad;
  EXPECT_THROW(checkpoint_load(path), FormatError);

  bad = good;
  bad[4] = 2;
  std::ofstream(path, std::ios::binary) << bad;
  EXPECT_THROW(checkpoint_load(path), FormatError);

  std::ofstream(path, std::ios::binary) << good.substr(0, good.size() - 5);
  EXPECT_THROW(checkpoint_load(path), TruncatedError);

  std::ofstream(path, std::ios::binary) << good;
  auto other = toy();
  other.d_ff = 12;
  try {
    checkpoint_load(path, other);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("block0.ffn.w1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(checkpoint_load(path, toy(3)), ShapeError);
  EXPECT_THROW(checkpoint_save(params, ""), EmptyPathError);
}
