#include <json.hpp>
#include <set>
#include <string>

#include "ttm/error.hpp"
#include "ttm/model.hpp"

namespace ttm {

using nlohmann::json;

std::string to_string(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::baseline: return "baseline";
    case AttentionVariant::broadcast: return "broadcast";
    case AttentionVariant::outer: return "outer";
  }
  return "?";
}

AttentionVariant parse_attention_variant(const std::string& name) {
  if (name == "baseline") return AttentionVariant::baseline;
  if (name == "broadcast") return AttentionVariant::broadcast;
  if (name == "outer") return AttentionVariant::outer;
  throw ConfigError("attention_variant must be baseline, broadcast or outer, got '" + name + "'");
}

void ModelConfig::validate() const {
  const auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(d_model > 0, "d_model must be positive");
  need(heads > 0, "heads must be positive");
  need(d_model % heads == 0, "d_model must be divisible by heads");
  need(layers >= 1, "layers must be at least 1");
  need(d_ff >= 1, "d_ff must be positive");
  need(vocab_size >= 2, "vocab_size must be at least 2");
  need(d_c >= 1, "d_c must be positive");
  need(eps_min > 0.0 && eps_min < 0.5, "eps_min must lie in (0, 0.5)");
  need(blend_alpha >= 0.0 && blend_alpha <= 1.0, "blend_alpha must lie in [0, 1]");
  need(temp_init_mean > eps_min && temp_init_mean < 1.0 - eps_min, "temp_init_mean must lie inside (eps_min, 1 - eps_min)");
  need(temp_init_std >= 0.0 && std::isfinite(temp_init_std), "temp_init_std must be non-negative");
}

std::string ModelConfig::to_json() const {
  json j = {
      {"d_model", d_model},         {"heads", heads},
      {"layers", layers},           {"d_ff", d_ff},
      {"vocab_size", vocab_size},   {"d_c", d_c},
      {"eps_min", eps_min},         {"blend_alpha", blend_alpha},
      {"attention_variant", to_string(attention_variant)},
      {"temp_init_mean", temp_init_mean}, {"temp_init_std", temp_init_std},
      {"seed", seed},
  };
  return j.dump(2);
}

namespace {

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model key '") + key + "': " + e.what());
  }
}

}  // namespace

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  static const std::set<std::string> known{"d_model", "heads",   "layers",         "d_ff",
                                           "vocab_size", "d_c",   "eps_min",        "blend_alpha",
                                           "attention_variant",   "temp_init_mean", "temp_init_std",
                                           "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown model key '" + key + "'");
  }
  ModelConfig c;
  read_key(j, "d_model", c.d_model);
  read_key(j, "heads", c.heads);
  read_key(j, "layers", c.layers);
  read_key(j, "d_ff", c.d_ff);
  read_key(j, "vocab_size", c.vocab_size);
  read_key(j, "d_c", c.d_c);
  read_key(j, "eps_min", c.eps_min);
  read_key(j, "blend_alpha", c.blend_alpha);
  std::string variant = to_string(c.attention_variant);
  read_key(j, "attention_variant", variant);
  c.attention_variant = parse_attention_variant(variant);
  read_key(j, "temp_init_mean", c.temp_init_mean);
  read_key(j, "temp_init_std", c.temp_init_std);
  read_key(j, "seed", c.seed);
  c.validate();
  return c;
}

}  // namespace ttm
