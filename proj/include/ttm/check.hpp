#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ttm/model.hpp"
#include "ttm/numerics/grad_check.hpp"

namespace ttm {

// Invariant suites shared by the unit tests and `ttm_lab check`.

struct CheckContext {
  ModelConfig model;  // used by properties that exercise a full model
  std::uint64_t seed = 0;
};

struct PropertyOutcome {
  bool passed = true;
  std::string detail;
};

struct Property {
  std::string module;
  std::string name;
  std::function<PropertyOutcome(const CheckContext&)> run;
};

/// Every registered property, grouped by module in dependency order.
const std::vector<Property>& property_registry();

struct GradCheckEntry {
  std::string module;
  std::string component;
  double max_rel_err = 0.0;
  double threshold = 0.0;

  bool passed() const { return max_rel_err < threshold; }
};

inline constexpr double kOpGradTolerance = 1e-5;
inline constexpr double kModelGradTolerance = 1e-4;

/// The model the full-model gradient check runs on: d_model 8, 2 heads, 2 layers, vocab 11.
ModelConfig gradcheck_model_config(AttentionVariant variant);

/// Per-op checks, both modulated attention variants, the temperature head and every
/// parameter tensor of the toy model on a 5-token sequence. A non-empty `module`
/// runs only that group ("numerics", "temperature", "attention" or "model").
std::vector<GradCheckEntry> gradcheck_suite(double eps = kDefaultGradCheckEps, const std::string& module = "");

}  // namespace ttm
