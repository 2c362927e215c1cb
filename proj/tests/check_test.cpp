#include <gtest/gtest.h>

#include <set>

#include "ttm/check.hpp"
#include "ttm/numerics/tape.hpp"

using namespace ttm;

namespace {

class RegistryProperty : public ::testing::TestWithParam<std::size_t> {};

TEST_P(RegistryProperty, Holds) {
  const Property& p = property_registry()[GetParam()];
  const auto outcome = p.run(CheckContext{});
  EXPECT_TRUE(outcome.passed) << p.module << "/" << p.name << ": " << outcome.detail;
}

std::string property_label(const ::testing::TestParamInfo<std::size_t>& info) {
  const Property& p = property_registry()[info.param];
  return p.module + "_" + p.name;
}

INSTANTIATE_TEST_SUITE_P(All, RegistryProperty, ::testing::Range<std::size_t>(0, property_registry().size()),
                         property_label);

TEST(Registry, NamesUniqueAndEveryModuleCovered) {
  std::set<std::string> names, modules;
  for (const auto& p : property_registry()) {
    EXPECT_TRUE(names.insert(p.module + "/" + p.name).second) << p.name;
    modules.insert(p.module);
  }
  EXPECT_EQ(modules, (std::set<std::string>{"numerics", "temperature", "attention", "model", "dynamics", "gsot",
                                            "training"}));
}

TEST(Registry, OtherSeedsAlsoPass) {
  CheckContext ctx;
  ctx.seed = 12345;
  for (const auto& p : property_registry()) {
    if (p.name.find("gradients") != std::string::npos) continue;  // seed-independent and slow
    const auto outcome = p.run(ctx);
    EXPECT_TRUE(outcome.passed) << p.module << "/" << p.name << ": " << outcome.detail;
  }
}

TEST(GradCheckSuite, CoversEveryForwardParameter) {
  const auto entries = gradcheck_suite(kDefaultGradCheckEps, "model");
  // 2 variants x (embedding + 2 blocks x 14 tensors + output weight and bias).
  EXPECT_EQ(entries.size(), 2u * (1 + 2 * 14 + 2));
  for (const auto& e : entries) EXPECT_TRUE(e.passed()) << e.component << " " << e.max_rel_err;
}

TEST(GradCheckSuite, InjectedFaultIsNamed) {
  fault::set_faulty_backward("gelu");
  const auto entries = gradcheck_suite(kDefaultGradCheckEps, "numerics");
  fault::set_faulty_backward("");
  std::set<std::string> failing;
  for (const auto& e : entries)
    if (!e.passed()) failing.insert(e.component);
  EXPECT_EQ(failing, std::set<std::string>{"gelu"});
}

TEST(GradCheckSuite, FilterSelectsOneGroup) {
  for (const auto& e : gradcheck_suite(kDefaultGradCheckEps, "attention")) EXPECT_EQ(e.module, "attention");
  EXPECT_TRUE(gradcheck_suite(kDefaultGradCheckEps, "nothing").empty());
}

}  // namespace
