#include <gtest/gtest.h>

#include "segkit/verify.hpp"

namespace segkit {
namespace {

TEST(GradientSuite, CoversEveryBlockAndPasses) {
  const auto r = run_gradient_suite(3);
  std::vector<std::string> names;
  for (const auto& b : r.blocks) names.push_back(b.block);
  EXPECT_EQ(names, (std::vector<std::string>{"U", "V/relu", "V/prelu", "Q", "M", "AG", "DS.v1", "DS.v2", "DS.v3",
                                             "head", "stacking/NAD", "stacking/TCD"}));
  EXPECT_TRUE(r.passed) << r.max_rel_error;
  std::size_t total = 0;
  for (const auto& b : r.blocks) total += b.report.checked;
  EXPECT_EQ(total, r.checked);
}

TEST(GradientSuite, TightToleranceIsReportedAsFailure) {
  GradCheckOptions strict;
  strict.tolerance = 1e-14;
  strict.hard_limit = 1e-14;
  strict.refine_on_kink = false;
  EXPECT_FALSE(run_gradient_suite(0, strict).passed);
}

TEST(ShapeSuite, SmallWidthAllTopologies) {
  const auto r = run_shape_suite(named_topology_ids(), 32, 8, 5);
  ASSERT_EQ(r.topologies.size(), 12u);
  for (const auto& t : r.topologies) {
    EXPECT_TRUE(t.passed) << t.id << " " << t.error;
    EXPECT_EQ(t.output, (Shape{1, 32, 32, 5}));
    EXPECT_LE(t.max_sum_error, 1e-6);
  }
  EXPECT_TRUE(r.passed);
}

TEST(ShapeSuite, ErrorsAreRecordedNotThrown) {
  const auto r = run_shape_suite({"UD", "UX"}, 32, 8, 5);
  ASSERT_EQ(r.topologies.size(), 2u);
  EXPECT_TRUE(r.topologies[0].passed);
  EXPECT_FALSE(r.topologies[1].passed);
  EXPECT_FALSE(r.topologies[1].error.empty());
  EXPECT_FALSE(r.passed);
  EXPECT_FALSE(run_shape_suite({"UD"}, 40, 8, 5).passed);
}

}  // namespace
}  // namespace segkit
