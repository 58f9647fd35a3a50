#include <gtest/gtest.h>

#include "segkit/topology.hpp"
#include "test_util.hpp"

namespace segkit {
namespace {

using testing::random_tensor;

TEST(TopologySpec, NamedExpansions) {
  auto umd = named_topology("UMD");
  EXPECT_TRUE(umd.multi_kernel && umd.ds_v3);
  EXPECT_FALSE(umd.attention || umd.ds_v1 || umd.ds_v2);
  EXPECT_EQ(umd.conv_kind, ConvKind::U);

  auto udd2 = named_topology("UDD2");
  EXPECT_TRUE(udd2.ds_v3 && udd2.ds_v2);
  EXPECT_FALSE(udd2.ds_v1 || udd2.multi_kernel || udd2.attention);

  auto uvdd = named_topology("UVDD");
  EXPECT_EQ(uvdd.conv_kind, ConvKind::V);
  EXPECT_EQ(uvdd.activation, Activation::prelu);
  EXPECT_TRUE(uvdd.ds_v1 && uvdd.ds_v3);
  EXPECT_EQ(named_topology("UVMD").activation, Activation::relu);
  EXPECT_EQ(named_topology("UQD").conv_kind, ConvKind::Q);
  EXPECT_TRUE(named_topology("UAMD").attention);
  EXPECT_EQ(named_topology_ids().size(), 12u);
  EXPECT_THROW(named_topology("FCN"), std::invalid_argument);
}

TEST(TopologySpec, InvalidCombinations) {
  TopologySpec s;
  s.attention = s.ds_v1 = true;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  TopologySpec mk;
  mk.multi_kernel = true;
  mk.m = 6;
  EXPECT_THROW(validate_shapes(mk), std::invalid_argument);
  EXPECT_THROW((Network<float>(mk, 1)), std::invalid_argument);
}

TEST(ValidateShapes, ChannelPlans) {
  auto plan = validate_shapes(named_topology("U1", 64));
  const int expected[] = {64, 128, 256, 512, 1024};
  for (int l = 1; l <= 5; ++l) {
    const auto* r = plan.find("enc" + std::to_string(l));
    ASSERT_NE(r, nullptr);
    EXPECT_EQ(r->channels, expected[l - 1]);
    EXPECT_EQ(r->height, 64 >> (l - 1));
  }
  auto q = validate_shapes(named_topology("UQD", 64));
  for (const auto& r : q.rows)
    if (r.tensor.rfind("enc", 0) == 0 || r.tensor.rfind("dec", 0) == 0 && r.tensor.size() == 4)
      EXPECT_EQ(r.channels, 64) << r.tensor;
  EXPECT_THROW(validate_shapes(named_topology("U1"), 40, 64), ShapeError);
}

TEST(Network, U1ForwardTraceShapes) {
  Network<float> net(named_topology("U1", 8), 3);
  auto x = random_tensor<float>(Shape{1, 64, 64, 2}, 4);
  NoGradGuard g;
  auto tr = net.forward(Var<float>(x));
  const int sizes[] = {64, 32, 16, 8, 4};
  for (int l = 0; l < 5; ++l) EXPECT_EQ(tr.encoder[l].shape().h, sizes[l]);
  EXPECT_EQ(tr.scores.shape(), (Shape{1, 64, 64, 12}));
  check_trace(tr, validate_shapes(net.spec(), 64, 64));
  EXPECT_THROW(net.forward(Var<float>(Tensor<float>(40, 48, 2))), ShapeError);
  EXPECT_THROW(net.forward(Var<float>(Tensor<float>(32, 32, 3))), ShapeError);
}

TEST(Network, AllNamedVariantsProduceNormalizedScores) {
  auto x = random_tensor<float>(Shape{1, 32, 32, 2}, 5);
  for (const auto& id : named_topology_ids()) {
    Network<float> net(named_topology(id, 8), 7);
    NoGradGuard g;
    auto tr = net.forward(Var<float>(x));
    check_trace(tr, validate_shapes(net.spec(), 32, 32));
    const auto& s = tr.scores.value();
    ASSERT_EQ(s.shape(), (Shape{1, 32, 32, 12})) << id;
    for (std::size_t p = 0; p < s.shape().pixels(); ++p) {
      double total = 0;
      for (int c = 0; c < 12; ++c) total += s[p * 12 + c];
      ASSERT_NEAR(total, 1.0, 1e-6) << id;
    }
    EXPECT_EQ(tr.supervised.has_value(), net.spec().ds_v3) << id;
  }
}

TEST(Network, SeedDeterminism) {
  Network<float> a(named_topology("UAMD", 8), 7), b(named_topology("UAMD", 8), 7),
      c(named_topology("UAMD", 8), 8);
  ASSERT_EQ(a.registry().params.size(), b.registry().params.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.registry().params.size(); ++i) {
    EXPECT_EQ(a.registry().params[i].name, b.registry().params[i].name);
    EXPECT_EQ(a.registry().params[i].var.value(), b.registry().params[i].var.value());
    any_diff = any_diff || !(a.registry().params[i].var.value() == c.registry().params[i].var.value());
  }
  EXPECT_TRUE(any_diff);
  auto x = random_tensor<float>(Shape{1, 32, 32, 2}, 1);
  EXPECT_EQ(a.predict(x), b.predict(x));
}

TEST(Network, ParameterCountGrowsWithAddedBlocks) {
  const int m = 8;
  const auto base = Network<float>(named_topology("U1", m), 1).parameter_count();
  const auto ua = Network<float>(named_topology("UA", m), 1).parameter_count();
  const auto ud = Network<float>(named_topology("UD", m), 1).parameter_count();
  const auto umd = Network<float>(named_topology("UMD", m), 1).parameter_count();
  const auto uamd = Network<float>(named_topology("UAMD", m), 1).parameter_count();
  EXPECT_GT(ua, base);
  EXPECT_GT(ud, base);
  EXPECT_GT(umd, ud);
  EXPECT_GT(uamd, umd);
  // DS.v1 narrows the decoder inputs to m channels, so it shrinks the network.
  const auto udd = Network<float>(named_topology("UDD", m), 1).parameter_count();
  EXPECT_LT(udd, ud);
}

TEST(Network, OpenAttentionGatesReproduceBaseUNet) {
  const int m = 8;
  Network<float> base(named_topology("U1", m), 11);
  Network<float> gated(named_topology("UA", m), 12);
  copy_shared_parameters(base.registry(), gated.registry());
  for (auto& p : gated.registry().params) {
    if (p.name.rfind("ag", 0) != 0) continue;
    Var<float> v = p.var;
    const bool psi_bias = p.name.find(".psi.bias") != std::string::npos;
    const bool psi_weight = p.name.find(".psi.weight") != std::string::npos;
    if (psi_bias) v.mutable_value().fill(60.0f);
    if (psi_weight) v.mutable_value().fill(0.0f);
  }
  auto x = random_tensor<float>(Shape{1, 32, 32, 2}, 13);
  EXPECT_EQ(base.predict(x), gated.predict(x));
}

TEST(Network, TrainModeBackwardReachesEveryParameter) {
  Network<double> net(named_topology("UAMD", 4, 3), 2);
  auto x = random_tensor<double>(Shape{2, 16, 16, 2}, 3);
  auto truth = testing::one_hot_random<double>(Shape{2, 16, 16, 3}, 4);
  backward(cross_entropy(net.forward(Var<double>(x), {true}).scores, truth));
  std::size_t with_grad = 0;
  for (const auto& p : net.registry().params) with_grad += p.var.has_grad();
  EXPECT_EQ(with_grad, net.registry().params.size());
}

}  // namespace
}  // namespace segkit
