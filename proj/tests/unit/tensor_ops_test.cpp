#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "segkit/gradcheck.hpp"
#include "segkit/ops.hpp"
#include "test_util.hpp"

namespace segkit {
namespace {

using testing::one_hot_random;
using testing::random_tensor;

template <typename T>
ConvKernel<T> random_kernel(int k, int in, int out, std::uint64_t seed) {
  ConvKernel<T> kernel = ConvKernel<T>::zeros(k, k, in, out);
  kernel.weights.mutable_value() = random_tensor<T>(kernel.weights.shape(), seed);
  kernel.bias.mutable_value() = random_tensor<T>(kernel.bias.shape(), seed + 1);
  return kernel;
}

// Naive same-padded convolution written directly from the definition.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                          int k, int cin, int cout) {
  Tensor<double> out(x.height(), x.width(), cout);
  const int pad = k / 2;
  for (int y = 0; y < x.height(); ++y)
    for (int xx = 0; xx < x.width(); ++xx)
      for (int co = 0; co < cout; ++co) {
        double acc = b[co];
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx)
            for (int ci = 0; ci < cin; ++ci) {
              const int iy = y + ky - pad, ix = xx + kx - pad;
              if (iy < 0 || ix < 0 || iy >= x.height() || ix >= x.width()) continue;
              acc += x.at(iy, ix, ci) * w[((ky * k + kx) * cin + ci) * cout + co];
            }
        out.at(y, xx, co) = acc;
      }
  return out;
}

TEST(Conv2d, AllOnesCountsNeighbours) {
  auto k = ConvKernel<float>::zeros(3, 3, 1, 1);
  k.weights.mutable_value().fill(1.0f);
  Var<float> x(Tensor<float>(4, 4, 1, 1.0f));
  const auto y = conv2d(x, k).value();
  EXPECT_EQ(y.at(0, 0, 0), 4.0f);
  EXPECT_EQ(y.at(3, 3, 0), 4.0f);
  EXPECT_EQ(y.at(0, 1, 0), 6.0f);
  EXPECT_EQ(y.at(2, 0, 0), 6.0f);
  EXPECT_EQ(y.at(1, 1, 0), 9.0f);
  EXPECT_EQ(y.at(2, 2, 0), 9.0f);
}

TEST(Conv2d, IdentityKernelIsExact) {
  auto x = random_tensor<float>(Shape{2, 6, 5, 3}, 11);
  auto k = ConvKernel<float>::zeros(1, 1, 3, 3);
  for (int c = 0; c < 3; ++c) k.weight(0, 0, c, c) = 1.0f;
  EXPECT_EQ(conv2d(Var<float>(x), k).value(), x);
}

TEST(Conv2d, MatchesNaiveLoops) {
  auto x = random_tensor<double>(Shape{1, 5, 5, 2}, 3);
  auto k = random_kernel<double>(3, 2, 3, 4);
  auto fast = conv2d(Var<double>(x), k).value();
  auto ref = naive_conv(x, k.weights.value(), k.bias.value(), 3, 2, 3);
  ASSERT_EQ(fast.shape(), ref.shape());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(fast[i], ref[i], 1e-6);
}

TEST(Conv2d, Errors) {
  auto k = ConvKernel<float>::zeros(3, 3, 2, 1);
  EXPECT_THROW(conv2d(Var<float>(Tensor<float>(4, 4, 3)), k), ShapeError);
  EXPECT_THROW(Tensor<float>(0, 4, 1), ShapeError);
  EXPECT_THROW(ConvKernel<float>::zeros(3, 0, 1, 1), ShapeError);
}

TEST(TransposedConv, SingleSiteScatter) {
  auto k = ConvKernel<float>::zeros(2, 2, 1, 1);
  k.weights.mutable_value().fill(1.0f);
  auto y = transposed_conv2d(Var<float>(Tensor<float>(1, 1, 1, 2.5f)), k).value();
  ASSERT_EQ(y.shape(), (Shape{1, 2, 2, 1}));
  for (float v : y.raw()) EXPECT_EQ(v, 2.5f);
}

TEST(TransposedConv, DisjointBlocksReplicate) {
  auto k = ConvKernel<float>::zeros(2, 2, 1, 1);
  k.weights.mutable_value().fill(1.0f);
  Tensor<float> x(2, 2, 1);
  x.at(0, 0, 0) = 1;
  x.at(0, 1, 0) = 2;
  x.at(1, 0, 0) = 3;
  x.at(1, 1, 0) = 4;
  auto y = transposed_conv2d(Var<float>(x), k).value();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) EXPECT_EQ(y.at(r, c, 0), x.at(r / 2, c / 2, 0));
}

// A stride-2, 2×2 convolution mapping (2H×2W×out) → (H×W×in) with the same
// weight array; the transposed convolution must be its adjoint.
Tensor<double> stride2_conv(const Tensor<double>& z, const Tensor<double>& w, int cin, int cout) {
  Tensor<double> out(z.height() / 2, z.width() / 2, cin);
  for (int i = 0; i < out.height(); ++i)
    for (int j = 0; j < out.width(); ++j)
      for (int ci = 0; ci < cin; ++ci) {
        double acc = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            for (int co = 0; co < cout; ++co)
              acc += z.at(2 * i + dy, 2 * j + dx, co) * w[((dy * 2 + dx) * cin + ci) * cout + co];
        out.at(i, j, ci) = acc;
      }
  return out;
}

TEST(TransposedConv, AdjointOfStridedConv) {
  const int cin = 2, cout = 3;
  auto u = random_tensor<double>(Shape{1, 3, 3, cin}, 21);
  auto k = ConvKernel<double>::zeros(2, 2, cin, cout);
  k.weights.mutable_value() = random_tensor<double>(k.weights.shape(), 22);
  auto got = transposed_conv2d(Var<double>(u), k).value();
  ASSERT_EQ(got.shape(), (Shape{1, 6, 6, cout}));
  for (std::size_t idx = 0; idx < got.size(); ++idx) {
    Tensor<double> e(6, 6, cout);
    e[idx] = 1.0;
    const auto col = stride2_conv(e, k.weights.value(), cin, cout);
    double expected = 0;
    for (std::size_t j = 0; j < col.size(); ++j) expected += col[j] * u[j];
    EXPECT_NEAR(got[idx], expected, 1e-12);
  }
  EXPECT_THROW(transposed_conv2d(Var<double>(Tensor<double>(2, 2, 1)), k), ShapeError);
}

TEST(MaxPool, WindowMax) {
  Tensor<float> x(2, 2, 1);
  x.at(0, 0, 0) = 1;
  x.at(0, 1, 0) = 2;
  x.at(1, 0, 0) = 3;
  x.at(1, 1, 0) = 4;
  auto y = maxpool2x2(Var<float>(x)).value();
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y[0], 4.0f);
  EXPECT_EQ(maxpool2x2(Var<float>(Tensor<float>(4, 6, 2, 7.0f))).value(), Tensor<float>(2, 3, 2, 7.0f));
  EXPECT_THROW(maxpool2x2(Var<float>(Tensor<float>(3, 4, 1))), ShapeError);
}

TEST(MaxPool, MatchesNaiveScan) {
  auto x = random_tensor<float>(Shape{1, 8, 8, 3}, 5);
  auto y = maxpool2x2(Var<float>(x)).value();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int c = 0; c < 3; ++c) {
        float m = -1e30f;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) m = std::max(m, x.at(2 * i + dy, 2 * j + dx, c));
        EXPECT_EQ(y.at(i, j, c), m);
      }
}

TEST(Upsample, BlockReplication) {
  Tensor<float> x(1, 2, 1);
  x.at(0, 0, 0) = 1;
  x.at(0, 1, 0) = 2;
  auto y = upsample_nearest2x(Var<float>(x)).value();
  ASSERT_EQ(y.shape(), (Shape{1, 2, 4, 1}));
  const float expected[2][4] = {{1, 1, 2, 2}, {1, 1, 2, 2}};
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 4; ++c) EXPECT_EQ(y.at(r, c, 0), expected[r][c]);
}

TEST(Upsample, PoolInvertsAndMultisetQuadruples) {
  auto x = random_tensor<float>(Shape{1, 3, 5, 2}, 9);
  auto up = upsample_nearest2x(Var<float>(x));
  ASSERT_EQ(up.shape(), (Shape{1, 6, 10, 2}));
  EXPECT_EQ(maxpool2x2(up).value(), x);
  std::map<float, int> before, after;
  for (float v : x.raw()) before[v] += 4;
  for (float v : up.value().raw()) after[v] += 1;
  EXPECT_EQ(before, after);
}

TEST(Activations, Definitions) {
  Tensor<float> x(1, 2, 1);
  x[0] = -1;
  x[1] = 2;
  auto r = relu(Var<float>(x)).value();
  EXPECT_EQ(r[0], 0.0f);
  EXPECT_EQ(r[1], 2.0f);
  auto p = prelu(Var<float>(x), Var<float>(Tensor<float>(1, 1, 1, 0.25f))).value();
  EXPECT_EQ(p[0], -0.25f);
  EXPECT_EQ(p[1], 2.0f);
  auto s = sigmoid(Var<float>(Tensor<float>(1, 1, 1, 0.0f))).value();
  EXPECT_EQ(s[0], 0.5f);
}

TEST(Softmax, UniformAndHighPrecisionOracle) {
  auto u = softmax_channels(Var<double>(Tensor<double>(1, 1, 3, 0.0))).value();
  for (double v : u.raw()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);

  Tensor<double> x(1, 1, 3);
  x[0] = 1;
  x[1] = 2;
  x[2] = 3;
  auto y = softmax_channels(Var<double>(x)).value();
  long double z = expl(1.0L) + expl(2.0L) + expl(3.0L);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(y[k], static_cast<double>(expl(k + 1.0L) / z), 1e-15);
}

TEST(Softmax, NormalizedOnRandomInputs) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto x = random_tensor<float>(Shape{1, 4, 4, 12}, seed, -30, 30);
    auto y = softmax_channels(Var<float>(x)).value();
    for (std::size_t p = 0; p < 16; ++p) {
      double s = 0;
      for (int c = 0; c < 12; ++c) {
        const float v = y[p * 12 + c];
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(BatchNorm, ConstantInputGivesZeros) {
  BatchNormState<float> st;
  Var<float> g(Tensor<float>(1, 1, 2, 1.0f)), b(Tensor<float>(1, 1, 2, 0.0f));
  Tensor<float> x(4, 4, 2);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (i % 2) ? 3.0f : -7.0f;
  auto y = batchnorm(Var<float>(x), g, b, st, true).value();
  for (float v : y.raw()) EXPECT_EQ(v, 0.0f);
}

TEST(BatchNorm, ShiftMovesMean) {
  BatchNormState<double> st;
  Var<double> g(Tensor<double>(1, 1, 1, 1.0)), b(Tensor<double>(1, 1, 1, 5.0));
  auto x = random_tensor<double>(Shape{3, 4, 4, 1}, 2);
  auto y = batchnorm(Var<double>(x), g, b, st, true).value();
  double m = 0;
  for (double v : y.raw()) m += v;
  EXPECT_NEAR(m / static_cast<double>(y.size()), 5.0, 1e-9);
}

TEST(BatchNorm, BatchStatisticsMatchHandComputation) {
  BatchNormState<float> st;
  const int c = 3;
  Var<float> g(Tensor<float>(1, 1, c, 1.0f)), b(Tensor<float>(1, 1, c, 0.0f));
  auto x = random_tensor<float>(Shape{4, 5, 5, c}, 8, -3, 4);
  auto y = batchnorm(Var<float>(x), g, b, st, true).value();
  for (int k = 0; k < c; ++k) {
    double mx = 0, vx = 0, my = 0, vy = 0;
    const double n = static_cast<double>(x.shape().pixels());
    for (std::size_t i = k; i < x.size(); i += c) mx += x[i];
    mx /= n;
    for (std::size_t i = k; i < x.size(); i += c) vx += (x[i] - mx) * (x[i] - mx);
    vx /= n;
    for (std::size_t i = k; i < y.size(); i += c) my += y[i];
    my /= n;
    for (std::size_t i = k; i < y.size(); i += c) vy += (y[i] - my) * (y[i] - my);
    vy /= n;
    EXPECT_NEAR(my, 0.0, 1e-5);
    EXPECT_NEAR(vy, vx / (vx + 1e-5), 1e-5);
    EXPECT_NEAR(vy, 1.0, 1e-4);
    // Running statistics moved 10% of the way from (0, 1).
    EXPECT_NEAR(st.running_mean[k], 0.1 * mx, 1e-5);
    EXPECT_NEAR(st.running_var[k], 0.9 + 0.1 * vx, 1e-5);
  }
  // Eval mode uses the running statistics.
  auto e = batchnorm(Var<float>(x), g, b, st, false).value();
  EXPECT_NEAR(e[0], (x[0] - st.running_mean[0]) / std::sqrt(st.running_var[0] + 1e-5f), 1e-5);
}

TEST(ConcatAdd, ChannelArithmeticAndOrder) {
  auto a = random_tensor<float>(Shape{1, 3, 4, 3}, 1);
  auto b = random_tensor<float>(Shape{1, 3, 4, 5}, 2);
  auto c = concat_channels<float>({Var<float>(a), Var<float>(b)}).value();
  ASSERT_EQ(c.shape(), (Shape{1, 3, 4, 8}));
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x) {
      for (int i = 0; i < 3; ++i) EXPECT_EQ(c.at(y, x, i), a.at(y, x, i));
      for (int i = 0; i < 5; ++i) EXPECT_EQ(c.at(y, x, 3 + i), b.at(y, x, i));
    }
  EXPECT_EQ(add(Var<float>(a), Var<float>(Tensor<float>(a.shape()))).value(), a);
  EXPECT_THROW(add(Var<float>(a), Var<float>(b)), ShapeError);
  EXPECT_THROW(concat_channels<float>({Var<float>(a), Var<float>(Tensor<float>(2, 4, 1))}),
               ShapeError);
}

TEST(Backward, LinearAndQuadratic) {
  auto xv = random_tensor<double>(Shape{1, 3, 3, 2}, 4);
  Var<double> x(xv, true);
  backward(sum(x));
  const auto gx_one = x.grad();
  for (double g : gx_one.raw()) EXPECT_EQ(g, 1.0);

  Var<double> x2(xv, true);
  backward(scale(sum(mul(x2, x2)), 0.5));
  EXPECT_EQ(x2.grad(), xv);
}

TEST(Backward, AccumulatesAndRejectsMissingForward) {
  Var<double> x(Tensor<double>(2, 2, 1, 3.0), true);
  auto loss = sum(x);
  backward(loss);
  backward(loss);
  const auto gx_two = x.grad();
  for (double g : gx_two.raw()) EXPECT_EQ(g, 2.0);
  EXPECT_THROW(backward(Var<double>(Tensor<double>(1, 1, 1, 1.0), true)), std::logic_error);
  EXPECT_THROW(backward(x), std::invalid_argument);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Var<double> x(Tensor<double>(2, 2, 1, 1.0), true);
  NoGradGuard g;
  auto y = sum(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Backward, CompositeNetworkMatchesFiniteDifferences) {
  // conv → batchnorm → relu → softmax → cross-entropy at double precision.
  auto x = random_tensor<double>(Shape{2, 6, 6, 2}, 31);
  auto truth = one_hot_random<double>(Shape{2, 6, 6, 4}, 32);
  auto conv1 = random_kernel<double>(3, 2, 5, 33);
  auto conv2 = random_kernel<double>(1, 5, 4, 35);
  Var<double> gamma(random_tensor<double>(Shape{1, 1, 1, 5}, 37, 0.5, 1.5), true);
  Var<double> beta(random_tensor<double>(Shape{1, 1, 1, 5}, 38), true);
  BatchNormState<double> state;
  auto loss = [&] {
    auto h = relu(batchnorm(conv2d(Var<double>(x), conv1), gamma, beta, state, true));
    return cross_entropy(softmax_channels(conv2d(h, conv2)), truth);
  };
  std::vector<NamedParam<double>> params = {{"c1.w", conv1.weights}, {"c1.b", conv1.bias},
                                            {"bn.g", gamma},          {"bn.b", beta},
                                            {"c2.w", conv2.weights},  {"c2.b", conv2.bias}};
  auto report = gradient_check(params, loss);
  EXPECT_TRUE(report.passed) << "max rel error " << report.max_rel_error << ", within "
                             << report.fraction_within();
  EXPECT_GE(report.fraction_within(), 0.99);
  EXPECT_LE(report.max_rel_error, 1e-2);
  // conv1.bias has no effect after batchnorm, so its analytic gradient is ~0.
  EXPECT_EQ(report.params.size(), 6u);
}

TEST(GradientCheck, SingleConvCrossEntropy) {
  auto x = random_tensor<double>(Shape{1, 4, 4, 3}, 41);
  auto truth = one_hot_random<double>(Shape{1, 4, 4, 3}, 42);
  auto k = random_kernel<double>(1, 3, 3, 43);
  auto loss = [&] { return cross_entropy(softmax_channels(conv2d(Var<double>(x), k)), truth); };
  auto report = gradient_check({{"w", k.weights}, {"b", k.bias}}, loss);
  EXPECT_TRUE(report.passed);
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(GradientCheck, FrozenModelIsVacuous) {
  Var<double> frozen(Tensor<double>(1, 1, 1, 2.0), false);
  auto report = gradient_check({{"frozen", frozen}}, [&] { return sum(frozen); });
  EXPECT_TRUE(report.params.empty());
  EXPECT_TRUE(report.passed);
}

TEST(CrossEntropy, SinglePixel) {
  Tensor<double> s(1, 1, 3), t(1, 1, 3);
  s[0] = 0.25;
  s[1] = 0.5;
  s[2] = 0.25;
  t[1] = 1;
  EXPECT_NEAR(cross_entropy(Var<double>(s), t).value()[0], std::log(2.0), 1e-12);
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  auto x = random_tensor<float>(Shape{1, 8, 8, 2}, 50);
  auto k = random_kernel<float>(3, 2, 4, 51);
  auto a = softmax_channels(conv2d(Var<float>(x), k)).value();
  auto b = softmax_channels(conv2d(Var<float>(x), k)).value();
  EXPECT_EQ(a, b);
}

// relu(x)^2 with a backward pass that is wrong by 10%.
Var<double> faulty_square_relu(const Var<double>& x) {
  Tensor<double> out = x.value();
  for (auto& v : out.raw()) v = v > 0 ? v * v : 0.0;
  return Var<double>::from_op(std::move(out), {x}, [](Node<double>& self) {
    auto& in = *self.parents[0];
    Tensor<double>& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += in.value[i] > 0 ? 2.2 * in.value[i] * self.grad[i] : 0.0;
  });
}

TEST(GradientCheck, StepRefinementStillRejectsWrongGradients) {
  Var<double> w(testing::random_tensor<double>(Shape{1, 3, 3, 2}, 21, 0.2, 1.0), true);
  std::vector<NamedParam<double>> params{{"w", w}};
  auto rep = gradient_check(params, [&] { return sum(faulty_square_relu(w)); });
  EXPECT_FALSE(rep.passed);
  EXPECT_GT(rep.max_rel_error, 0.05);
}

TEST(GradientCheck, KinkWithinOneStepIsResolved) {
  // 4e-4 sits within the default step of the relu kink at zero.
  Tensor<double> init(1, 1, 2);
  init[0] = 4e-4;
  init[1] = 0.7;
  Var<double> w(init, true);
  std::vector<NamedParam<double>> params{{"w", w}};
  auto rep = gradient_check(params, [&] { return sum(relu(w)); });
  EXPECT_TRUE(rep.passed);
  EXPECT_EQ(rep.refined, 1u);
  GradCheckOptions fixed;
  fixed.refine_on_kink = false;
  EXPECT_FALSE(gradient_check(params, [&] { return sum(relu(w)); }, fixed).passed);
}

}  // namespace
}  // namespace segkit
