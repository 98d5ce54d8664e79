#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cgl/imaging.hpp"
#include "cgl/ops.hpp"
#include "support/oracles.hpp"

namespace {

using cgl::ConvSpec;
using cgl::ShapeError;
using cgl::testing::naive_conv2d;
using cgl::testing::random_tensor;
using TensorD = cgl::Tensor<double>;

TEST(Conv2d, SobelOnThreeByThree) {
  const auto x = TensorD::from_data({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  std::vector<double> g;
  for (auto& row : cgl::kSobel)
    for (double v : row) g.push_back(v);
  const auto y = cgl::conv2d(x, ConvSpec<double>{TensorD::from_data({1, 1, 3, 3}, g), 1, 0});
  ASSERT_EQ(y.shape(), (cgl::Shape{1, 1, 1}));
  EXPECT_EQ(y.data()[0], 8.0);
}

TEST(Conv2d, IdentityKernel) {
  std::mt19937_64 rng(1);
  const auto x = random_tensor({1, 5, 7}, rng);
  const auto y = cgl::conv2d(x, ConvSpec<double>{TensorD::from_data({1, 1, 1, 1}, {1.0}), 1, 0});
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(2024);
  const auto x = random_tensor({2, 8, 8}, rng);
  const auto k = random_tensor({3, 2, 3, 3}, rng);
  const auto y = cgl::conv2d(x, ConvSpec<double>{k, 1, 0});
  std::size_t oh = 0, ow = 0;
  const auto ref = naive_conv2d({x.data().begin(), x.data().end()}, 2, 8, 8,
                                {k.data().begin(), k.data().end()}, 3, 3, 3, 1, 0, oh, ow);
  ASSERT_EQ(y.shape(), (cgl::Shape{3, oh, ow}));
  for (std::size_t i = 0; i < ref.size(); ++i) {
    EXPECT_LE(cgl::testing::relative_error(y.data()[i], ref[i], 1e-300), 1e-12);
  }
}

TEST(Conv2d, MatchesOracleOverRandomGeometries) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> ch(1, 4), ext(3, 12), odd(0, 2), st(1, 3), pd(0, 2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t ci = ch(rng), co = ch(rng), h = ext(rng), w = ext(rng);
    const std::size_t kk = 2 * odd(rng) + 1, stride = st(rng), pad = pd(rng);
    if (h + 2 * pad < kk || w + 2 * pad < kk) continue;
    const bool batched = trial % 3 == 0;
    const std::size_t n = batched ? 2 : 1;
    const auto x = batched ? random_tensor({n, ci, h, w}, rng) : random_tensor({ci, h, w}, rng);
    const auto k = random_tensor({co, ci, kk, kk}, rng);
    const auto y = cgl::conv2d(x, ConvSpec<double>{k, stride, pad});
    for (std::size_t b = 0; b < n; ++b) {
      std::vector<double> xb(x.data().begin() + b * ci * h * w,
                             x.data().begin() + (b + 1) * ci * h * w);
      std::size_t oh = 0, ow = 0;
      const auto ref = naive_conv2d(xb, ci, h, w, {k.data().begin(), k.data().end()}, co, kk, kk,
                                    stride, pad, oh, ow);
      ASSERT_EQ(y.size(), n * ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) {
        ASSERT_LE(cgl::testing::relative_error(y.data()[b * ref.size() + i], ref[i], 1e-300),
                  1e-12)
            << "trial " << trial;
      }
    }
  }
}

TEST(Conv2d, ShapeErrors) {
  std::mt19937_64 rng(3);
  const auto x = random_tensor({2, 6, 6}, rng);
  EXPECT_THROW(cgl::conv2d(x, ConvSpec<double>{random_tensor({1, 3, 3, 3}, rng), 1, 1}),
               ShapeError);
  // (6 + 2 - 3) is not divisible by 2.
  EXPECT_THROW(cgl::conv2d(x, ConvSpec<double>{random_tensor({1, 2, 3, 3}, rng), 2, 1, true}),
               ShapeError);
  EXPECT_NO_THROW(cgl::conv2d(x, ConvSpec<double>{random_tensor({1, 2, 3, 3}, rng), 2, 1}));
  EXPECT_THROW(ConvSpec<double>::same(random_tensor({1, 2, 2, 2}, rng)), ShapeError);
}

TEST(Pointwise, Definitions) {
  const auto x = TensorD::from_data({3}, {-3.0, 0.0, 3.0});
  const auto s = cgl::sigmoid(x);
  EXPECT_EQ(s.data()[1], 0.5);
  EXPECT_NEAR(s.data()[0] + s.data()[2], 1.0, 1e-15);
  const auto r = cgl::relu(x);
  EXPECT_EQ(r.data()[0], 0.0);
  EXPECT_EQ(r.data()[2], 3.0);
}

TEST(BatchNorm, ConstantChannelGivesShift) {
  cgl::BatchNormState<double> st(2);
  st.shift.mutable_data()[0] = 0.3;
  st.shift.mutable_data()[1] = -1.5;
  const auto x = TensorD::from_data({2, 2, 2}, {4, 4, 4, 4, -7, -7, -7, -7});
  const auto y = cgl::batch_norm(x, st, true);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y.data()[i], 0.3);
  for (std::size_t i = 4; i < 8; ++i) EXPECT_EQ(y.data()[i], -1.5);
}

TEST(BatchNorm, StandardisedInputIsNearlyUnchanged) {
  cgl::BatchNormState<double> st(1);
  const auto x = TensorD::from_data({1, 2, 2}, {-1, 1, -1, 1});  // mean 0, variance 1
  const auto y = cgl::batch_norm(x, st, true);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(y.data()[i], x.data()[i], 1e-5);
    EXPECT_DOUBLE_EQ(y.data()[i], x.data()[i] / std::sqrt(1.0 + 1e-5));
  }
}

TEST(BatchNorm, RunningStatisticsAndEvalMode) {
  cgl::BatchNormState<double> st(1);
  const auto x = TensorD::from_data({2, 1, 1, 2}, {1, 3, 5, 7});  // mean 4, variance 5
  cgl::batch_norm(x, st, true);
  EXPECT_DOUBLE_EQ(st.running_mean[0], 0.4);
  EXPECT_DOUBLE_EQ(st.running_var[0], 0.9 + 0.5);
  cgl::batch_norm(x, st, true, false);
  EXPECT_DOUBLE_EQ(st.running_mean[0], 0.4);
  const auto y = cgl::batch_norm(x, st, false);
  EXPECT_DOUBLE_EQ(y.data()[0], (1 - 0.4) / std::sqrt(1.4 + 1e-5));
  EXPECT_DOUBLE_EQ(st.running_mean[0], 0.4);
  EXPECT_THROW(cgl::batch_norm(TensorD::zeros({2, 1, 1}), st, true), ShapeError);
}

TEST(Softmax, EqualLogitsAndSaturation) {
  const auto p = cgl::softmax_classes(TensorD::from_data({2, 1, 2}, {0.3, 1000, 0.3, -1000}));
  EXPECT_EQ(p.data()[0], 0.5);
  EXPECT_EQ(p.data()[2], 0.5);
  EXPECT_EQ(p.data()[1], 1.0);
  EXPECT_EQ(p.data()[3], 0.0);
}

TEST(Softmax, ColumnsSumToOne) {
  std::mt19937_64 rng(8);
  const auto z = random_tensor({3, 2, 5, 6}, rng, -20, 20);
  const auto p = cgl::softmax_classes(z);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < 30; ++i) {
      const double a = p.data()[n * 60 + i], b = p.data()[n * 60 + 30 + i];
      EXPECT_GE(a, 0.0);
      EXPECT_GE(b, 0.0);
      EXPECT_NEAR(a + b, 1.0, 1e-6);
    }
}

TEST(Hadamard, IdentityAnnihilatorAndBroadcast) {
  std::mt19937_64 rng(4);
  const auto a = random_tensor({3, 2, 2}, rng);
  const auto ones = cgl::hadamard(a, TensorD::full({3, 2, 2}, 1.0));
  const auto zeros = cgl::hadamard(a, TensorD::zeros({3, 2, 2}));
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(ones.data()[i], a.data()[i]);
    EXPECT_EQ(zeros.data()[i], 0.0);
  }
  const auto plane = TensorD::from_data({1, 2, 2}, {1, 2, 3, 4});
  const auto bc = cgl::hadamard(a, plane);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(bc.data()[c * 4 + i], a.data()[c * 4 + i] * (i + 1));
  EXPECT_THROW(cgl::hadamard(a, TensorD::zeros({2, 2, 2})), ShapeError);
}

TEST(Hadamard, GradientIsOtherOperand) {
  std::mt19937_64 rng(5);
  auto a = random_tensor({2, 3, 3}, rng, -1, 1, true);
  const auto b = random_tensor({2, 3, 3}, rng);
  cgl::backward(cgl::sum(cgl::hadamard(a, b)));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.grad()[i], b.data()[i]);
}

TEST(Rotate90, QuarterTurnCounterClockwise) {
  const auto r = cgl::rotate90(TensorD::from_data({1, 2, 2}, {1, 2, 3, 4}));  // [[a,b],[c,d]]
  EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()),
            (std::vector<double>{2, 4, 1, 3}));  // [[b,d],[a,c]]
}

TEST(Rotate90, NonSquarePlanesSwapExtents) {
  std::mt19937_64 rng(6);
  const auto x = random_tensor({2, 3, 4, 5}, rng);
  const auto r = cgl::rotate90(x);
  ASSERT_EQ(r.shape(), (cgl::Shape{2, 3, 5, 4}));
  // out[c, W-1-x, y] = in[c, y, x]
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t xx = 0; xx < 5; ++xx)
      EXPECT_EQ(r.data()[(1 * 3 + 2) * 20 + (4 - xx) * 4 + y], x.data()[(1 * 3 + 2) * 20 + y * 5 + xx]);
}

TEST(Rotate90, FourTurnsAreIdentityAndSumIsPreserved) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 10; ++t) {
    const auto x = random_tensor({3, static_cast<std::size_t>(4 + t % 3), 6}, rng);
    const auto once = cgl::rotate90(x);
    const auto four = cgl::rotate90(cgl::rotate90(cgl::rotate90(once)));
    ASSERT_EQ(four.shape(), x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(four.data()[i], x.data()[i]);
    std::vector<double> a(x.data().begin(), x.data().end()), b(once.data().begin(), once.data().end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
  }
}

TEST(SpatialVariance, Cases) {
  EXPECT_EQ(cgl::spatial_variance(TensorD::full({3, 3}, 2.5)).item(), 0.0);
  EXPECT_EQ(cgl::spatial_variance(TensorD::from_data({1, 2}, {0, 2})).item(), 1.0);
  EXPECT_EQ(cgl::spatial_variance(TensorD::from_data({1, 1}, {7})).item(), 0.0);
  const auto v = cgl::spatial_variance(TensorD::from_data({2, 1, 2}, {0, 2, 1, 1}));
  ASSERT_EQ(v.shape(), (cgl::Shape{2}));
  EXPECT_EQ(v.data()[0], 1.0);
  EXPECT_EQ(v.data()[1], 0.0);
}

TEST(SliceAndStack, RoundTrip) {
  std::mt19937_64 rng(9);
  const auto a = random_tensor({2, 3, 3}, rng), b = random_tensor({2, 3, 3}, rng);
  const auto s = cgl::stack<double>({a, b});
  ASSERT_EQ(s.shape(), (cgl::Shape{2, 2, 3, 3}));
  const auto c1 = cgl::slice_channel(s, 1);
  ASSERT_EQ(c1.shape(), (cgl::Shape{2, 1, 3, 3}));
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(c1.data()[i], a.data()[9 + i]);
    EXPECT_EQ(c1.data()[9 + i], b.data()[9 + i]);
  }
  EXPECT_THROW(cgl::stack<double>({a, TensorD::zeros({1, 3, 3})}), ShapeError);
}

TEST(BiasAdd, PerChannel) {
  const auto y = cgl::bias_add(TensorD::zeros({2, 1, 2}), TensorD::from_data({2}, {1.5, -2}));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()),
            (std::vector<double>{1.5, 1.5, -2, -2}));
}

}  // namespace
