#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "cgl/ops.hpp"
#include "cgl/tensor.hpp"
#include "support/oracles.hpp"

namespace {

using cgl::NonFiniteError;
using cgl::Sgd;
using cgl::SgdError;
using cgl::ShapeError;
using TensorD = cgl::Tensor<double>;

TEST(Tensor, DataLengthMatchesShape) {
  const auto t = TensorD::zeros({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(cgl::numel(t.shape()), t.size());
  EXPECT_THROW(TensorD::from_data({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_EQ(cgl::to_string({2, 3}), "[2x3]");
}

TEST(Tensor, NonFiniteValuesAreRejected) {
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_THROW(TensorD::from_data({2}, {1.0, inf}), NonFiniteError);
  EXPECT_THROW(TensorD::from_data({1}, {std::nan("")}), NonFiniteError);
  const auto big = TensorD::from_data({1}, {1e200});
  EXPECT_THROW(cgl::square(cgl::scale(big, 1e200)), NonFiniteError);
}

TEST(Tensor, GradHasDataShape) {
  auto x = TensorD::from_data({3}, {1, 2, 3}, true);
  cgl::backward(cgl::sum(x));
  ASSERT_TRUE(x.has_grad());
  EXPECT_EQ(x.grad().size(), x.size());
}

TEST(Backward, SumGivesOnes) {
  auto x = TensorD::from_data({2, 2}, {1, -2, 3, 0.5}, true);
  cgl::backward(cgl::sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SumOfSquaresGivesTwiceInput) {
  auto x = TensorD::from_data({4}, {1, -2, 3, 0.5}, true);
  cgl::backward(cgl::sum(cgl::hadamard(x, x)));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(x.grad()[i], 2 * x.data()[i]);
}

TEST(Backward, RepeatedCallsAccumulate) {
  auto x = TensorD::from_data({2}, {1, 2}, true);
  const auto loss = cgl::sum(cgl::scale(x, 3.0));
  cgl::backward(loss);
  cgl::backward(loss);
  EXPECT_EQ(x.grad()[0], 6.0);
  x.zero_grad();
  cgl::backward(loss);
  EXPECT_EQ(x.grad()[1], 3.0);
}

TEST(Backward, SharedSubgraphIsCountedOnce) {
  auto x = TensorD::from_data({1}, {3}, true);
  const auto y = cgl::scale(x, 2.0);
  cgl::backward(cgl::sum(cgl::add(y, y)));  // d/dx (4x)
  EXPECT_EQ(x.grad()[0], 4.0);
}

TEST(Backward, RejectsNonScalarRoot) {
  auto x = TensorD::from_data({2}, {1, 2}, true);
  EXPECT_THROW(cgl::backward(cgl::scale(x, 2.0)), ShapeError);
}

TEST(Backward, DetachStopsGradient) {
  auto x = TensorD::from_data({2}, {1, 2}, true);
  cgl::backward(cgl::add(cgl::sum(x), cgl::sum(cgl::square(cgl::detach(x)))));
  EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Sgd, PlainStep) {
  auto p = TensorD::from_data({1}, {1.0}, true);
  p.mutable_grad()[0] = 2.0;
  Sgd<double> opt({p}, 0.1, 0.0);
  opt.step();
  EXPECT_DOUBLE_EQ(p.data()[0], 0.8);
  EXPECT_FALSE(p.has_grad() && p.grad()[0] != 0.0);
}

TEST(Sgd, ZeroLearningRateLeavesParameters) {
  auto p = TensorD::from_data({3}, {1.0, -2.0, 0.25}, true);
  Sgd<double> opt({p}, 0.0, 0.9);
  for (int i = 0; i < 3; ++i) {
    cgl::backward(cgl::sum(cgl::square(p)));
    opt.step();
  }
  EXPECT_EQ(p.data()[0], 1.0);
  EXPECT_EQ(p.data()[1], -2.0);
  EXPECT_EQ(p.data()[2], 0.25);
}

TEST(Sgd, QuadraticBowlConverges) {
  // f(p) = p^2, grad 2p, lr 0.1: p_n = 0.8^n p_0.
  auto p = TensorD::from_data({1}, {1.0}, true);
  Sgd<double> opt({p}, 0.1, 0.0);
  for (int i = 0; i < 50; ++i) {
    cgl::backward(cgl::sum(cgl::square(p)));
    opt.step();
  }
  EXPECT_LT(std::abs(p.data()[0]), 1e-3);
  EXPECT_NEAR(p.data()[0], std::pow(0.8, 50), 1e-15);
}

TEST(Sgd, MomentumAccumulatesVelocity) {
  auto p = TensorD::from_data({1}, {0.0}, true);
  Sgd<double> opt({p}, 1.0, 0.5);
  p.mutable_grad()[0] = 1.0;
  opt.step();  // v = 1, p = -1
  p.mutable_grad()[0] = 1.0;
  opt.step();  // v = 1.5, p = -2.5
  EXPECT_DOUBLE_EQ(p.data()[0], -2.5);
  EXPECT_DOUBLE_EQ(opt.velocities()[0][0], 1.5);
}

TEST(Sgd, MissingGradientIsAnError) {
  auto p = TensorD::from_data({1}, {1.0}, true);
  Sgd<double> opt({p}, 0.1, 0.0);
  EXPECT_THROW(opt.step(), SgdError);
}

TEST(Determinism, SameSeedSameOps) {
  auto run = [] {
    std::mt19937_64 rng(99);
    auto x = cgl::testing::random_tensor({2, 3, 8, 8}, rng);
    auto k = cgl::testing::random_tensor({4, 3, 3, 3}, rng, -1, 1, true);
    const auto y = cgl::relu(cgl::conv2d(x, cgl::ConvSpec<double>::same(k, 2)));
    cgl::backward(cgl::mean(cgl::square(y)));
    std::vector<double> out(y.data().begin(), y.data().end());
    out.insert(out.end(), k.grad().begin(), k.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
