#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cgl/losses.hpp"
#include "cgl/model.hpp"
#include "support/oracles.hpp"

namespace {

using cgl::ConvLayerSpec;
using cgl::Encoder;
using cgl::LabelMask;
using cgl::LossWeights;
using cgl::NormMode;
using cgl::RotationDirection;
using cgl::testing::TensorD;
using cgl::testing::random_tensor;

std::span<const LabelMask> span_of(const std::vector<LabelMask>& v) { return v; }

TEST(CrossEntropy, UniformLogitsGiveLn2) {
  std::mt19937_64 rng(1);
  const std::vector<LabelMask> y{cgl::testing::random_mask(3, 5, 0.4, rng)};
  EXPECT_NEAR(cgl::cross_entropy_loss(TensorD::zeros({2, 3, 5}), span_of(y)).item(), std::log(2.0),
              1e-15);
}

TEST(CrossEntropy, SaturatedCorrectPrediction) {
  std::mt19937_64 rng(2);
  const std::vector<LabelMask> y{cgl::testing::random_mask(4, 4, 0.5, rng)};
  std::vector<double> z(32, 0.0);
  for (std::size_t i = 0; i < 16; ++i) z[y[0].values[i] * 16 + i] = 20.0;
  EXPECT_LT(cgl::cross_entropy_loss(TensorD::from_data({2, 4, 4}, z), span_of(y)).item(), 1e-8);
}

TEST(CrossEntropy, MatchesPerPixelOracle) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 10; ++t) {
    const auto z = random_tensor({3, 2, 4, 6}, rng, -4, 4);
    std::vector<LabelMask> y;
    for (int n = 0; n < 3; ++n) y.push_back(cgl::testing::random_mask(4, 6, 0.3, rng));
    double expected = 0.0;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < 24; ++i) {
        const double z0 = z.data()[n * 48 + i], z1 = z.data()[n * 48 + 24 + i];
        const double zt = y[n].values[i] ? z1 : z0;
        expected += -(zt - std::log(std::exp(z0) + std::exp(z1)));
      }
    expected /= 72.0;
    EXPECT_NEAR(cgl::cross_entropy_loss(z, span_of(y)).item(), expected, 1e-10);
  }
}

TEST(CrossEntropy, Errors) {
  std::vector<LabelMask> y{LabelMask(4, 4)};
  EXPECT_THROW(cgl::cross_entropy_loss(TensorD::zeros({2, 4, 5}), span_of(y)), cgl::ShapeError);
  EXPECT_THROW(cgl::cross_entropy_loss(TensorD::zeros({3, 4, 4}), span_of(y)), cgl::ShapeError);
  EXPECT_THROW(cgl::cross_entropy_loss(TensorD::zeros({2, 2, 4, 4}), span_of(y)), cgl::ShapeError);
  y[0].values[3] = 2;
  EXPECT_THROW(cgl::cross_entropy_loss(TensorD::zeros({2, 4, 4}), span_of(y)), std::invalid_argument);
}

Encoder<double> pointwise_encoder(std::uint64_t seed) {
  return Encoder<double>({{3, 6, 1, 1, true, true}, {6, 5, 1, 1, true, true}, {5, 4, 1, 1, false, true}},
                         seed);
}

Encoder<double> conv3_encoder(std::uint64_t seed) {
  return Encoder<double>({{3, 4, 3, 2, true, true}, {4, 6, 3, 1, true, true}}, seed);
}

TEST(Gte, ZeroForPerPixelEncoder) {
  std::mt19937_64 rng(4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto enc = pointwise_encoder(seed);
    for (const auto& shape : {cgl::Shape{3, 12, 12}, cgl::Shape{2, 3, 8, 16}}) {
      const auto x = random_tensor(shape, rng, 0, 1);
      for (auto dir : {RotationDirection::counter_clockwise, RotationDirection::clockwise}) {
        EXPECT_LT(cgl::gte_loss(enc, x, NormMode::batch_frozen, dir).item(), 1e-10);
      }
    }
  }
}

TEST(Gte, MseOfIdenticalTensorsIsZero) {
  std::mt19937_64 rng(5);
  const auto a = random_tensor({4, 3, 3}, rng);
  EXPECT_EQ(cgl::mse(a, a).item(), 0.0);
  EXPECT_THROW(cgl::mse(a, random_tensor({3, 4, 3}, rng)), cgl::ShapeError);
}

// Quarter turn counter-clockwise of an h x w plane: out(i, j) = in(j, w - 1 - i).
std::vector<double> rotate_ccw(std::span<const double> in, std::size_t planes, std::size_t h,
                               std::size_t w) {
  std::vector<double> out(in.size());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < w; ++i)
      for (std::size_t j = 0; j < h; ++j) out[p * h * w + i * h + j] = in[p * h * w + j * w + (w - 1 - i)];
  return out;
}

TEST(Gte, MatchesBruteForceOnConvEncoder) {
  std::mt19937_64 rng(6);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto enc = conv3_encoder(seed);
    const auto x = random_tensor({3, 16, 12}, rng, 0, 1);
    const auto xr = TensorD::from_data({3, 12, 16}, rotate_ccw(x.data(), 3, 16, 12));
    const auto fe = enc.forward(x, NormMode::batch_frozen);
    const auto fe_t = enc.forward(xr, NormMode::batch_frozen);
    const auto fe_T = rotate_ccw(fe.data(), fe.dim(0), fe.dim(1), fe.dim(2));
    ASSERT_EQ(fe_t.size(), fe_T.size());
    double expected = 0.0;
    for (std::size_t i = 0; i < fe_T.size(); ++i) {
      const double diff = fe_t.data()[i] - fe_T[i];
      expected += diff * diff;
    }
    expected /= static_cast<double>(fe_T.size());
    EXPECT_GT(expected, 0.0);
    EXPECT_NEAR(cgl::gte_loss(enc, x, NormMode::batch_frozen).item(), expected, 1e-10);
  }
}

TEST(Gte, DirectionRelabelingGivesEqualLoss) {
  // Swapping the global rotation direction is the same loss seen from the
  // rotated frame: L_cw(x) = L_ccw(rot_cw(x)).
  std::mt19937_64 rng(7);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto enc = conv3_encoder(seed);
    const auto x = random_tensor({2, 3, 12, 12}, rng, 0, 1);
    const auto x_cw = cgl::rotate_quarter(x, RotationDirection::clockwise);
    const double cw = cgl::gte_loss(enc, x, NormMode::batch_frozen, RotationDirection::clockwise).item();
    const double ccw = cgl::gte_loss(enc, x_cw, NormMode::batch_frozen).item();
    EXPECT_NEAR(cw, ccw, 1e-12 * std::max(1.0, std::abs(cw)));
  }
}

TEST(Gte, PrecomputedEncodingIsUsed) {
  std::mt19937_64 rng(8);
  auto enc = conv3_encoder(1);
  const auto x = random_tensor({3, 8, 8}, rng, 0, 1);
  const auto fe = enc.forward(x, NormMode::batch_frozen);
  EXPECT_EQ(cgl::gte_loss(enc, x, NormMode::batch_frozen, RotationDirection::counter_clockwise, &fe).item(),
            cgl::gte_loss(enc, x, NormMode::batch_frozen).item());
}

TEST(Gte, RotateQuarterDirectionsAreInverse) {
  std::mt19937_64 rng(9);
  const auto x = random_tensor({2, 3, 5}, rng);
  const auto back = cgl::rotate_quarter(cgl::rotate_quarter(x, RotationDirection::clockwise),
                                        RotationDirection::counter_clockwise);
  EXPECT_EQ(std::vector<double>(back.data().begin(), back.data().end()),
            std::vector<double>(x.data().begin(), x.data().end()));
}

TEST(Ivr, ZeroForConstantPlanes) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int t = 0; t < 10; ++t) {
    std::vector<double> z(2 * 25), f(3 * 25);
    const double z0 = u(rng), z1 = u(rng);
    for (std::size_t i = 0; i < 25; ++i) z[i] = z0, z[25 + i] = z1;
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = u(rng);
      for (std::size_t i = 0; i < 25; ++i) f[c * 25 + i] = v;
    }
    EXPECT_LT(cgl::ivr_loss(TensorD::from_data({2, 5, 5}, z), TensorD::from_data({3, 5, 5}, f)).item(),
              1e-12);
  }
}

TEST(Ivr, AnnihilatedClassContributesNothing) {
  std::mt19937_64 rng(11);
  const auto f = random_tensor({3, 4, 4}, rng);
  // Class 1 saturated everywhere: p[0] underflows to 0, p[1] == 1.
  std::vector<double> z(32, 0.0);
  for (std::size_t i = 16; i < 32; ++i) z[i] = 800.0;
  const double loss = cgl::ivr_loss(TensorD::from_data({2, 4, 4}, z), f).item();
  double expected = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < 16; ++i) mean += f.data()[c * 16 + i];
    mean /= 16;
    for (std::size_t i = 0; i < 16; ++i) sq += std::pow(f.data()[c * 16 + i] - mean, 2);
    expected += sq / 16;
  }
  EXPECT_NEAR(loss, expected / 3, 1e-12);
}

TEST(Ivr, HandComputedTwoChannelCase) {
  // p1 = (0.5, 0.75, 0.25, 0.5) from logits (0,0), (0,ln3), (ln3,0), (0,0).
  const double l3 = std::log(3.0);
  const auto z = TensorD::from_data({2, 2, 2}, {0, 0, l3, 0, 0, l3, 0, 0});
  const auto f = TensorD::from_data({2, 2, 2}, {1, 2, 3, 4, 2, 0, -2, 4});
  // var(p0 F0) = 0.66796875, var(p0 F1) = 1.671875,
  // var(p1 F0) = 0.35546875, var(p1 F1) = 0.921875.
  EXPECT_NEAR(cgl::ivr_loss(z, f).item(), 1.80859375, 1e-10);
  cgl::IvrOptions none;
  none.normalization = cgl::IvrNormalization::none;
  EXPECT_NEAR(cgl::ivr_loss(z, f, none).item(), 3.6171875, 1e-10);
  // A batch of two copies averages to the same value.
  std::vector<double> zz(z.data().begin(), z.data().end()), ff(f.data().begin(), f.data().end());
  zz.insert(zz.end(), z.data().begin(), z.data().end());
  ff.insert(ff.end(), f.data().begin(), f.data().end());
  EXPECT_NEAR(cgl::ivr_loss(TensorD::from_data({2, 2, 2, 2}, zz), TensorD::from_data({2, 2, 2, 2}, ff)).item(),
              1.80859375, 1e-10);
}

TEST(Ivr, DetachedProbabilitiesBlockLogitGradient) {
  std::mt19937_64 rng(12);
  auto z = random_tensor({2, 3, 3}, rng, -1, 1, true);
  auto f = random_tensor({4, 3, 3}, rng, -1, 1, true);
  cgl::IvrOptions opt;
  opt.detach_probabilities = true;
  const auto a = cgl::ivr_loss(z, f, opt);
  EXPECT_EQ(a.item(), cgl::ivr_loss(z, f).item());
  cgl::backward(a);
  EXPECT_TRUE(!z.has_grad() || std::all_of(z.grad().begin(), z.grad().end(), [](double g) { return g == 0.0; }));
  EXPECT_TRUE(f.has_grad());
}

TEST(Ivr, ShapeErrors) {
  EXPECT_THROW(cgl::ivr_loss(TensorD::zeros({2, 3, 3}), TensorD::zeros({4, 3, 4})), cgl::ShapeError);
  EXPECT_THROW(cgl::ivr_loss(TensorD::zeros({3, 3, 3}), TensorD::zeros({4, 3, 3})), cgl::ShapeError);
}

TEST(Losses, NonNegativeOnRandomInputs) {
  std::mt19937_64 rng(13);
  auto enc = conv3_encoder(3);
  for (int t = 0; t < 20; ++t) {
    const auto z = random_tensor({2, 4, 4}, rng, -5, 5);
    const std::vector<LabelMask> y{cgl::testing::random_mask(4, 4, 0.5, rng)};
    EXPECT_GE(cgl::cross_entropy_loss(z, span_of(y)).item(), 0.0);
    EXPECT_GE(cgl::ivr_loss(z, random_tensor({3, 4, 4}, rng, -5, 5)).item(), 0.0);
    EXPECT_GE(cgl::gte_loss(enc, random_tensor({3, 8, 8}, rng, 0, 1), NormMode::batch_frozen).item(), 0.0);
  }
}

TEST(TotalLoss, Examples) {
  EXPECT_NEAR(cgl::total_loss(0.5, 0.4, 0.2, 0.1, LossWeights{}).total, 0.93, 1e-15);
  EXPECT_EQ(cgl::total_loss(0.5, 0.4, 0.2, 0.1, LossWeights{1, 0, 0, 0}).total, 0.5);
  EXPECT_EQ(cgl::total_loss(0, 0, 0, 0, LossWeights{}).total, 0.0);
  const auto r = cgl::total_loss(0.5, 0.4, 0.2, 0.1, LossWeights{2, 1, 0.5, 3});
  EXPECT_EQ(r.l_cgl, 0.5);
  EXPECT_EQ(r.l_ivr, 0.1);
  EXPECT_NEAR(r.total, 2 * 0.5 + 0.4 + 0.5 * 0.2 + 3 * 0.1, 1e-12);
  EXPECT_THROW(cgl::total_loss(1, 1, 1, 1, LossWeights{1, -0.1, 0, 0}), std::invalid_argument);
  EXPECT_THROW(LossWeights({0, 1, 1, 1}).validate(), std::invalid_argument);
  EXPECT_THROW(LossWeights({1, 1, NAN, 1}).validate(), std::invalid_argument);
}

TEST(TotalLoss, DecompositionOnRandomComponents) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(0, 3);
  for (int t = 0; t < 100; ++t) {
    const LossWeights w{u(rng) + 0.01, u(rng), u(rng), u(rng)};
    const auto r = cgl::total_loss(u(rng), u(rng), u(rng), u(rng), w);
    EXPECT_NEAR(r.total, w.alpha * r.l_cgl + w.beta * r.l_dflb + w.gamma * r.l_gte + w.delta * r.l_ivr, 1e-12);
  }
}

TEST(TotalLoss, WeightedTotalSkipsUndefinedTerms) {
  const auto a = TensorD::scalar(0.5, true), b = TensorD::scalar(0.4, true);
  const auto t = cgl::weighted_total(a, b, TensorD{}, TensorD::scalar(0.1), LossWeights{});
  EXPECT_NEAR(t.item(), 0.5 + 0.4 + 0.01, 1e-15);
  cgl::backward(t);
  EXPECT_EQ(a.grad()[0], 1.0);
  EXPECT_EQ(b.grad()[0], 1.0);
}

}  // namespace
