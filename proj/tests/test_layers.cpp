#include <chrono>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "latgen/layers.hpp"
#include "oracles/conv_oracle.hpp"

using namespace latgen;

namespace {

struct ConvCase {
  TransposedConv layer;
  Tensor input;
  oracle::Volume x;
  oracle::Kernel w;
};

// Random layer plus matching nested-vector copies for the oracle. Weights are
// stored as float, so the oracle sees the float-rounded values.
ConvCase random_case(std::mt19937_64& rng, bool with_bias) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  std::uniform_real_distribution<double> value(-1.0, 1.0);

  ConvCase c;
  const int cin = pick(1, 4), cout = pick(1, 4), kh = pick(1, 5), kw = pick(1, 5);
  const int stride = pick(1, 3);
  int pad = pick(0, 2);
  const int h = pick(1, 8), wd = pick(1, 8);
  // Keep the output extent positive.
  while (pad > 0 && ((h - 1) * stride - 2 * pad + kh <= 0 || (wd - 1) * stride - 2 * pad + kw <= 0)) --pad;
  const int out_pad = pick(0, stride - 1);

  c.layer.in_channels = cin;
  c.layer.out_channels = cout;
  c.layer.kernel_h = kh;
  c.layer.kernel_w = kw;
  c.layer.stride = stride;
  c.layer.padding = pad;
  c.layer.output_padding = out_pad;
  c.w = oracle::Kernel(cin, std::vector<std::vector<std::vector<double>>>(
                                cout, std::vector<std::vector<double>>(kh, std::vector<double>(kw))));
  for (int a = 0; a < cin; ++a)
    for (int o = 0; o < cout; ++o)
      for (int i = 0; i < kh; ++i)
        for (int j = 0; j < kw; ++j) {
          const float v = static_cast<float>(value(rng));
          c.layer.weights.push_back(v);
          c.w[a][o][i][j] = v;
        }
  for (int o = 0; o < cout; ++o) c.layer.bias.push_back(with_bias ? static_cast<float>(value(rng)) : 0.0f);

  c.input = Tensor(Shape{static_cast<std::size_t>(cin), static_cast<std::size_t>(h), static_cast<std::size_t>(wd)});
  c.x = oracle::zeros(cin, h, wd);
  for (int a = 0; a < cin; ++a)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < wd; ++j) {
        // Sprinkle exact zeros so the sparse-skip path is exercised.
        const double v = pick(0, 9) == 0 ? 0.0 : value(rng);
        c.input.at(a, i, j) = v;
        c.x[a][i][j] = v;
      }
  return c;
}

oracle::Volume to_volume(const Tensor& t) {
  oracle::Volume v = oracle::zeros(static_cast<int>(t.shape()[0]), static_cast<int>(t.shape()[1]),
                                   static_cast<int>(t.shape()[2]));
  for (std::size_t c = 0; c < t.shape()[0]; ++c)
    for (std::size_t i = 0; i < t.shape()[1]; ++i)
      for (std::size_t j = 0; j < t.shape()[2]; ++j) v[c][i][j] = t.at(c, i, j);
  return v;
}

TransposedConv ones_conv(std::size_t k, std::int64_t stride, std::int64_t pad) {
  TransposedConv layer;
  layer.in_channels = layer.out_channels = 1;
  layer.kernel_h = layer.kernel_w = k;
  layer.stride = stride;
  layer.padding = pad;
  layer.weights.assign(k * k, 1.0f);
  layer.bias = {0.0f};
  return layer;
}

BatchNormInfer scalar_bn(float gamma, float beta, float mean, float var, double eps) {
  return BatchNormInfer{1, {gamma}, {beta}, {mean}, {var}, eps};
}

}  // namespace

TEST(ConvTranspose, SingleMultiply) {
  TransposedConv layer = ones_conv(1, 1, 0);
  layer.weights = {0.5f};
  const auto out = conv_transpose(Tensor(Shape{1, 1, 1}, {3.0}), layer);
  EXPECT_EQ(out.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(out[0], 1.5);
}

TEST(ConvTranspose, StrideTwoProducesDisjointBlocks) {
  const auto out = conv_transpose(Tensor(Shape{1, 2, 2}, {1, 1, 1, 1}), ones_conv(2, 2, 0));
  ASSERT_EQ(out.shape(), (Shape{1, 4, 4}));
  for (double v : out.data()) EXPECT_EQ(v, 1.0);

  // Distinct inputs show each lands in its own 2x2 block.
  const auto tagged = conv_transpose(Tensor(Shape{1, 2, 2}, {1, 2, 3, 4}), ones_conv(2, 2, 0));
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) EXPECT_EQ(tagged.at(0, y, x), 1.0 + (y / 2) * 2 + (x / 2));
}

TEST(ConvTranspose, DcganStageShape) {
  TransposedConv layer;
  layer.in_channels = 512;
  layer.out_channels = 256;
  layer.kernel_h = layer.kernel_w = 4;
  layer.stride = 2;
  layer.padding = 1;
  EXPECT_EQ(infer_output_shape(layer, Shape{512, 4, 4}), (Shape{256, 8, 8}));
}

TEST(ConvTranspose, ShapeErrors) {
  const auto layer = ones_conv(2, 2, 0);
  try {
    conv_transpose(Tensor(Shape{2, 2, 2}), layer);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Shape);
  }
  // (1-1)*1 - 2*2 + 1 = -3
  TransposedConv shrinking = ones_conv(1, 1, 2);
  EXPECT_THROW(infer_output_shape(shrinking, Shape{1, 1, 1}), Error);
}

TEST(ConvTranspose, ParameterValidation) {
  auto layer = ones_conv(2, 2, 0);
  layer.output_padding = 2;
  EXPECT_THROW(validate_parameters(layer), Error);
  layer = ones_conv(2, 0, 0);
  EXPECT_THROW(validate_parameters(layer), Error);
  layer = ones_conv(2, 1, -1);
  EXPECT_THROW(validate_parameters(layer), Error);
  layer = ones_conv(2, 1, 0);
  layer.weights.pop_back();
  EXPECT_THROW(validate_parameters(layer), Error);
}

TEST(ConvTranspose, MatchesScatterAddOracle) {
  std::mt19937_64 rng(101);
  const auto start = std::chrono::steady_clock::now();
  for (int trial = 0; trial < 100; ++trial) {
    const auto c = random_case(rng, true);
    const auto out = conv_transpose(c.input, c.layer);
    const auto ref = oracle::scatter_add(c.x, c.w, {c.layer.bias.begin(), c.layer.bias.end()},
                                         static_cast<int>(c.layer.stride), static_cast<int>(c.layer.padding),
                                         static_cast<int>(c.layer.output_padding));
    ASSERT_EQ(out.shape()[1], ref[0].size());
    ASSERT_EQ(out.shape()[2], ref[0][0].size());
    for (std::size_t o = 0; o < ref.size(); ++o)
      for (std::size_t i = 0; i < ref[o].size(); ++i)
        for (std::size_t j = 0; j < ref[o][i].size(); ++j)
          ASSERT_NEAR(out.at(o, i, j), ref[o][i][j], 1e-5) << "case " << trial;
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 5.0);
}

TEST(ConvTranspose, AdjointOfStridedCorrelation) {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> value(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = random_case(rng, false);
    const auto tx = conv_transpose(c.input, c.layer);
    auto y = to_volume(tx);
    for (auto& plane : y)
      for (auto& row : plane)
        for (double& v : row) v = value(rng);
    const auto ty = oracle::strided_correlation(y, c.w, static_cast<int>(c.input.shape()[1]),
                                                static_cast<int>(c.input.shape()[2]), static_cast<int>(c.layer.stride),
                                                static_cast<int>(c.layer.padding));
    const double lhs = oracle::inner(to_volume(tx), y);
    const double rhs = oracle::inner(c.x, ty);
    ASSERT_NEAR(lhs, rhs, 1e-4 * std::max(1.0, std::abs(rhs))) << "case " << trial;
  }
}

TEST(BatchNorm, Examples) {
  EXPECT_EQ(batchnorm_infer(Tensor(Shape{1, 1, 1}, {2.0}), scalar_bn(3, 1, 1, 4, 0.0))[0], 2.5);

  const Tensor x(Shape{2, 1, 3}, {-1, 0, 2, 5, 6, 7});
  EXPECT_EQ(batchnorm_infer(x, BatchNormInfer{2, {1, 1}, {0, 0}, {0, 0}, {1, 1}, 0.0}), x);

  const Tensor constant(Shape{1, 2, 2}, {0.75, 0.75, 0.75, 0.75});
  const auto shifted = batchnorm_infer(constant, scalar_bn(2, -0.5f, 0.75f, 3, 1e-5));
  for (double v : shifted.data()) EXPECT_EQ(v, -0.5);
}

TEST(BatchNorm, ScalarClosedForm) {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> value(-3.0, 3.0);
  std::uniform_real_distribution<double> positive(0.01, 4.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const float gamma = static_cast<float>(value(rng)), beta = static_cast<float>(value(rng));
    const float mean = static_cast<float>(value(rng)), var = static_cast<float>(positive(rng));
    const double eps = trial % 2 ? 1e-5 : 0.0;
    const double x = value(rng);
    const double expected = double{gamma} * (x - double{mean}) / std::sqrt(double{var} + eps) + double{beta};
    ASSERT_NEAR(batchnorm_infer(Tensor(Shape{1}, {x}), scalar_bn(gamma, beta, mean, var, eps))[0], expected, 1e-6);
  }
}

TEST(BatchNorm, ChannelMismatch) {
  try {
    batchnorm_infer(Tensor(Shape{2, 1, 1}), scalar_bn(1, 0, 0, 1, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Shape);
  }
}

TEST(Activation, Examples) {
  const Tensor x(Shape{3}, {-3, 2, 0});
  EXPECT_EQ(apply_activation(x, {ActivationKind::ReLU}), Tensor(Shape{3}, {0, 2, 0}));
  EXPECT_EQ(apply_activation(Tensor(Shape{1}, {-5}), {ActivationKind::LeakyReLU, 0.2})[0], -1.0);
  EXPECT_EQ(apply_activation(Tensor(Shape{1}, {0}), {ActivationKind::Tanh})[0], 0.0);
}

TEST(Activation, TanhStaysInRange) {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> exponent(-10.0, 10.0);
  Tensor x(Shape{2000});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (i % 2 ? 1.0 : -1.0) * std::pow(10.0, exponent(rng));
  const auto y = apply_activation(x, {ActivationKind::Tanh});
  for (double v : y.data()) {
    ASSERT_GE(v, -1.0);
    ASSERT_LE(v, 1.0);
  }
}

TEST(Reshape, ElementCountMustMatch) {
  EXPECT_EQ(infer_output_shape(Reshape{{2, 3, 4}}, Shape{24}), (Shape{2, 3, 4}));
  EXPECT_THROW(infer_output_shape(Reshape{{2, 3, 4}}, Shape{25}), Error);
}
