// Copyright 2026 The naqr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <array>
#include <random>

#include "naqr/nn/layers.hpp"
#include "support/nn_oracles.hpp"

namespace naqr::nn {
namespace {

TEST(Tensor, RejectsZeroDimensionsAndLengthMismatch) {
  EXPECT_THROW(Tensor<float>({2, 0, 3}), ShapeError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>(3)), ShapeError);
  Tensor<float> t({2, 3}, 1.5f);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.at(1, 2), 1.5f);
  EXPECT_THROW(t.at(2, 0), ShapeError);
  EXPECT_THROW(t.reshape({4}), ShapeError);
  t.reshape({3, 2});
  EXPECT_EQ(t.shape(), (Shape{3, 2}));
}

TEST(Conv2dValid, MatchesNaiveLoopOracle) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto [h, w, cin, cout] : std::vector<std::array<std::size_t, 4>>{{5, 7, 1, 4}, {6, 6, 3, 2}, {3, 3, 2, 5}}) {
    ConvLayerParams<double> p(cin, cout);
    for (auto& v : p.kernels.data()) v = n(rng);
    for (auto& v : p.bias.data()) v = n(rng);
    Tensor<double> x({h, w, cin});
    for (auto& v : x.data()) v = n(rng);
    const auto got = conv2d_valid(x, p);
    const auto want = testing::naive_conv<double>(x.data(), h, w, cin, p.kernels.data(), p.bias.data(), cout);
    ASSERT_EQ(got.shape(), (Shape{h - 2, w - 2, cout}));
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Conv2dValid, OutputShrinksByTwoPerAxis) {
  ConvLayerParams<float> p(1, 32);
  EXPECT_EQ(conv2d_valid(Tensor<float>({10, 10, 1}), p).shape(), (Shape{8, 8, 32}));
}

TEST(Conv2dValid, ChannelMismatchIsAShapeError) {
  ConvLayerParams<float> p(2, 4);
  EXPECT_THROW(conv2d_valid(Tensor<float>({6, 6, 3}), p), ShapeError);
  EXPECT_THROW(conv2d_valid(Tensor<float>({6, 6}), p), ShapeError);
  EXPECT_THROW(conv2d_valid(Tensor<float>({2, 6, 2}), p), ShapeError);
}

TEST(Im2col, Col2imIsItsAdjoint) {
  // <im2col(x), y> == <x, col2im(y)> for random x, y.
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t b = 2, h = 5, w = 4, c = 3;
  const std::size_t rows = b * (h - 2) * (w - 2), k = 9 * c;
  std::vector<double> x(b * h * w * c), y(rows * k), cols(rows * k), back(x.size());
  for (auto& v : x) v = n(rng);
  for (auto& v : y) v = n(rng);
  kernels::im2col(x.data(), b, h, w, c, cols.data());
  kernels::col2im(y.data(), b, h, w, c, back.data());
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < cols.size(); ++i) lhs += cols[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(Relu, ClampsNegativesOnly) {
  const auto r = relu(Tensor<float>({4}, {-1.0f, 0.0f, 2.0f, -0.5f}));
  EXPECT_EQ(r.storage(), (Buffer<float>{0.0f, 0.0f, 2.0f, 0.0f}));
}

TEST(Softmax, KnownValues) {
  const auto p = softmax(Tensor<double>({2}, {1.0, 2.0}));
  EXPECT_NEAR(p[0], 0.26894, 1e-5);
  EXPECT_NEAR(p[1], 0.73106, 1e-5);
}

TEST(Softmax, StableForHugeLogits) {
  const auto p = softmax(Tensor<float>({3}, {1000.0f, 1001.0f, 1002.0f}));
  ASSERT_TRUE(p.all_finite());
  double total = 0;
  for (float v : p.data()) total += v;
  EXPECT_NEAR(total, 1.0, 1e-6);
  EXPECT_GT(p[2], p[1]);
}

TEST(Softmax, RandomLogitsSumToOne) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 30.0);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor<double> z({5});
    for (auto& v : z.data()) v = n(rng);
    const auto p = softmax(z);
    double s = 0;
    for (double v : p.data()) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(CrossEntropy, ClampedAtProbabilityFloor) {
  const std::vector<double> p{1.0, 0.0};
  EXPECT_NEAR(cross_entropy<double>(p, 1), -std::log(1e-12), 1e-9);
  EXPECT_NEAR(cross_entropy<double>(p, 0), 0.0, 1e-15);
  EXPECT_THROW(cross_entropy<double>(p, 2), ShapeError);
}

TEST(Dense, MatchesHandComputedValues) {
  DenseLayerParams<double> d(3, 2);
  d.weights = Tensor<double>({3, 2}, {1, 2, 3, 4, 5, 6});
  d.bias = Tensor<double>({2}, {0.5, -0.5});
  const auto y = dense_forward(Tensor<double>({3}, {1, 0, -1}), d);
  EXPECT_DOUBLE_EQ(y[0], 1 - 5 + 0.5);
  EXPECT_DOUBLE_EQ(y[1], 2 - 6 - 0.5);
  EXPECT_THROW(dense_forward(Tensor<double>({4}), d), ShapeError);
}

}  // namespace
}  // namespace naqr::nn
