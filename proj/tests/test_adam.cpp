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

#include "naqr/nn/adam.hpp"
#include "support/nn_oracles.hpp"

namespace naqr::nn {
namespace {

// Scalar Adam recurrence, written out longhand.
struct ScalarAdam {
  double m = 0, v = 0, lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  int t = 0;
  double step(double p, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return p - lr * mh / (std::sqrt(vh) + eps);
  }
};

TEST(Adam, MatchesScriptedRecurrence) {
  const NetworkSpec spec = testing::tiny_spec();
  ParamStore<double> params = init_params<double>(spec, 5);
  AdamState<double> state(params, 1e-2);
  const auto initial = params.tensors();
  std::vector<double> expected;
  for (const auto* t : params.tensors()) expected.insert(expected.end(), t->data().begin(), t->data().end());
  std::vector<ScalarAdam> oracle(expected.size(), ScalarAdam{.lr = 1e-2});
  GradientSet<double> g(spec);
  for (int step = 1; step <= 25; ++step) {
    std::size_t i = 0;
    for (auto* t : g.tensors()) {
      for (auto& v : t->data()) {
        v = std::sin(0.37 * static_cast<double>(i) + 0.91 * step) * (1.0 + 0.1 * step);
        expected[i] = oracle[i].step(expected[i], v);
        ++i;
      }
    }
    adam_step(params, g, state);
  }
  EXPECT_EQ(state.step_count, 25u);
  std::size_t i = 0;
  for (const auto* t : params.tensors()) {
    for (double v : t->data()) EXPECT_NEAR(v, expected[i++], 1e-12);
  }
}

TEST(Adam, FirstStepMovesEachParameterByLearningRate) {
  const NetworkSpec spec = testing::tiny_spec();
  ParamStore<double> params(spec);
  AdamState<double> state(params, 0.001);
  GradientSet<double> g(spec);
  for (auto* t : g.tensors()) t->fill(-3.0);
  adam_step(params, g, state);
  for (const auto* t : params.tensors()) {
    for (double v : t->data()) EXPECT_NEAR(v, 0.001, 1e-9);
  }
}

TEST(Adam, RejectsInvalidBetasAndIncongruentGradients) {
  const NetworkSpec spec = testing::tiny_spec();
  ParamStore<double> params(spec);
  AdamState<double> state(params, 0.001);
  GradientSet<double> g(spec);
  state.beta1 = 1.0;
  EXPECT_THROW(adam_step(params, g, state), ValidationError);
  state.beta1 = 0.9;
  state.beta2 = 0.0;
  EXPECT_THROW(adam_step(params, g, state), ValidationError);
  state.beta2 = 0.999;
  NetworkSpec other = spec;
  other.head_units = {3, 2};
  EXPECT_THROW(adam_step(params, GradientSet<double>(other), state), ShapeError);
}

TEST(Adam, DrivesTinyNetworkLossDown) {
  auto net = Network<double>::initialized(testing::tiny_spec(), 3);
  const auto x = testing::random_input(net.spec(), 8, 4);
  const std::vector<std::uint8_t> labels{0, 1, 0, 1, 1, 0, 1, 0};
  AdamState<double> state(net.params(), 0.05);
  Workspace<double> ws;
  const double initial = net.loss(net.forward(x, ws), labels);
  for (int i = 0; i < 200; ++i) {
    net.forward(x, ws);
    adam_step(net.params(), net.backward(ws, labels), state);
  }
  EXPECT_LT(net.loss(net.forward(x, ws), labels), 0.5 * initial);
}

}  // namespace
}  // namespace naqr::nn
