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

#pragma once

#include <cmath>
#include <cstdint>

#include "naqr/error.hpp"
#include "naqr/nn/network.hpp"

namespace naqr::nn {

template <class T>
struct AdamState {
  ParamStore<T> first_moment;
  ParamStore<T> second_moment;
  std::uint64_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  AdamState(const NetworkSpec& spec, double lr) : first_moment(spec), second_moment(spec), learning_rate(lr) {}
  explicit AdamState(const ParamStore<T>& like, double lr = 1e-3)
      : first_moment(like), second_moment(like), learning_rate(lr) {
    first_moment.zero();
    second_moment.zero();
  }
};

/// One bias-corrected Adam update:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
template <class T>
void adam_step(ParamStore<T>& params, const GradientSet<T>& grads, AdamState<T>& state) {
  if (!(state.beta1 > 0.0 && state.beta1 < 1.0 && state.beta2 > 0.0 && state.beta2 < 1.0)) {
    throw ValidationError("Adam betas must lie in (0, 1)");
  }
  if (!params.congruent_with(grads) || !params.congruent_with(state.first_moment) ||
      !params.congruent_with(state.second_moment)) {
    throw ShapeError("adam_step: parameters, gradients and moments are not shape-congruent");
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  const T b1 = static_cast<T>(state.beta1);
  const T b2 = static_cast<T>(state.beta2);
  const T one_minus_b1 = static_cast<T>(1.0 - state.beta1);
  const T one_minus_b2 = static_cast<T>(1.0 - state.beta2);
  const T step = static_cast<T>(state.learning_rate / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(state.epsilon);

  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = state.first_moment.tensors();
  auto v = state.second_moment.tensors();
  for (std::size_t i = 0; i < p.size(); ++i) {
    T* pd = p[i]->raw();
    const T* gd = g[i]->raw();
    T* md = m[i]->raw();
    T* vd = v[i]->raw();
    const std::size_t n = p[i]->size();
    for (std::size_t j = 0; j < n; ++j) {
      md[j] = b1 * md[j] + one_minus_b1 * gd[j];
      vd[j] = b2 * vd[j] + one_minus_b2 * gd[j] * gd[j];
      pd[j] -= step * md[j] / (std::sqrt(vd[j] * inv_bc2) + eps);
    }
  }
}

}  // namespace naqr::nn
