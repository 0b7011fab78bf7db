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
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "naqr/error.hpp"
#include "naqr/nn/layers.hpp"
#include "naqr/nn/tensor.hpp"

namespace naqr::nn {

/// Topology of a conv-trunk / dense-head classifier: a stack of 3x3 valid
/// convolutions (ReLU after each), a flatten, then `n_heads` independent
/// dense chains. Every dense layer is followed by ReLU except the last of
/// each head, which feeds a softmax.
struct NetworkSpec {
  std::string arch = "custom";
  std::size_t input_height = 0;
  std::size_t input_width = 0;
  std::size_t input_channels = 1;
  std::vector<std::size_t> conv_channels;
  std::vector<std::size_t> head_units;
  std::size_t n_heads = 1;

  std::size_t trunk_height() const { return input_height - 2 * conv_channels.size(); }
  std::size_t trunk_width() const { return input_width - 2 * conv_channels.size(); }
  std::size_t trunk_channels() const {
    return conv_channels.empty() ? input_channels : conv_channels.back();
  }
  std::size_t flatten_size() const { return trunk_height() * trunk_width() * trunk_channels(); }
  std::size_t classes() const { return head_units.back(); }

  void validate() const {
    if (input_height == 0 || input_width == 0 || input_channels == 0) {
      throw ValidationError("network input dimensions must be positive");
    }
    if (2 * conv_channels.size() >= input_height || 2 * conv_channels.size() >= input_width) {
      throw ValidationError("conv stack of depth " + std::to_string(conv_channels.size()) +
                            " leaves no spatial extent for a " + std::to_string(input_height) +
                            "x" + std::to_string(input_width) + " input");
    }
    if (head_units.empty()) throw ValidationError("network needs at least one dense layer");
    if (n_heads == 0) throw ValidationError("network needs at least one head");
    for (auto c : conv_channels) {
      if (c == 0) throw ValidationError("conv channel counts must be positive");
    }
    for (auto u : head_units) {
      if (u == 0) throw ValidationError("dense widths must be positive");
    }
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// All trainable tensors of a network. Declaration order (used by
/// serialization, initialization, and the optimizer) is: each conv layer's
/// kernels then bias, then head 0's dense layers (weights then bias), head 1,
/// and so on.
template <class T>
struct ParamStore {
  std::vector<ConvLayerParams<T>> convs;
  std::vector<std::vector<DenseLayerParams<T>>> heads;

  ParamStore() = default;

  explicit ParamStore(const NetworkSpec& spec) {
    spec.validate();
    std::size_t c_in = spec.input_channels;
    for (std::size_t c_out : spec.conv_channels) {
      convs.emplace_back(c_in, c_out);
      c_in = c_out;
    }
    heads.resize(spec.n_heads);
    for (auto& head : heads) {
      std::size_t n_in = spec.flatten_size();
      for (std::size_t n_out : spec.head_units) {
        head.emplace_back(n_in, n_out);
        n_in = n_out;
      }
    }
  }

  template <class F>
  void for_each_tensor(F&& f) {
    for (auto& c : convs) {
      f(c.kernels);
      f(c.bias);
    }
    for (auto& head : heads) {
      for (auto& d : head) {
        f(d.weights);
        f(d.bias);
      }
    }
  }

  template <class F>
  void for_each_tensor(F&& f) const {
    for (const auto& c : convs) {
      f(c.kernels);
      f(c.bias);
    }
    for (const auto& head : heads) {
      for (const auto& d : head) {
        f(d.weights);
        f(d.bias);
      }
    }
  }

  std::vector<Tensor<T>*> tensors() {
    std::vector<Tensor<T>*> out;
    for_each_tensor([&](Tensor<T>& t) { out.push_back(&t); });
    return out;
  }

  std::vector<const Tensor<T>*> tensors() const {
    std::vector<const Tensor<T>*> out;
    for_each_tensor([&](const Tensor<T>& t) { out.push_back(&t); });
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const Tensor<T>& t) { n += t.size(); });
    return n;
  }

  bool congruent_with(const ParamStore& other) const {
    auto a = tensors();
    auto b = other.tensors();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i]->shape() != b[i]->shape()) return false;
    }
    return true;
  }

  void zero() {
    for_each_tensor([](Tensor<T>& t) { t.fill(T{0}); });
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& c : convs) {
      ConvLayerParams<U> p;
      p.kernels = c.kernels.template cast<U>();
      p.bias = c.bias.template cast<U>();
      out.convs.push_back(std::move(p));
    }
    for (const auto& head : heads) {
      auto& h = out.heads.emplace_back();
      for (const auto& d : head) {
        DenseLayerParams<U> p;
        p.weights = d.weights.template cast<U>();
        p.bias = d.bias.template cast<U>();
        h.push_back(std::move(p));
      }
    }
    return out;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    auto ta = a.tensors();
    auto tb = b.tensors();
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
      if (!(*ta[i] == *tb[i])) return false;
    }
    return true;
  }
};

/// One gradient tensor per parameter tensor, same shapes and order.
template <class T>
using GradientSet = ParamStore<T>;

/// He-normal initialization: weights ~ N(0, 2 / fan_in), biases zero.
/// fan_in is 9 * c_in for convolutions and n_in for dense layers.
template <class T>
ParamStore<T> init_params(const NetworkSpec& spec, std::uint64_t seed) {
  ParamStore<T> params(spec);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](Tensor<T>& t, std::size_t fan_in) {
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (T& v : t.data()) v = static_cast<T>(normal(rng) * scale);
  };
  for (auto& c : params.convs) fill(c.kernels, kKernelSize * kKernelSize * c.in_channels());
  for (auto& head : params.heads) {
    for (auto& d : head) fill(d.weights, d.in_features());
  }
  return params;
}

/// Per-call activation cache. A Network is immutable during inference; each
/// concurrent caller owns its own workspace.
template <class T>
struct Workspace {
  std::size_t batch = 0;
  bool has_forward = false;
  std::vector<Buffer<T>> acts;  // acts[0] = input, acts[l + 1] = post-ReLU conv l
  std::vector<Buffer<T>> cols;  // im2col buffers per conv layer
  std::vector<std::vector<Buffer<T>>> head_outs;  // post-activation per head and layer
  Tensor<T> probs;                                       // (batch, n_heads, classes)
};

template <class T>
class Network {
 public:
  Network() = default;
  Network(NetworkSpec spec, ParamStore<T> params) : spec_(std::move(spec)), params_(std::move(params)) {
    spec_.validate();
    if (!params_.congruent_with(ParamStore<T>(spec_))) {
      throw ShapeError("parameter store does not match network spec");
    }
  }

  static Network initialized(NetworkSpec spec, std::uint64_t seed) {
    auto params = init_params<T>(spec, seed);
    return Network(std::move(spec), std::move(params));
  }

  const NetworkSpec& spec() const noexcept { return spec_; }
  const ParamStore<T>& params() const noexcept { return params_; }
  ParamStore<T>& params() noexcept { return params_; }
  std::size_t n_heads() const noexcept { return spec_.n_heads; }
  std::size_t classes() const { return spec_.classes(); }

  std::size_t param_count() const { return params_.param_count(); }

  /// Shapes after each stage: input, each conv, flatten, then head 0's dense
  /// outputs.
  std::vector<Shape> shape_chain() const {
    std::vector<Shape> chain;
    std::size_t h = spec_.input_height, w = spec_.input_width;
    chain.push_back({h, w, spec_.input_channels});
    for (std::size_t c : spec_.conv_channels) {
      h -= 2;
      w -= 2;
      chain.push_back({h, w, c});
    }
    chain.push_back({spec_.flatten_size()});
    for (std::size_t u : spec_.head_units) chain.push_back({u});
    return chain;
  }

  /// Forward pass over a batch shaped (B, H, W, C) or a single (H, W, C)
  /// image. Returns probabilities shaped (B, n_heads, classes).
  const Tensor<T>& forward(const Tensor<T>& input, Workspace<T>& ws) const {
    const std::size_t batch = batch_size_of(input);
    const std::size_t n_conv = spec_.conv_channels.size();
    ws.batch = batch;
    ws.has_forward = false;
    ws.acts.resize(n_conv + 1);
    ws.cols.resize(n_conv);
    ws.acts[0].assign(input.data().begin(), input.data().end());

    std::size_t h = spec_.input_height, w = spec_.input_width, c = spec_.input_channels;
    for (std::size_t l = 0; l < n_conv; ++l) {
      const auto& p = params_.convs[l];
      const std::size_t rows = batch * (h - 2) * (w - 2);
      const std::size_t k = kKernelSize * kKernelSize * c;
      ws.cols[l].resize(rows * k);
      kernels::im2col(ws.acts[l].data(), batch, h, w, c, ws.cols[l].data());
      ws.acts[l + 1].resize(rows * p.out_channels());
      kernels::affine(ws.cols[l].data(), rows, k, p.kernels.raw(), p.bias.raw(), p.out_channels(),
                      ws.acts[l + 1].data());
      kernels::relu_inplace(std::span<T>(ws.acts[l + 1]));
      h -= 2;
      w -= 2;
      c = p.out_channels();
    }

    const Buffer<T>& flat = ws.acts[n_conv];
    const std::size_t classes = spec_.classes();
    ws.head_outs.resize(spec_.n_heads);
    ws.probs = Tensor<T>({batch, spec_.n_heads, classes});
    for (std::size_t hd = 0; hd < spec_.n_heads; ++hd) {
      const auto& layers = params_.heads[hd];
      auto& outs = ws.head_outs[hd];
      outs.resize(layers.size());
      const T* in = flat.data();
      std::size_t n_in = spec_.flatten_size();
      for (std::size_t k = 0; k < layers.size(); ++k) {
        const auto& d = layers[k];
        outs[k].resize(batch * d.out_features());
        kernels::affine(in, batch, n_in, d.weights.raw(), d.bias.raw(), d.out_features(),
                        outs[k].data());
        if (k + 1 < layers.size()) {
          kernels::relu_inplace(std::span<T>(outs[k]));
        } else {
          kernels::softmax_rows(std::span<T>(outs[k]), classes);
        }
        in = outs[k].data();
        n_in = d.out_features();
      }
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t cl = 0; cl < classes; ++cl) {
          ws.probs[(b * spec_.n_heads + hd) * classes + cl] = outs.back()[b * classes + cl];
        }
      }
    }
    ws.has_forward = true;
    return ws.probs;
  }

  /// Convenience forward pass with a private workspace.
  Tensor<T> predict(const Tensor<T>& input) const {
    Workspace<T> ws;
    return forward(input, ws);
  }

  /// Mean over the batch of the cross-entropy summed over heads. `labels`
  /// holds batch * n_heads class indices, example-major.
  T loss(const Tensor<T>& probs, std::span<const std::uint8_t> labels) const {
    const std::size_t classes = spec_.classes();
    const std::size_t rows = probs.size() / classes;
    if (labels.size() != rows) throw ShapeError("label count does not match batch * heads");
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      total += static_cast<double>(
          cross_entropy<T>(probs.data().subspan(r * classes, classes), labels[r]));
    }
    return static_cast<T>(total / static_cast<double>(rows / spec_.n_heads));
  }

  /// Exact reverse-mode gradient of `loss` with respect to every parameter,
  /// using the activations cached by the last `forward` on `ws`.
  GradientSet<T> backward(const Workspace<T>& ws, std::span<const std::uint8_t> labels) const {
    if (!ws.has_forward) throw StateError("backward called without a completed forward pass");
    const std::size_t batch = ws.batch;
    const std::size_t classes = spec_.classes();
    const std::size_t n_heads = spec_.n_heads;
    if (labels.size() != batch * n_heads) throw ShapeError("label count does not match batch * heads");
    for (auto l : labels) {
      if (l >= classes) throw ShapeError("label out of range");
    }

    GradientSet<T> grads(spec_);
    const std::size_t n_conv = spec_.conv_channels.size();
    const std::size_t flat_n = spec_.flatten_size();
    const Buffer<T>& flat = ws.acts[n_conv];
    Buffer<T> d_flat(batch * flat_n, T{0});
    const T inv_batch = T{1} / static_cast<T>(batch);

    Buffer<T> delta, delta_prev;
    for (std::size_t hd = 0; hd < n_heads; ++hd) {
      const auto& layers = params_.heads[hd];
      const auto& outs = ws.head_outs[hd];
      auto& glayers = grads.heads[hd];
      // softmax + cross-entropy: dL/dz = (p - onehot) / B
      delta.assign(outs.back().begin(), outs.back().end());
      for (std::size_t b = 0; b < batch; ++b) {
        delta[b * classes + labels[b * n_heads + hd]] -= T{1};
      }
      for (T& v : delta) v *= inv_batch;

      for (std::size_t k = layers.size(); k-- > 0;) {
        const auto& d = layers[k];
        const std::size_t n_in = d.in_features(), n_out = d.out_features();
        const T* in = k == 0 ? flat.data() : outs[k - 1].data();
        ConstMatrixMap<T> x(in, ie(batch), ie(n_in));
        ConstMatrixMap<T> dy(delta.data(), ie(batch), ie(n_out));
        MatrixMap<T> dw(glayers[k].weights.raw(), ie(n_in), ie(n_out));
        dw.noalias() = x.transpose() * dy;
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(glayers[k].bias.raw(), ie(n_out));
        db = dy.colwise().sum();
        ConstMatrixMap<T> wm(d.weights.raw(), ie(n_in), ie(n_out));
        if (k > 0) {
          delta_prev.resize(batch * n_in);
          MatrixMap<T> dx(delta_prev.data(), ie(batch), ie(n_in));
          dx.noalias() = dy * wm.transpose();
          const auto& prev = outs[k - 1];
          for (std::size_t i = 0; i < delta_prev.size(); ++i) {
            if (!(prev[i] > T{0})) delta_prev[i] = T{0};
          }
          delta.swap(delta_prev);
        } else {
          MatrixMap<T> dx(d_flat.data(), ie(batch), ie(n_in));
          dx.noalias() += dy * wm.transpose();
        }
      }
    }
    for (std::size_t i = 0; i < d_flat.size(); ++i) {
      if (!(flat[i] > T{0})) d_flat[i] = T{0};
    }

    Buffer<T> d_out = std::move(d_flat);
    Buffer<T> d_cols;
    std::size_t h = spec_.trunk_height(), w = spec_.trunk_width();
    for (std::size_t l = n_conv; l-- > 0;) {
      const auto& p = params_.convs[l];
      const std::size_t c_in = p.in_channels(), c_out = p.out_channels();
      const std::size_t in_h = h + 2, in_w = w + 2;
      const std::size_t rows = batch * h * w;
      const std::size_t k = kKernelSize * kKernelSize * c_in;
      ConstMatrixMap<T> col(ws.cols[l].data(), ie(rows), ie(k));
      ConstMatrixMap<T> dy(d_out.data(), ie(rows), ie(c_out));
      MatrixMap<T> dk(grads.convs[l].kernels.raw(), ie(k), ie(c_out));
      dk.noalias() = col.transpose() * dy;
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(grads.convs[l].bias.raw(), ie(c_out));
      db = dy.colwise().sum();
      if (l > 0) {
        d_cols.resize(rows * k);
        ConstMatrixMap<T> km(p.kernels.raw(), ie(k), ie(c_out));
        MatrixMap<T> dc(d_cols.data(), ie(rows), ie(k));
        dc.noalias() = dy * km.transpose();
        Buffer<T> d_in(batch * in_h * in_w * c_in);
        kernels::col2im(d_cols.data(), batch, in_h, in_w, c_in, d_in.data());
        const auto& act = ws.acts[l];
        for (std::size_t i = 0; i < d_in.size(); ++i) {
          if (!(act[i] > T{0})) d_in[i] = T{0};
        }
        d_out = std::move(d_in);
      }
      h = in_h;
      w = in_w;
    }
    return grads;
  }

 private:
  static Eigen::Index ie(std::size_t n) { return static_cast<Eigen::Index>(n); }

  std::size_t batch_size_of(const Tensor<T>& input) const {
    const Shape& s = input.shape();
    const Shape image{spec_.input_height, spec_.input_width, spec_.input_channels};
    if (s.size() == 3 && s == image) return 1;
    if (s.size() == 4 && Shape(s.begin() + 1, s.end()) == image) return s[0];
    throw ShapeError("network expects input " + shape_string(image) + " (optionally batched), got " +
                     shape_string(s));
  }

  NetworkSpec spec_;
  ParamStore<T> params_;
};

template <class T>
std::size_t param_count(const Network<T>& net) {
  return net.param_count();
}

}  // namespace naqr::nn
