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

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <limits>
#include <span>
#include <vector>

#include "naqr/error.hpp"
#include "naqr/nn/tensor.hpp"

namespace naqr::nn {

inline constexpr std::size_t kKernelSize = 3;

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

/// 3x3 convolution weights stored (kh, kw, c_in, c_out) plus one bias per
/// output channel.
template <class T>
struct ConvLayerParams {
  Tensor<T> kernels;
  Tensor<T> bias;

  ConvLayerParams() = default;
  ConvLayerParams(std::size_t c_in, std::size_t c_out)
      : kernels({kKernelSize, kKernelSize, c_in, c_out}), bias({c_out}) {}

  std::size_t in_channels() const { return kernels.dim(2); }
  std::size_t out_channels() const { return kernels.dim(3); }
  std::size_t param_count() const { return kernels.size() + bias.size(); }
};

/// Fully connected weights stored (n_in, n_out) plus bias (n_out).
template <class T>
struct DenseLayerParams {
  Tensor<T> weights;
  Tensor<T> bias;

  DenseLayerParams() = default;
  DenseLayerParams(std::size_t n_in, std::size_t n_out) : weights({n_in, n_out}), bias({n_out}) {}

  std::size_t in_features() const { return weights.dim(0); }
  std::size_t out_features() const { return weights.dim(1); }
  std::size_t param_count() const { return weights.size() + bias.size(); }
};

namespace kernels {

/// Unfolds a batch of NHWC images into rows of 3x3xC patches. Row r of the
/// result is the patch feeding output pixel r (batch-major, then y, then x);
/// column order is (dy, dx, c), matching the kernel layout.
template <class T>
void im2col(const T* input, std::size_t batch, std::size_t height, std::size_t width,
            std::size_t channels, T* cols) {
  const std::size_t out_h = height - 2;
  const std::size_t out_w = width - 2;
  const std::size_t run = kKernelSize * channels;
  const std::size_t row_len = kKernelSize * run;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* img = input + b * height * width * channels;
    for (std::size_t y = 0; y < out_h; ++y) {
      for (std::size_t x = 0; x < out_w; ++x) {
        T* dst = cols + ((b * out_h + y) * out_w + x) * row_len;
        for (std::size_t dy = 0; dy < kKernelSize; ++dy) {
          std::memcpy(dst + dy * run, img + ((y + dy) * width + x) * channels, run * sizeof(T));
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-adds patch gradients back onto the image grid.
template <class T>
void col2im(const T* cols, std::size_t batch, std::size_t height, std::size_t width,
            std::size_t channels, T* grad_input) {
  const std::size_t out_h = height - 2;
  const std::size_t out_w = width - 2;
  const std::size_t run = kKernelSize * channels;
  const std::size_t row_len = kKernelSize * run;
  std::fill(grad_input, grad_input + batch * height * width * channels, T{0});
  for (std::size_t b = 0; b < batch; ++b) {
    T* img = grad_input + b * height * width * channels;
    for (std::size_t y = 0; y < out_h; ++y) {
      for (std::size_t x = 0; x < out_w; ++x) {
        const T* src = cols + ((b * out_h + y) * out_w + x) * row_len;
        for (std::size_t dy = 0; dy < kKernelSize; ++dy) {
          T* d = img + ((y + dy) * width + x) * channels;
          const T* s = src + dy * run;
          for (std::size_t i = 0; i < run; ++i) d[i] += s[i];
        }
      }
    }
  }
}

/// out(rows x n_out) = in(rows x n_in) * w(n_in x n_out) + bias
template <class T>
void affine(const T* in, std::size_t rows, std::size_t n_in, const T* w, const T* bias,
            std::size_t n_out, T* out) {
  ConstMatrixMap<T> x(in, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n_in));
  ConstMatrixMap<T> wm(w, static_cast<Eigen::Index>(n_in), static_cast<Eigen::Index>(n_out));
  MatrixMap<T> y(out, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n_out));
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias, static_cast<Eigen::Index>(n_out));
  y.noalias() = x * wm;
  y.rowwise() += b;
}

template <class T>
void relu_inplace(std::span<T> values) {
  for (T& v : values) v = v < T{0} ? T{0} : v;  // NaN passes through
}

/// Softmax over each contiguous group of `classes` values.
template <class T>
void softmax_rows(std::span<T> values, std::size_t classes) {
  for (std::size_t off = 0; off < values.size(); off += classes) {
    T* row = values.data() + off;
    const T peak = *std::max_element(row, row + classes);
    T sum{0};
    for (std::size_t c = 0; c < classes; ++c) {
      row[c] = std::exp(row[c] - peak);
      sum += row[c];
    }
    for (std::size_t c = 0; c < classes; ++c) row[c] /= sum;
  }
}

}  // namespace kernels

/// Valid (unpadded), stride-1 3x3 convolution of one HWC image.
template <class T>
Tensor<T> conv2d_valid(const Tensor<T>& input, const ConvLayerParams<T>& params) {
  if (input.rank() != 3) throw ShapeError("conv2d_valid expects an HxWxC input");
  if (params.kernels.dim(0) != kKernelSize || params.kernels.dim(1) != kKernelSize) {
    throw ShapeError("only 3x3 kernels are supported");
  }
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  if (h < kKernelSize || w < kKernelSize) throw ShapeError("conv2d_valid input smaller than kernel");
  if (c != params.in_channels()) {
    throw ShapeError("conv2d_valid channel mismatch: input has " + std::to_string(c) +
                     ", kernel expects " + std::to_string(params.in_channels()));
  }
  const std::size_t rows = (h - 2) * (w - 2);
  Buffer<T> cols(rows * kKernelSize * kKernelSize * c);
  kernels::im2col(input.raw(), 1, h, w, c, cols.data());
  Tensor<T> out({h - 2, w - 2, params.out_channels()});
  kernels::affine(cols.data(), rows, kKernelSize * kKernelSize * c, params.kernels.raw(),
                  params.bias.raw(), params.out_channels(), out.raw());
  return out;
}

template <class T>
Tensor<T> relu(Tensor<T> z) {
  kernels::relu_inplace(z.data());
  return z;
}

/// Numerically stable softmax (the maximum logit is subtracted first).
template <class T>
Tensor<T> softmax(Tensor<T> z) {
  if (z.empty()) return z;
  kernels::softmax_rows(z.data(), z.size());
  return z;
}

template <class T>
Tensor<T> dense_forward(const Tensor<T>& input, const DenseLayerParams<T>& params) {
  if (input.size() != params.in_features()) {
    throw ShapeError("dense_forward expects " + std::to_string(params.in_features()) +
                     " inputs, got " + std::to_string(input.size()));
  }
  Tensor<T> out({params.out_features()});
  kernels::affine(input.raw(), 1, params.in_features(), params.weights.raw(), params.bias.raw(),
                  params.out_features(), out.raw());
  return out;
}

/// Probabilities are clamped to 1e-12 before the log so a saturated wrong
/// prediction costs ~27.6 nats instead of infinity.
inline constexpr double kProbabilityFloor = 1e-12;

template <class T>
T cross_entropy(std::span<const T> probs, std::size_t label) {
  if (label >= probs.size()) throw ShapeError("cross_entropy label out of range");
  const T p = std::max(probs[label], static_cast<T>(kProbabilityFloor));
  return -std::log(p);
}

template <class T>
T cross_entropy(const Tensor<T>& probs, std::size_t label) {
  return cross_entropy<T>(probs.data(), label);
}

}  // namespace naqr::nn
