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

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "naqr/error.hpp"
#include "naqr/nn/tensor.hpp"

namespace naqr {

/// A single-channel camera raster, row-major. Pixel (row, col) has its center
/// at continuous coordinates (x = col, y = row).
struct Frame {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Frame() = default;
  Frame(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w, fill) {}
  Frame(std::size_t h, std::size_t w, std::vector<float> data) : height(h), width(w), pixels(std::move(data)) {
    if (pixels.size() != h * w) throw ShapeError("frame data does not match " + std::to_string(h) + "x" + std::to_string(w));
  }

  float& at(std::size_t row, std::size_t col) { return pixels[row * width + col]; }
  float at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
  std::size_t size() const noexcept { return pixels.size(); }
  bool same_shape(const Frame& o) const noexcept { return height == o.height && width == o.width; }

  nn::Tensor<float> to_tensor() const { return nn::Tensor<float>({height, width, 1}, pixels); }

  friend bool operator==(const Frame&, const Frame&) = default;
};

using FrameSet = std::vector<Frame>;

/// Frames that share a geometry plus the acquisition metadata written into
/// frame-set files.
struct FrameSetMeta {
  double exposure_ms = 0.0;
  std::string path_id;  // "primary" | "secondary" | free-form for ingested data
  std::uint64_t seed = 0;
};

/// Stacks frames into a (n, h, w, 1) batch tensor.
inline nn::Tensor<float> stack_frames(std::span<const Frame> frames) {
  if (frames.empty()) throw ShapeError("cannot stack an empty frame list");
  const std::size_t h = frames[0].height, w = frames[0].width;
  nn::Buffer<float> data;
  data.reserve(frames.size() * h * w);
  for (const auto& f : frames) {
    if (f.height != h || f.width != w) throw ShapeError("frames differ in shape");
    data.insert(data.end(), f.pixels.begin(), f.pixels.end());
  }
  return nn::Tensor<float>({frames.size(), h, w, 1}, std::move(data));
}

}  // namespace naqr
