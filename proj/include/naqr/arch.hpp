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

// The two readout classifiers.
//
// cnn-site classifies one 10x10 crop centered on a site:
//   10x10x1 -> conv 32 -> 8x8x32 -> conv 64 -> 6x6x64 -> conv 128 -> 4x4x128
//   -> flatten 2048 -> dense 128 -> dense 2 (softmax)      355,202 parameters
//
// cnn-array classifies every site of a full 28x28 frame at once: the same
// conv trunk (ending at 22x22x128, flatten 61,952) feeds N independent heads
// of dense 128 -> 64 -> 2. Per head that is 7,929,984 + 8,256 + 130
// parameters; the dense-1 count is derived from the flatten size, which is
// larger than the 2048-input dense-1 sometimes quoted for this design.

#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "naqr/error.hpp"
#include "naqr/frame.hpp"
#include "naqr/nn/network.hpp"

namespace naqr::arch {

inline constexpr std::string_view kCnnSite = "cnn-site";
inline constexpr std::string_view kCnnArray = "cnn-array";
inline constexpr std::size_t kCropSize = 10;
inline constexpr std::size_t kArrayInputSize = 28;

struct CnnSiteSpec {
  std::size_t crop_size = kCropSize;
  std::vector<std::size_t> conv_channels{32, 64, 128};
  std::vector<std::size_t> dense_units{128, 2};

  nn::NetworkSpec network() const {
    nn::NetworkSpec s;
    s.arch = std::string(kCnnSite);
    s.input_height = s.input_width = crop_size;
    s.conv_channels = conv_channels;
    s.head_units = dense_units;
    s.n_heads = 1;
    return s;
  }
};

/// Defaults reproduce the full design. The trunk and head widths are exposed
/// so that reduced-width variants can be trained on small machines.
struct CnnArraySpec {
  std::size_t input_height = kArrayInputSize;
  std::size_t input_width = kArrayInputSize;
  std::vector<std::size_t> conv_channels{32, 64, 128};
  std::vector<std::size_t> head_units{128, 64, 2};

  nn::NetworkSpec network(std::size_t n_sites) const {
    nn::NetworkSpec s;
    s.arch = std::string(kCnnArray);
    s.input_height = input_height;
    s.input_width = input_width;
    s.conv_channels = conv_channels;
    s.head_units = head_units;
    s.n_heads = n_sites;
    return s;
  }
};

inline nn::Network<float> build_cnn_site(std::uint64_t seed, const CnnSiteSpec& spec = {}) {
  return nn::Network<float>::initialized(spec.network(), seed);
}

inline nn::Network<float> build_cnn_array(std::size_t n_sites, std::uint64_t seed,
                                          const CnnArraySpec& spec = {}) {
  if (n_sites == 0) throw ValidationError("cnn-array needs at least one site");
  return nn::Network<float>::initialized(spec.network(n_sites), seed);
}

/// Dark/bright probabilities for one site. Class 0 is dark, class 1 bright.
struct StateProbs {
  double p_dark = 0.5;
  double p_bright = 0.5;

  /// argmax; an exact tie resolves to dark.
  std::uint8_t label() const noexcept { return p_bright > p_dark ? 1 : 0; }
};

inline std::vector<StateProbs> unpack_probs(const nn::Tensor<float>& probs) {
  std::vector<StateProbs> out;
  out.reserve(probs.size() / 2);
  for (std::size_t i = 0; i + 1 < probs.size(); i += 2) out.push_back({probs[i], probs[i + 1]});
  return out;
}

inline StateProbs infer_site(const nn::Network<float>& net, const Frame& crop) {
  const auto& s = net.spec();
  if (crop.height != s.input_height || crop.width != s.input_width) {
    throw ShapeError("infer_site expects a " + std::to_string(s.input_height) + "x" +
                     std::to_string(s.input_width) + " crop, got " + std::to_string(crop.height) + "x" +
                     std::to_string(crop.width));
  }
  if (s.n_heads != 1) throw ShapeError("infer_site needs a single-head network");
  return unpack_probs(net.predict(crop.to_tensor())).front();
}

inline std::vector<StateProbs> infer_array(const nn::Network<float>& net, const Frame& frame) {
  const auto& s = net.spec();
  if (frame.height != s.input_height || frame.width != s.input_width) {
    throw ShapeError("infer_array expects a " + std::to_string(s.input_height) + "x" +
                     std::to_string(s.input_width) + " frame, got " + std::to_string(frame.height) + "x" +
                     std::to_string(frame.width));
  }
  return unpack_probs(net.predict(frame.to_tensor()));
}

/// Batched inference: probabilities for every (example, head) pair,
/// example-major. Evaluated in fixed-size chunks to bound memory.
inline std::vector<StateProbs> infer_batch(const nn::Network<float>& net, std::span<const Frame> inputs,
                                           std::size_t chunk = 256) {
  std::vector<StateProbs> out;
  out.reserve(inputs.size() * net.n_heads());
  nn::Workspace<float> ws;
  for (std::size_t i = 0; i < inputs.size(); i += chunk) {
    const std::size_t n = std::min(chunk, inputs.size() - i);
    const auto& probs = net.forward(stack_frames(inputs.subspan(i, n)), ws);
    auto part = unpack_probs(probs);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

}  // namespace naqr::arch
