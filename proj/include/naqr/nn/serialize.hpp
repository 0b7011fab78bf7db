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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "naqr/io/container.hpp"
#include "naqr/nn/network.hpp"

namespace naqr::nn {

inline constexpr char kModelMagic[] = "NAQM";
inline constexpr std::uint16_t kModelVersion = 1;

inline io::json spec_to_json(const NetworkSpec& s) {
  return {{"arch", s.arch},
          {"input_height", s.input_height},
          {"input_width", s.input_width},
          {"input_channels", s.input_channels},
          {"conv_channels", s.conv_channels},
          {"head_units", s.head_units},
          {"n_heads", s.n_heads}};
}

inline NetworkSpec spec_from_json(const io::json& j) {
  NetworkSpec s;
  try {
    s.arch = j.at("arch").get<std::string>();
    s.input_height = j.at("input_height").get<std::size_t>();
    s.input_width = j.at("input_width").get<std::size_t>();
    s.input_channels = j.at("input_channels").get<std::size_t>();
    s.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
    s.head_units = j.at("head_units").get<std::vector<std::size_t>>();
    s.n_heads = j.at("n_heads").get<std::size_t>();
  } catch (const io::json::exception& e) {
    throw IoError(std::string("bad network spec in model header: ") + e.what());
  }
  s.validate();
  return s;
}

/// Layer list in declaration order, with tensor names and shapes; this is
/// what readers use to slice the payload.
template <class T>
io::json layer_manifest(const ParamStore<T>& p) {
  io::json layers = io::json::array();
  for (std::size_t l = 0; l < p.convs.size(); ++l) {
    layers.push_back({{"name", "conv" + std::to_string(l + 1)},
                      {"kind", "conv2d_valid_3x3"},
                      {"tensors",
                       {{{"name", "kernels"}, {"shape", p.convs[l].kernels.shape()}},
                        {{"name", "bias"}, {"shape", p.convs[l].bias.shape()}}}}});
  }
  for (std::size_t h = 0; h < p.heads.size(); ++h) {
    for (std::size_t k = 0; k < p.heads[h].size(); ++k) {
      const auto& d = p.heads[h][k];
      layers.push_back({{"name", "head" + std::to_string(h) + ".dense" + std::to_string(k + 1)},
                        {"kind", "dense"},
                        {"tensors",
                         {{{"name", "weights"}, {"shape", d.weights.shape()}},
                          {{"name", "bias"}, {"shape", d.bias.shape()}}}}});
    }
  }
  return layers;
}

struct ModelFile {
  Network<float> network;
  io::json training;  // preprocessing stats, site centers, history summary, ...
  std::uint64_t seed = 0;
};

inline std::vector<std::uint8_t> encode_model(const ModelFile& m) {
  const auto& params = m.network.params();
  io::json header = {{"format", "naqr-model"},
                     {"arch", m.network.spec().arch},
                     {"spec", spec_to_json(m.network.spec())},
                     {"layers", layer_manifest(params)},
                     {"dtype", "f32le"},
                     {"param_count", params.param_count()},
                     {"training", m.training},
                     {"seed", m.seed}};
  std::vector<float> payload;
  payload.reserve(params.param_count());
  params.for_each_tensor(
      [&](const Tensor<float>& t) { payload.insert(payload.end(), t.data().begin(), t.data().end()); });
  return io::encode_container(kModelMagic, kModelVersion, header, payload);
}

inline ModelFile decode_model(std::span<const std::uint8_t> bytes) {
  NetworkSpec spec;
  auto c = io::decode_container(bytes, kModelMagic, kModelVersion, [&](const io::json& h) {
    spec = spec_from_json(h.at("spec"));
    return ParamStore<float>(spec).param_count();
  });
  ParamStore<float> params(spec);
  std::size_t off = 0;
  params.for_each_tensor([&](Tensor<float>& t) {
    std::copy(c.payload.begin() + static_cast<std::ptrdiff_t>(off),
              c.payload.begin() + static_cast<std::ptrdiff_t>(off + t.size()), t.raw());
    off += t.size();
  });
  ModelFile m{Network<float>(spec, std::move(params)), c.header.value("training", io::json::object()),
              c.header.value("seed", std::uint64_t{0})};
  return m;
}

inline void save_model(const std::filesystem::path& path, const ModelFile& m) {
  io::write_bytes(path, encode_model(m));
}

inline ModelFile load_model(const std::filesystem::path& path) { return decode_model(io::read_bytes(path)); }

}  // namespace naqr::nn
