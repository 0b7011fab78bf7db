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

// Frame-set files: magic "NAQR", version 1, JSON header
//   {"shape": [n, h, w], "dtype": "f32le", "geometry": {...}, "noise": {...},
//    "exposure_ms": e, "path": "secondary", "seed": s}
// followed by n*h*w little-endian floats, frame-major then row-major.

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "naqr/frame.hpp"
#include "naqr/io/config.hpp"
#include "naqr/io/container.hpp"
#include "naqr/simulator.hpp"

namespace naqr::io {

inline constexpr char kFrameSetMagic[] = "NAQR";
inline constexpr std::uint16_t kFrameSetVersion = 1;

struct FrameSetFile {
  std::vector<Frame> frames;
  std::optional<sim::ArrayGeometry> geometry;
  std::optional<sim::NoiseModel> noise;
  FrameSetMeta meta;
};

inline std::vector<std::uint8_t> encode_frameset(const FrameSetFile& f) {
  const std::size_t n = f.frames.size();
  const std::size_t h = n ? f.frames[0].height : 0, w = n ? f.frames[0].width : 0;
  std::vector<float> payload;
  payload.reserve(n * h * w);
  for (const auto& fr : f.frames) {
    if (fr.height != h || fr.width != w) throw ShapeError("frame set mixes frame shapes");
    payload.insert(payload.end(), fr.pixels.begin(), fr.pixels.end());
  }
  json header = {{"shape", {n, h, w}},
                 {"dtype", "f32le"},
                 {"geometry", f.geometry ? to_json(*f.geometry) : json(nullptr)},
                 {"noise", f.noise ? to_json(*f.noise) : json(nullptr)},
                 {"exposure_ms", f.meta.exposure_ms},
                 {"path", f.meta.path_id},
                 {"seed", f.meta.seed}};
  return encode_container(kFrameSetMagic, kFrameSetVersion, header, payload);
}

inline FrameSetFile decode_frameset(std::span<const std::uint8_t> bytes) {
  std::size_t n = 0, h = 0, w = 0;
  auto c = decode_container(bytes, kFrameSetMagic, kFrameSetVersion, [&](const json& hdr) {
    try {
      if (hdr.at("dtype").get<std::string>() != "f32le") throw IoError("unsupported frame dtype");
      const auto& s = hdr.at("shape");
      if (!s.is_array() || s.size() != 3) throw IoError("frame set shape must be [n, h, w]");
      n = s.at(0).get<std::size_t>();
      h = s.at(1).get<std::size_t>();
      w = s.at(2).get<std::size_t>();
    } catch (const json::exception& e) {
      throw IoError(std::string("malformed frame set header: ") + e.what());
    }
    return n * h * w;
  });
  FrameSetFile f;
  try {
    if (!c.header.at("geometry").is_null()) f.geometry = geometry_from_json(c.header.at("geometry"));
    if (!c.header.at("noise").is_null()) f.noise = noise_from_json(c.header.at("noise"));
    f.meta.exposure_ms = c.header.at("exposure_ms").get<double>();
    f.meta.path_id = c.header.at("path").get<std::string>();
    f.meta.seed = c.header.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed frame set header: ") + e.what());
  } catch (const ValidationError& e) {
    throw IoError(std::string("malformed frame set header: ") + e.what());
  }
  f.frames.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto first = c.payload.begin() + static_cast<std::ptrdiff_t>(i * h * w);
    f.frames.emplace_back(h, w, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(h * w)));
  }
  return f;
}

inline void save_frameset(const std::filesystem::path& path, const FrameSetFile& f) {
  write_bytes(path, encode_frameset(f));
}

inline FrameSetFile load_frameset(const std::filesystem::path& path) {
  try {
    return decode_frameset(read_bytes(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

/// One path of a simulated dataset as a file.
inline FrameSetFile frameset_from(const sim::SimDataset& ds, sim::Path p) {
  return {ds.frames(p), ds.geometry, ds.noise, {ds.exposure_ms, sim::path_name(p), ds.seed}};
}

}  // namespace naqr::io
