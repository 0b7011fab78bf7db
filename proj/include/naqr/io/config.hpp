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

// JSON forms of the configuration structs. Readers reject unknown keys and
// name the offending field.

#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

#include "naqr/arch.hpp"
#include "naqr/io/container.hpp"
#include "naqr/pipeline.hpp"
#include "naqr/simulator.hpp"

namespace naqr::io {

/// Throws ValidationError if `j` is not an object or has a key outside `allowed`.
inline void require_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ValidationError("unknown key \"" + where + (where.empty() ? "" : ".") + key + "\"");
    }
  }
}

/// Reads `j[key]` into `out` if present.
template <class T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("field \"" + where + "." + key + "\" has the wrong type");
  }
}

inline json to_json(const sim::ArrayGeometry& g) {
  return {{"rows", g.rows},
          {"cols", g.cols},
          {"spacing_px", g.spacing_px},
          {"psf_sigma_px", g.psf_sigma_px},
          {"image_height", g.image_height},
          {"image_width", g.image_width},
          {"origin_x", g.origin_x},
          {"origin_y", g.origin_y}};
}

/// A "preset" key ("sparse" or "dense") seeds the geometry; other keys override it.
inline sim::ArrayGeometry geometry_from_json(const json& j, const std::string& where = "geometry") {
  require_keys(j, {"preset", "rows", "cols", "spacing_px", "psf_sigma_px", "image_height", "image_width", "origin_x",
                   "origin_y"},
               where);
  sim::ArrayGeometry g;
  if (j.contains("preset")) {
    const auto p = j.at("preset").get<std::string>();
    if (p == "sparse") {
      g = sim::sparse_geometry();
    } else if (p == "dense") {
      g = sim::dense_geometry();
    } else {
      throw ValidationError("field \"" + where + ".preset\" must be \"sparse\" or \"dense\"");
    }
  }
  read_opt(j, "rows", g.rows, where);
  read_opt(j, "cols", g.cols, where);
  read_opt(j, "spacing_px", g.spacing_px, where);
  read_opt(j, "psf_sigma_px", g.psf_sigma_px, where);
  read_opt(j, "image_height", g.image_height, where);
  read_opt(j, "image_width", g.image_width, where);
  read_opt(j, "origin_x", g.origin_x, where);
  read_opt(j, "origin_y", g.origin_y, where);
  return g;
}

inline json to_json(const sim::NoiseModel& n) {
  return {{"bright_photons_per_ms", n.bright_photons_per_ms},
          {"dark_photons_per_ms", n.dark_photons_per_ms},
          {"em_gain", n.em_gain},
          {"read_noise_rms", n.read_noise_rms},
          {"baseline_offset", n.baseline_offset},
          {"secondary_efficiency", n.secondary_efficiency}};
}

inline sim::NoiseModel noise_from_json(const json& j, const std::string& where = "noise") {
  require_keys(j, {"bright_photons_per_ms", "dark_photons_per_ms", "em_gain", "read_noise_rms", "baseline_offset",
                   "secondary_efficiency"},
               where);
  sim::NoiseModel n;
  read_opt(j, "bright_photons_per_ms", n.bright_photons_per_ms, where);
  read_opt(j, "dark_photons_per_ms", n.dark_photons_per_ms, where);
  read_opt(j, "em_gain", n.em_gain, where);
  read_opt(j, "read_noise_rms", n.read_noise_rms, where);
  read_opt(j, "baseline_offset", n.baseline_offset, where);
  read_opt(j, "secondary_efficiency", n.secondary_efficiency, where);
  return n;
}

inline json to_json(const sim::SimConfig& c) {
  return {{"geometry", to_json(c.geometry)}, {"noise", to_json(c.noise)}, {"n_images", c.n_images},
          {"p_fill", c.p_fill},              {"exposures_ms", c.exposures_ms}, {"seed", c.seed}};
}

inline sim::SimConfig sim_config_from_json(const json& j, const std::string& where = "sim") {
  require_keys(j, {"geometry", "noise", "n_images", "p_fill", "exposures_ms", "seed"}, where);
  sim::SimConfig c;
  if (j.contains("geometry")) c.geometry = geometry_from_json(j.at("geometry"), where + ".geometry");
  if (j.contains("noise")) c.noise = noise_from_json(j.at("noise"), where + ".noise");
  read_opt(j, "n_images", c.n_images, where);
  read_opt(j, "p_fill", c.p_fill, where);
  read_opt(j, "exposures_ms", c.exposures_ms, where);
  read_opt(j, "seed", c.seed, where);
  return c;
}

inline json to_json(const pipeline::TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"max_epochs", t.max_epochs}, {"batch_size", t.batch_size},
          {"seed", t.seed}};
}

inline pipeline::TrainConfig train_config_from_json(const json& j, pipeline::TrainConfig base,
                                                    const std::string& where) {
  require_keys(j, {"learning_rate", "max_epochs", "batch_size", "seed"}, where);
  read_opt(j, "learning_rate", base.learning_rate, where);
  read_opt(j, "max_epochs", base.max_epochs, where);
  read_opt(j, "batch_size", base.batch_size, where);
  read_opt(j, "seed", base.seed, where);
  return base;
}

inline arch::CnnArraySpec array_spec_from_json(const json& j, const std::string& where = "cnn_array_spec") {
  require_keys(j, {"conv_channels", "head_units"}, where);
  arch::CnnArraySpec s;
  read_opt(j, "conv_channels", s.conv_channels, where);
  read_opt(j, "head_units", s.head_units, where);
  return s;
}

}  // namespace naqr::io
