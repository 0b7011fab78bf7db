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

// Label and split tables as CSV.
//
//   labels.csv  image_index,site_index,label,provenance   one row per (image, site)
//   splits.csv  image_index,split                         one row per image

#pragma once

#include <charconv>
#include <filesystem>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "naqr/io/container.hpp"
#include "naqr/pipeline.hpp"

namespace naqr::io {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

/// Non-empty lines with any trailing '\r' removed.
inline std::vector<std::string_view> csv_lines(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) out.push_back(line);
    start = end + 1;
  }
  return out;
}

inline std::size_t parse_index(std::string_view s, std::size_t line_no) {
  std::size_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw IoError("line " + std::to_string(line_no) + ": \"" + std::string(s) + "\" is not a non-negative integer");
  }
  return v;
}

struct LabelTable {
  std::vector<std::uint8_t> labels;  // image-major
  std::size_t n_sites = 0;
  pipeline::Provenance provenance = pipeline::Provenance::dual_path;

  std::size_t n_images() const noexcept { return n_sites ? labels.size() / n_sites : 0; }
};

inline std::string labels_to_csv(std::span<const std::uint8_t> labels, std::size_t n_sites,
                                 pipeline::Provenance provenance) {
  if (n_sites == 0 || labels.size() % n_sites != 0) throw ShapeError("label table is not n_images x n_sites");
  std::ostringstream os;
  os << "image_index,site_index,label,provenance\n";
  const char* prov = pipeline::provenance_name(provenance);
  for (std::size_t k = 0; k < labels.size(); ++k) {
    if (labels[k] > 1) throw ValidationError("labels must be 0 or 1");
    os << k / n_sites << ',' << k % n_sites << ',' << int(labels[k]) << ',' << prov << '\n';
  }
  return os.str();
}

/// Rows may come in any order but must cover every (image, site) exactly once.
inline LabelTable labels_from_csv(std::string_view text) {
  const auto lines = csv_lines(text);
  if (lines.empty() || lines[0] != "image_index,site_index,label,provenance") {
    throw IoError("label file must start with header image_index,site_index,label,provenance");
  }
  struct Row {
    std::size_t image, site;
    std::uint8_t label;
  };
  std::vector<Row> rows;
  std::size_t max_image = 0, max_site = 0;
  LabelTable t;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_fields(lines[i]);
    if (f.size() != 4) throw IoError("line " + std::to_string(i + 1) + ": expected 4 fields");
    const auto label = parse_index(f[2], i + 1);
    if (label > 1) throw IoError("line " + std::to_string(i + 1) + ": label must be 0 or 1");
    pipeline::Provenance p;
    try {
      p = pipeline::parse_provenance(f[3]);
    } catch (const ValidationError& e) {
      throw IoError("line " + std::to_string(i + 1) + ": " + e.what());
    }
    if (i == 1) {
      t.provenance = p;
    } else if (p != t.provenance) {
      throw IoError("line " + std::to_string(i + 1) + ": mixed provenance in one label file");
    }
    rows.push_back({parse_index(f[0], i + 1), parse_index(f[1], i + 1), static_cast<std::uint8_t>(label)});
    max_image = std::max(max_image, rows.back().image);
    max_site = std::max(max_site, rows.back().site);
  }
  if (rows.empty()) throw IoError("label file has no rows");
  t.n_sites = max_site + 1;
  const std::size_t n_images = max_image + 1;
  if (rows.size() != n_images * t.n_sites) throw IoError("label file does not cover every (image, site) exactly once");
  t.labels.assign(rows.size(), 0);
  std::vector<bool> seen(rows.size(), false);
  for (const auto& r : rows) {
    const std::size_t k = r.image * t.n_sites + r.site;
    if (seen[k]) {
      throw IoError("duplicate row for image " + std::to_string(r.image) + ", site " + std::to_string(r.site));
    }
    seen[k] = true;
    t.labels[k] = r.label;
  }
  return t;
}

inline std::string splits_to_csv(std::span<const pipeline::Split> splits) {
  std::ostringstream os;
  os << "image_index,split\n";
  for (std::size_t i = 0; i < splits.size(); ++i) os << i << ',' << pipeline::split_name(splits[i]) << '\n';
  return os.str();
}

inline std::vector<pipeline::Split> splits_from_csv(std::string_view text) {
  const auto lines = csv_lines(text);
  if (lines.empty() || lines[0] != "image_index,split") throw IoError("split file must start with header image_index,split");
  std::vector<pipeline::Split> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_fields(lines[i]);
    if (f.size() != 2) throw IoError("line " + std::to_string(i + 1) + ": expected 2 fields");
    if (parse_index(f[0], i + 1) != out.size()) {
      throw IoError("line " + std::to_string(i + 1) + ": image indices must be consecutive from 0");
    }
    try {
      out.push_back(pipeline::parse_split(f[1]));
    } catch (const ValidationError& e) {
      throw IoError("line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

inline void save_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels, std::size_t n_sites,
                        pipeline::Provenance provenance) {
  write_text(path, labels_to_csv(labels, n_sites, provenance));
}

inline LabelTable load_labels(const std::filesystem::path& path) {
  try {
    return labels_from_csv(read_text(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline void save_splits(const std::filesystem::path& path, std::span<const pipeline::Split> splits) {
  write_text(path, splits_to_csv(splits));
}

inline std::vector<pipeline::Split> load_splits(const std::filesystem::path& path) {
  try {
    return splits_from_csv(read_text(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace naqr::io
