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

// Binary container shared by frame sets and model files:
//
//   offset  size  field
//   0       4     magic (ASCII, e.g. "NAQR")
//   4       2     format version, uint16 little-endian
//   6       4     JSON header length L, uint32 little-endian
//   10      L     JSON header, UTF-8, no terminator
//   10+L    4*N   payload: N IEEE-754 binary32 values, little-endian
//
// N is implied by the header; readers reject trailing or missing bytes.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "naqr/error.hpp"

namespace naqr::io {

using nlohmann::json;

struct Container {
  json header;
  std::vector<float> payload;
};

inline void append_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::vector<std::uint8_t> encode_container(std::string_view magic, std::uint16_t version,
                                                  const json& header, std::span<const float> payload) {
  if (magic.size() != 4) throw ValidationError("container magic must be 4 bytes");
  const std::string text = header.dump();
  std::vector<std::uint8_t> out;
  out.reserve(10 + text.size() + 4 * payload.size());
  out.insert(out.end(), magic.begin(), magic.end());
  append_u16(out, version);
  append_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (float f : payload) append_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

/// `payload_len` maps the parsed header to the expected number of floats.
template <class PayloadLen>
Container decode_container(std::span<const std::uint8_t> bytes, std::string_view magic,
                           std::uint16_t version, PayloadLen&& payload_len) {
  if (bytes.size() < 10) throw IoError("container truncated before header");
  if (std::memcmp(bytes.data(), magic.data(), 4) != 0) {
    throw IoError("bad magic: expected \"" + std::string(magic) + "\"");
  }
  const std::uint16_t got_version =
      static_cast<std::uint16_t>(bytes[4] | (static_cast<std::uint16_t>(bytes[5]) << 8));
  if (got_version != version) {
    throw IoError("unsupported format version " + std::to_string(got_version));
  }
  const std::uint32_t len = read_u32(bytes.data() + 6);
  if (bytes.size() < 10ull + len) throw IoError("container truncated inside JSON header");
  Container c;
  try {
    c.header = json::parse(bytes.begin() + 10, bytes.begin() + 10 + len);
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed JSON header: ") + e.what());
  }
  const std::size_t n = payload_len(c.header);
  const std::size_t expected = 10ull + len + 4ull * n;
  if (bytes.size() != expected) {
    throw IoError("payload length mismatch: expected " + std::to_string(expected) + " bytes, file has " +
                  std::to_string(bytes.size()));
  }
  c.payload.resize(n);
  const std::uint8_t* p = bytes.data() + 10 + len;
  for (std::size_t i = 0; i < n; ++i) c.payload[i] = std::bit_cast<float>(read_u32(p + 4 * i));
  return c;
}

inline void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace naqr::io
