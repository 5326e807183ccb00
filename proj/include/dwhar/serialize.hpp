// Copyright 2026 The DecomposeWHAR Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Binary model file, all integers and floats little-endian:
//
//   magic    8 bytes  "DWHARMDL"
//   version  u32      1
//   digest   u64      ModelConfig::digest()
//   count    u32      number of tensors
//   count x {
//     name_len u32, name bytes,
//     rank u32, dims u64[rank],
//     values f64[prod(dims)]
//   }
//
// Parameters come first in ModelState order; auxiliary tensors (input
// normalization statistics) follow under the "aux." prefix.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dwhar/config.hpp"
#include "dwhar/error.hpp"
#include "dwhar/model.hpp"

namespace dwhar {

inline constexpr char kModelMagic[8] = {'D', 'W', 'H', 'A', 'R', 'M', 'D', 'L'};
inline constexpr std::uint32_t kModelVersion = 1;

struct ModelFile {
  ModelState state;
  std::vector<NamedTensor> aux;  // names without the "aux." prefix
};

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

inline std::uint64_t get_u64(std::istream& in, const std::string& where) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError(where + ": truncated model file");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint32_t get_u32(std::istream& in, const std::string& where) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError(where + ": truncated model file");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline void put_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u64(out, d);
  for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

}  // namespace detail

inline void save_model(const std::filesystem::path& path, const ModelConfig& cfg,
                       const ModelState& st, const std::vector<NamedTensor>& aux = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model '" + path.string() + "'");
  out.write(kModelMagic, sizeof kModelMagic);
  detail::put_u32(out, kModelVersion);
  detail::put_u64(out, cfg.digest());
  detail::put_u32(out, static_cast<std::uint32_t>(st.size() + aux.size()));
  for (const auto& p : st.params()) detail::put_tensor(out, p.name, p.value);
  for (const auto& a : aux) detail::put_tensor(out, "aux." + a.name, a.value);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

/// Loads a model written for `cfg`; the digest and every parameter name and
/// shape must agree with init_model(cfg).
inline ModelFile load_model(const std::filesystem::path& path, const ModelConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model '" + path.string() + "'");
  const std::string where = path.string();
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kModelMagic, 8) != 0) {
    throw DataError(where + ": not a model file (bad magic)");
  }
  const std::uint32_t version = detail::get_u32(in, where);
  if (version != kModelVersion) {
    throw DataError(where + ": unsupported model version " + std::to_string(version));
  }
  if (detail::get_u64(in, where) != cfg.digest()) {
    throw ConfigError(where + ": model was saved for a different configuration");
  }
  const ModelState layout = init_model(cfg);
  const std::uint32_t count = detail::get_u32(in, where);
  ModelFile file;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = detail::get_u32(in, where);
    if (name_len > 4096) throw DataError(where + ": corrupt tensor name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw DataError(where + ": truncated model file");
    const std::uint32_t rank = detail::get_u32(in, where);
    if (rank == 0 || rank > 8) throw DataError(where + ": corrupt rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_u64(in, where);
    std::vector<double> values(numel(shape));
    for (double& v : values) v = std::bit_cast<double>(detail::get_u64(in, where));
    Tensor t = Tensor::from(shape, std::move(values));
    if (name.rfind("aux.", 0) == 0) {
      file.aux.push_back({name.substr(4), t});
      continue;
    }
    if (!layout.contains(name) || layout.get(name).shape() != shape) {
      throw DataError(where + ": unexpected parameter '" + name + "' " + shape_str(shape));
    }
    file.state.add(name, t);
  }
  if (file.state.size() != layout.size()) {
    throw DataError(where + ": expected " + std::to_string(layout.size()) + " parameters, found " +
                    std::to_string(file.state.size()));
  }
  // Restore canonical parameter order.
  ModelState ordered;
  for (const auto& p : layout.params()) ordered.add(p.name, file.state.get(p.name));
  file.state = std::move(ordered);
  return file;
}

}  // namespace dwhar
