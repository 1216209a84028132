// Copyright 2026 The oarsi-mt Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Flat binary weight container.
//
//   magic    "OMTW" (4 bytes)
//   version  u32 LE (currently 1)
//   count    u64 LE
//   per tensor:
//     name_len u32 LE, name bytes (UTF-8)
//     rank     u32 LE, extents i64 LE x rank
//     data     f32 LE x product(extents)

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "oarsi/tensor.hpp"

namespace oarsi {

inline constexpr std::uint32_t kWeightFormatVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;

  bool operator==(const NamedTensor&) const = default;
};

std::string encode_weights(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_weights(std::string_view bytes);

void write_weights(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_weights(const std::filesystem::path& path);

/// Reads a whole file; IoError when missing/unreadable.
std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace oarsi
