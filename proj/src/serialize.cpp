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

#include "oarsi/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace oarsi {
namespace {

constexpr char kMagic[4] = {'O', 'M', 'T', 'W'};

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get_le(const char* what) {
    need(sizeof(U), what);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return value;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw LoadError(std::string("weight container truncated while reading ") + what);
    }
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_weights(std::span<const NamedTensor> tensors) {
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kWeightFormatVersion);
  put_le<std::uint64_t>(out, tensors.size());
  for (const auto& t : tensors) {
    if (static_cast<std::size_t>(shape_numel(t.shape)) != t.data.size()) {
      throw UsageError("encode_weights: tensor '" + t.name + "' shape " + shape_str(t.shape) +
                       " does not match " + std::to_string(t.data.size()) + " values");
    }
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(e));
    for (float v : t.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<NamedTensor> decode_weights(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != std::string_view(kMagic, 4)) {
    throw LoadError("not a weight container (bad magic)");
  }
  const auto version = r.get_le<std::uint32_t>("version");
  if (version != kWeightFormatVersion) {
    throw LoadError("unsupported weight container version " + std::to_string(version));
  }
  const auto count = r.get_le<std::uint64_t>("tensor count");
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = r.get_le<std::uint32_t>("name length");
    t.name = std::string(r.take(name_len, "name"));
    const auto rank = r.get_le<std::uint32_t>("rank");
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto e = static_cast<std::int64_t>(r.get_le<std::uint64_t>("extent"));
      if (e <= 0) throw LoadError("tensor '" + t.name + "' has non-positive extent");
      t.shape.push_back(e);
    }
    const auto n = static_cast<std::size_t>(shape_numel(t.shape));
    if (n > bytes.size() / 4) throw LoadError("tensor '" + t.name + "' larger than container");
    t.data.resize(n);
    for (auto& v : t.data) v = std::bit_cast<float>(r.get_le<std::uint32_t>("data"));
    out.push_back(std::move(t));
  }
  if (!r.done()) throw LoadError("trailing bytes after last tensor");
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

void write_weights(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  write_file_atomic(path, encode_weights(tensors));
}

std::vector<NamedTensor> read_weights(const std::filesystem::path& path) {
  try {
    return decode_weights(read_file(path));
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

}  // namespace oarsi
