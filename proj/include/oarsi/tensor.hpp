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

// Dense NCHW tensors and the reverse-mode tape that records operations on
// them. Tensor is a shared handle: copies alias the same buffer, use
// clone() for a deep copy.

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "oarsi/errors.hpp"
#include "oarsi/rng.hpp"

namespace oarsi {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient flows in
  bool requires_grad = false;
  bool produced_by_op = false;
};

template <typename T>
class Tensor {
 public:
  using Storage = TensorStorage<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : s_(std::make_shared<Storage>()) {
    for (auto e : shape) {
      if (e <= 0) throw ConfigError("tensor extents must be positive, got " + shape_str(shape));
    }
    s_->data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
    s_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : Tensor(std::move(shape)) {
    if (values.size() != s_->data.size()) {
      throw ConfigError("tensor " + shape_str(s_->shape) + " expects " +
                        std::to_string(s_->data.size()) + " values, got " +
                        std::to_string(values.size()));
    }
    s_->data = std::move(values);
  }

  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::int64_t dim(std::size_t axis) const { return s_->shape.at(axis); }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t numel() const { return s_->data.size(); }

  std::span<T> data() { return s_->data; }
  std::span<const T> data() const { return s_->data; }
  T item() const {
    if (numel() != 1) throw UsageError("item() on non-scalar tensor " + shape_str(shape()));
    return s_->data[0];
  }
  T& operator[](std::size_t i) { return s_->data[i]; }
  const T& operator[](std::size_t i) const { return s_->data[i]; }

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool flag) {
    s_->requires_grad = flag;
    return *this;
  }
  bool has_grad() const { return !s_->grad.empty(); }
  std::span<const T> grad() const { return s_->grad; }
  std::span<T> mutable_grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T{0});
    return s_->grad;
  }
  void zero_grad() { s_->grad.clear(); }

  Tensor clone() const {
    Tensor out(shape());
    std::copy(s_->data.begin(), s_->data.end(), out.s_->data.begin());
    out.s_->requires_grad = s_->requires_grad;
    return out;
  }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }
  const std::shared_ptr<Storage>& storage() const { return s_; }

 private:
  std::shared_ptr<Storage> s_;
};

/// Ordered record of differentiable operations. Nodes are appended in
/// execution order, so the record is topologically sorted by construction and
/// backward() visits each node once by walking it in reverse.
///
/// The tape also owns the RNG used by stochastic ops (dropout).
template <typename T>
class Tape {
 public:
  using StoragePtr = std::shared_ptr<TensorStorage<T>>;
  using BackwardFn = std::function<void(std::span<const T> grad_out)>;

  explicit Tape(std::uint64_t seed = 0) : rng_(seed) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// When disabled, ops compute forward values only.
  bool recording() const { return recording_; }
  void set_recording(bool flag) { recording_ = flag; }

  /// True when an op over these inputs must be recorded.
  template <typename... Ts>
  bool needs_grad(const Ts&... inputs) const {
    return recording_ && (... || (inputs.defined() && inputs.requires_grad()));
  }

  void record(const char* op, std::vector<StoragePtr> inputs, StoragePtr output,
              BackwardFn fn) {
    output->requires_grad = true;
    output->produced_by_op = true;
    nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(fn)});
  }

  /// Populates grad buffers of every requires_grad tensor upstream of
  /// `loss`. Leaf gradients accumulate across calls; intermediate
  /// gradients are recomputed on each call.
  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw UsageError("backward() needs a scalar loss, got shape " +
                       (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    std::ptrdiff_t start = -1;
    for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(nodes_.size()) - 1; i >= 0; --i) {
      if (nodes_[static_cast<std::size_t>(i)].output == loss.storage()) {
        start = i;
        break;
      }
    }
    if (start < 0) throw UsageError("backward(): loss was not recorded on this tape");

    for (auto& node : nodes_) node.output->grad.clear();
    loss.storage()->grad.assign(1, T{1});
    for (std::ptrdiff_t i = start; i >= 0; --i) {
      auto& node = nodes_[static_cast<std::size_t>(i)];
      if (node.output->grad.empty()) continue;
      node.backward(std::span<const T>(node.output->grad));
    }
  }

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }
  const char* op_name(std::size_t i) const { return nodes_.at(i).op; }
  Rng& rng() { return rng_; }

 private:
  struct Node {
    const char* op;
    std::vector<StoragePtr> inputs;
    StoragePtr output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  Rng rng_;
  bool recording_ = true;
};

/// Adds `delta` into the gradient buffer of `target`, allocating it lazily.
template <typename T>
inline std::span<T> grad_buffer(const std::shared_ptr<TensorStorage<T>>& target) {
  if (target->grad.empty()) target->grad.assign(target->data.size(), T{0});
  return target->grad;
}

}  // namespace oarsi
