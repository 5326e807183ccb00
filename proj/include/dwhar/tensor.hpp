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

// Dense row-major float64 tensors and a reverse-mode tape.
//
// A Tensor is a cheap handle onto shared storage. Operations never modify
// their inputs; they allocate a new output and, when a Tape is active on the
// calling thread and any input requires a gradient, append a backward rule
// to that tape. backward() replays the rules in reverse recording order.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dwhar/error.hpp"

namespace dwhar {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<double>> storage;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false) {
    for (std::size_t d : shape) {
      if (d == 0) {
        throw ConfigError("tensor dimension sizes must be positive, got " +
                          shape_str(shape));
      }
    }
    if (numel(shape) != values.size()) {
      throw ConfigError("tensor shape " + shape_str(shape) + " holds " +
                        std::to_string(numel(shape)) + " values, got " +
                        std::to_string(values.size()));
    }
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->storage = std::make_shared<std::vector<double>>(std::move(values));
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  /// A new handle with a different shape over the same storage.
  Tensor view(Shape shape) const {
    if (numel(shape) != size()) {
      throw ConfigError("cannot view " + shape_str(this->shape()) + " as " +
                        shape_str(shape));
    }
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->storage = impl_->storage;
    return t;
  }

  /// Deep copy of values; the copy does not share gradient state.
  Tensor clone() const {
    return from(shape(), *impl_->storage, requires_grad());
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->storage->size(); }

  std::span<const double> data() const { return *impl_->storage; }
  /// Mutation is reserved for parameter updates between forward passes.
  std::span<double> mutable_data() { return *impl_->storage; }

  double operator[](std::size_t i) const { return (*impl_->storage)[i]; }
  double item() const {
    if (size() != 1) {
      throw UsageError("item() on tensor of shape " + shape_str(shape()));
    }
    return (*impl_->storage)[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  /// Allocates a zero gradient buffer on first use. Gradients are side state
  /// of the shared node, so this is available through const handles.
  std::span<double> mutable_grad() const {
    if (impl_->grad.empty()) impl_->grad.assign(size(), 0.0);
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.clear(); }

  /// Identity of the underlying node, for diagnostics and tape bookkeeping.
  const void* id() const { return impl_.get(); }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered record of differentiable operations.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::vector<Tensor> inputs, Tensor output, BackwardFn rule) {
    entries_.push_back({std::move(inputs), std::move(output), std::move(rule)});
  }

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  friend void backward(Tensor& loss, Tape& tape);

  struct Entry {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn rule;
  };
  std::vector<Entry> entries_;
};

namespace detail {

inline Tape*& active_tape() {
  thread_local Tape* tape = nullptr;
  return tape;
}

}  // namespace detail

/// Makes `tape` the recording target for the current thread while alive.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(detail::active_tape()) {
    detail::active_tape() = &tape;
  }
  ~TapeScope() { detail::active_tape() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

namespace detail {

/// Records `rule` if a tape is active and any input needs a gradient.
/// The rule reads the output gradient and accumulates into the inputs.
inline void record(std::initializer_list<Tensor> inputs, Tensor& output,
                   Tape::BackwardFn rule) {
  Tape* tape = active_tape();
  if (tape == nullptr) return;
  const bool needed = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
    return t.defined() && t.requires_grad();
  });
  if (!needed) return;
  output.set_requires_grad(true);
  tape->record(std::vector<Tensor>(inputs), output, std::move(rule));
}

}  // namespace detail

/// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse.
/// Gradients accumulate into every requires_grad tensor reachable from loss.
inline void backward(Tensor& loss, Tape& tape) {
  if (!loss.defined() || loss.size() != 1) {
    throw UsageError("backward() needs a scalar loss");
  }
  loss.mutable_grad()[0] += 1.0;
  for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // not reachable from loss
    it->rule();
  }
}

}  // namespace dwhar
