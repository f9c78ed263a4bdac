#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sdm/errors.hpp"

namespace sdm {

// Dense tensor layout: (batch, channel, x, y, z), x fastest.
struct Shape5 {
  int n = 1, c = 1, x = 1, y = 1, z = 1;

  std::size_t numel() const {
    return std::size_t(n) * c * std::size_t(x) * y * z;
  }
  std::size_t spatial() const { return std::size_t(x) * y * z; }
  bool operator==(const Shape5&) const = default;
  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(x) +
           "x" + std::to_string(y) + "x" + std::to_string(z);
  }
};

// Value plus optional gradient buffer. Buffers are shared so backward
// closures and parameter stores see the same memory.
template <class T>
struct Tensor {
  Shape5 shape;
  std::shared_ptr<std::vector<T>> val;
  std::shared_ptr<std::vector<T>> grad;  // null when gradient is not tracked

  T* data() { return val->data(); }
  const T* data() const { return val->data(); }
  T* gdata() { return grad ? grad->data() : nullptr; }
  const T* gdata() const { return grad ? grad->data() : nullptr; }
  bool tracked() const { return grad != nullptr; }
  std::size_t numel() const { return shape.numel(); }
};

// Reverse-mode tape. Ops append backward closures during the forward pass;
// backward() replays them newest-first. One tape per forward pass, single
// owner, not thread-safe.
template <class T>
class Tape {
 public:
  Tensor<T> leaf(const Shape5& s, bool requires_grad = true) {
    Tensor<T> t;
    t.shape = s;
    t.val = std::make_shared<std::vector<T>>(s.numel(), T(0));
    if (requires_grad) t.grad = std::make_shared<std::vector<T>>(s.numel(), T(0));
    return t;
  }

  Tensor<T> leaf(const Shape5& s, std::vector<T> init, bool requires_grad = true) {
    if (init.size() != s.numel()) {
      throw ValidationError("tensor init size does not match shape " + s.str());
    }
    Tensor<T> t;
    t.shape = s;
    t.val = std::make_shared<std::vector<T>>(std::move(init));
    if (requires_grad) t.grad = std::make_shared<std::vector<T>>(s.numel(), T(0));
    return t;
  }

  // Wraps persistent buffers (e.g. network parameters) without copying.
  Tensor<T> attach(const Shape5& s, std::shared_ptr<std::vector<T>> value,
                   std::shared_ptr<std::vector<T>> grad) {
    if (!value || value->size() != s.numel()) {
      throw ValidationError("attached value size does not match shape " + s.str());
    }
    if (grad && grad->size() != s.numel()) {
      throw ValidationError("attached grad size does not match shape " + s.str());
    }
    Tensor<T> t;
    t.shape = s;
    t.val = std::move(value);
    t.grad = std::move(grad);
    return t;
  }

  // Output allocator for ops; gradient slot present only when some input
  // is tracked.
  Tensor<T> result(const Shape5& s, bool track) { return leaf(s, track); }

  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  void backward(const Tensor<T>& out, const std::vector<T>& seed) {
    if (!out.tracked()) {
      throw ValidationError("backward target does not track gradients");
    }
    if (seed.size() != out.numel()) {
      throw ValidationError("backward seed size does not match output");
    }
    std::copy(seed.begin(), seed.end(), out.grad->begin());
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  std::size_t num_recorded() const { return ops_.size(); }

 private:
  std::vector<std::function<void()>> ops_;
};

}  // namespace sdm
