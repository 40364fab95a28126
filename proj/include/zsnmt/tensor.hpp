#pragma once

#include <memory>
#include <numeric>
#include <vector>

#include "zsnmt/common.hpp"

namespace zsnmt {

// Dense row-major tensor. Copies are cheap and share the underlying buffers;
// data is treated as immutable once a tensor has entered a computation
// (parameter updates are the documented exception and happen between tapes).
// requires_grad <=> grad buffer allocated, so adjoint accumulation never has
// to allocate during backward.
template <typename S>
struct TensorT {
  using Buffer = std::shared_ptr<std::vector<S>>;

  std::vector<size_t> shape;
  Buffer data;
  Buffer grad;
  bool requires_grad = false;

  TensorT() = default;

  size_t numel() const {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

  size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  S* ptr() { return data->data(); }
  const S* ptr() const { return data->data(); }
  S* gptr() { return grad->data(); }
  const S* gptr() const { return grad->data(); }

  bool defined() const { return static_cast<bool>(data); }

  S item() const {
    if (numel() != 1)
      throw value_error("item() on non-scalar tensor " + shape_str(shape));
    return (*data)[0];
  }

  static TensorT zeros(std::vector<size_t> shape) {
    TensorT t;
    size_t n = 1;
    for (size_t d : shape) {
      if (d == 0) throw shape_error("zero extent in shape " + shape_str(shape));
      n *= d;
    }
    if (shape.empty()) throw shape_error("rank-0 tensors are not supported");
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<S>>(n, S(0));
    return t;
  }

  static TensorT full(std::vector<size_t> shape, S v) {
    TensorT t = zeros(std::move(shape));
    for (S& x : *t.data) x = v;
    return t;
  }

  static TensorT from(std::vector<size_t> shape, std::vector<S> values) {
    TensorT t;
    size_t n = 1;
    for (size_t d : shape) n *= d;
    if (shape.empty() || n != values.size())
      throw shape_error("value count " + std::to_string(values.size()) +
                        " does not match shape " + shape_str(shape));
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<S>>(std::move(values));
    return t;
  }

  // Trainable leaf: grad buffer allocated up front, zero-filled.
  static TensorT param(std::vector<size_t> shape, std::vector<S> values) {
    TensorT t = from(std::move(shape), std::move(values));
    t.requires_grad = true;
    t.grad = std::make_shared<std::vector<S>>(t.numel(), S(0));
    return t;
  }

  static TensorT param_zeros(std::vector<size_t> shape) {
    TensorT t = zeros(std::move(shape));
    t.requires_grad = true;
    t.grad = std::make_shared<std::vector<S>>(t.numel(), S(0));
    return t;
  }

  // Shares the value buffer but terminates adjoint propagation.
  TensorT detached() const {
    TensorT t;
    t.shape = shape;
    t.data = data;
    t.requires_grad = false;
    return t;
  }

  // Deep copy of the values only (fresh buffer, no grad).
  TensorT clone_data() const {
    TensorT t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<S>>(*data);
    return t;
  }

  void zero_grad() {
    if (grad)
      for (S& g : *grad) g = S(0);
  }
};

template <typename S>
bool same_shape(const TensorT<S>& a, const TensorT<S>& b) {
  return a.shape == b.shape;
}

template <typename S>
bool bitwise_equal(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape != b.shape) return false;
  return std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(S)) == 0;
}

}  // namespace zsnmt
