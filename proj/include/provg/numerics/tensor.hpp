#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "provg/error.hpp"

namespace provg::nx {

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

/// Dense row-major tensor. Every kernel in the library treats tensors as
/// matrices: rank-1 tensors are single rows, feature maps are (H*W x C).
template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;
  bool requires_grad = false;

  Tensor() = default;

  Tensor(std::size_t rows, std::size_t cols, T fill = T(0))
      : shape{rows, cols}, data(rows * cols, fill) {
    if (rows == 0 || cols == 0) throw ShapeError("tensor extents must be positive");
  }

  Tensor(std::vector<std::size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape.empty()) throw ShapeError("tensor needs at least one extent");
    std::size_t n = 1;
    for (auto e : shape) {
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
      n *= e;
    }
    if (n != data.size())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_string(shape));
  }

  static Tensor from_rows(std::size_t rows, std::size_t cols, std::vector<T> d) {
    return Tensor({rows, cols}, std::move(d));
  }

  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.size() == 1 ? 1 : shape[0]; }
  std::size_t cols() const {
    if (shape.size() == 1) return shape[0];
    std::size_t n = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) n *= shape[i];
    return n;
  }
  std::size_t numel() const { return data.size(); }

  T& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    out.requires_grad = requires_grad;
    return out;
  }

  bool operator==(const Tensor& o) const { return shape == o.shape && data == o.data; }
};

}  // namespace provg::nx
