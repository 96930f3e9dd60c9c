#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "badpix/common.hpp"

namespace badpix {

/// Dense n-dimensional array, row-major. The scalar type is a template
/// parameter: float for training, double for gradient verification.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    v.assign(static_cast<std::size_t>(numel_of(shape)), T(0));
  }
  Tensor(std::vector<int> s, std::vector<T> data)
      : shape(std::move(s)), v(std::move(data)) {
    if (static_cast<std::int64_t>(v.size()) != numel_of(shape)) {
      throw DataError(DataFault::dimension_mismatch,
                      "tensor data length does not match shape");
    }
  }

  static std::int64_t numel_of(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }
  void zero() { fill(T(0)); }

  T& operator[](std::size_t i) { return v[i]; }
  const T& operator[](std::size_t i) const { return v[i]; }

  /// 2-D accessors (shape [rows, cols]).
  T& at2(int r, int c) { return v[static_cast<std::size_t>(r) * shape[1] + c]; }
  const T& at2(int r, int c) const {
    return v[static_cast<std::size_t>(r) * shape[1] + c];
  }

  /// 3-D accessors (shape [ch, rows, cols]).
  T& at3(int ch, int r, int c) {
    return v[(static_cast<std::size_t>(ch) * shape[1] + r) * shape[2] + c];
  }
  const T& at3(int ch, int r, int c) const {
    return v[(static_cast<std::size_t>(ch) * shape[1] + r) * shape[2] + c];
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace badpix
