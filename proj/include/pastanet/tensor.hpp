#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "pastanet/types.hpp"

namespace pastanet::diff {

/// Allocator that skips value-initialization for trivial element types, so
/// buffers that are fully overwritten right after allocation avoid a
/// redundant zeroing pass. Tensor's zeroing stays explicit.
template <typename T>
struct default_init_allocator : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = default_init_allocator<U>;
  };
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    if constexpr (sizeof...(Args) == 0)
      ::new (static_cast<void*>(p)) U;
    else
      ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

/// Dense row-major array. float for training, double for gradient checking.
template <typename T>
struct Tensor {
  using Storage = std::vector<T, default_init_allocator<T>>;

  std::vector<std::size_t> shape;
  Storage v;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    v.resize(numel_of(shape));
    std::fill(v.begin(), v.end(), T(0));
  }
  Tensor(std::vector<std::size_t> s, const std::vector<T>& data) : shape(std::move(s)) {
    if (data.size() != numel_of(shape)) throw data_error("tensor data does not match shape");
    v.assign(data.begin(), data.end());
  }

  /// Allocation without the zeroing pass; every element must be written
  /// before it is read.
  static Tensor uninitialized(std::vector<std::size_t> s) {
    Tensor t;
    t.shape = std::move(s);
    t.v.resize(numel_of(t.shape));
    return t;
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

  std::size_t numel() const { return v.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T& operator[](std::size_t i) { return v[i]; }
  const T& operator[](std::size_t i) const { return v[i]; }

  // 2-D accessors (row-major).
  T& at2(std::size_t r, std::size_t c) { return v[r * shape[1] + c]; }
  const T& at2(std::size_t r, std::size_t c) const { return v[r * shape[1] + c]; }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }
  void zero() { fill(T(0)); }

  bool all_finite() const {
    for (const T& x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace pastanet::diff
