#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "sfcl/error.hpp"

namespace sfcl {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

template <typename T>
concept Scalar = std::is_same_v<T, float> || std::is_same_v<T, double>;

/// Dense row-major array. Value semantics; copying copies the data.
template <Scalar T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape dims, T fill = T{0}) : dims_(std::move(dims)), data_(numel(dims_), fill) {
    check_dims();
  }
  Tensor(Shape dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    check_dims();
    if (numel(dims_) != data_.size())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match dims " +
                       shape_str(dims_));
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  const Shape& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  template <typename... Idx>
  T& at(Idx... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <typename... Idx>
  const T& at(Idx... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != dims_.size()) throw ShapeError("index rank mismatch for " + shape_str(dims_));
    std::size_t off = 0;
    std::size_t a = 0;
    for (std::size_t i : idx) {
      if (i >= dims_[a]) throw ShapeError("index out of range on axis " + std::to_string(a) + " of " + shape_str(dims_));
      off = off * dims_[a] + i;
      ++a;
    }
    return off;
  }

  /// Same data, new dims. Element count must agree.
  Tensor reshaped(Shape dims) const {
    if (numel(dims) != data_.size())
      throw ShapeError("reshape " + shape_str(dims_) + " -> " + shape_str(dims) + " changes element count");
    return Tensor(std::move(dims), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <Scalar U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(dims_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.dims_ == b.dims_ && a.data_ == b.data_; }

 private:
  void check_dims() const {
    for (std::size_t d : dims_)
      if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_str(dims_));
  }

  Shape dims_;
  std::vector<T> data_;
};

/// Row-major strides for `dims`.
inline Shape strides_of(const Shape& dims) {
  Shape s(dims.size(), 1);
  for (std::size_t i = dims.size(); i-- > 1;) s[i - 1] = s[i] * dims[i];
  return s;
}

}  // namespace sfcl
