#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "error.hpp"

namespace dssc {

// Dense row-major N-dimensional array over float or double. Values produced
// by an operator are treated as immutable; only parameter tensors are updated
// in place, and never while a forward/backward pass is running.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(checked_size(shape_), T(0));
  }

  Tensor(std::vector<int> shape, T fill) : shape_(std::move(shape)) {
    data_.assign(checked_size(shape_), fill);
  }

  static Tensor from(std::vector<int> shape, std::vector<T> data) {
    Tensor t;
    if (checked_size(shape) != static_cast<std::int64_t>(data.size())) {
      throw Error(ErrorCode::shape_mismatch,
                  "tensor data length " + std::to_string(data.size()) +
                      " does not match shape " + shape_str(shape));
    }
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  T operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // Multi-index access; convenient in tests and cold paths.
  T& at(std::initializer_list<int> idx) { return data_[static_cast<std::size_t>(offset(idx))]; }
  T at(std::initializer_list<int> idx) const { return data_[static_cast<std::size_t>(offset(idx))]; }

  void fill(T v) { data_.assign(data_.size(), v); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::string shape_str() const { return shape_str(shape_); }

  static std::string shape_str(const std::vector<int>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(shape[i]);
    }
    return s + ")";
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::int64_t i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
    return out;
  }

 private:
  std::int64_t offset(std::initializer_list<int> idx) const {
    std::int64_t off = 0;
    int d = 0;
    for (int i : idx) {
      off = off * shape_[static_cast<std::size_t>(d)] + i;
      ++d;
    }
    return off;
  }

  static std::int64_t checked_size(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
      if (e <= 0) {
        throw Error(ErrorCode::invalid_argument,
                    "tensor extents must be positive, got " + shape_str(shape));
      }
      n *= e;
    }
    return n;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <typename T, typename... Args>
TensorPtr<T> make_tensor(Args&&... args) {
  return std::make_shared<Tensor<T>>(std::forward<Args>(args)...);
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (std::int64_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(static_cast<double>(t[i]))) return false;
  }
  return true;
}

}  // namespace dssc
