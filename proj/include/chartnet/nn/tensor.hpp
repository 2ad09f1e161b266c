#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "chartnet/error.hpp"

namespace chartnet::nn {

// Dense row-major array. Vectors are carried as 1 x N rows so that every
// linear map is a plain matrix product.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(count(shape_), fill) {}

  Tensor(std::vector<int> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) throw Error(ErrorCode::ShapeMismatch, "tensor data/shape size");
  }

  static Tensor row(std::vector<T> values) {
    const int n = static_cast<int>(values.size());
    return Tensor({1, n}, std::move(values));
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // 2-D views: rows() x cols(); higher ranks flatten leading dims.
  int cols() const { return shape_.empty() ? 0 : shape_.back(); }
  int rows() const { return cols() == 0 ? 0 : static_cast<int>(data_.size() / static_cast<std::size_t>(cols())); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  const T& at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }

  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void reshape(std::vector<int> shape) {
    if (count(shape) != data_.size()) throw Error(ErrorCode::ShapeMismatch, "reshape size");
    shape_ = std::move(shape);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static std::size_t count(const std::vector<int>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
  }

 private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

std::string shape_string(const std::vector<int>& shape);

template <class To, class From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> d(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) d[i] = static_cast<To>(t[i]);
  return Tensor<To>(t.shape(), std::move(d));
}

}  // namespace chartnet::nn
