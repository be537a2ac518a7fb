#pragma once

#include <cassert>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

namespace mmreg::nn {

// Dense row-major tensor. Feature maps and activations use NCHW order.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(numel(shape_), T(0));
  }

  static std::size_t numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // NCHW accessor.
  T& operator()(int n, int c, int h, int w) {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  T operator()(int n, int c, int h, int w) const {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  // 2-D accessor for matrices [rows, cols].
  T& operator()(int r, int c) {
    return data_[static_cast<std::size_t>(r) * shape_[1] + c];
  }
  T operator()(int r, int c) const {
    return data_[static_cast<std::size_t>(r) * shape_[1] + c];
  }

  void fill(T v) { data_.assign(data_.size(), v); }
  void set_zero() { fill(T(0)); }

  void reshape(std::vector<int> shape) {
    assert(numel(shape) == data_.size());
    shape_ = std::move(shape);
  }

  Tensor reshaped(std::vector<int> shape) const {
    Tensor t = *this;
    t.reshape(std::move(shape));
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.reshape_raw(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  // internal: resize without the numel assertion (used by cast()).
  void reshape_raw(const std::vector<int>& shape) {
    shape_ = shape;
    data_.assign(numel(shape_), T(0));
  }

 private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

template <typename T>
std::string shape_string(const Tensor<T>& t) {
  std::string s = "[";
  for (int i = 0; i < t.ndim(); ++i) {
    if (i) s += ",";
    s += std::to_string(t.dim(i));
  }
  return s + "]";
}

using Tensorf = Tensor<float>;

}  // namespace mmreg::nn
