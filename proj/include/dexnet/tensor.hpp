#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dexnet/error.hpp"

namespace dexnet::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using VectorMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVectorMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

/// Dense NCHW tensor. Vectors and matrices use trailing unit dimensions.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t n, std::size_t c, std::size_t h = 1, std::size_t w = 1, T fill = T(0))
      : shape_{n, c, h, w}, data_(n * c * h * w, fill) {}

  static Tensor like(const Tensor& other) { return Tensor(other.n(), other.c(), other.h(), other.w()); }

  std::size_t n() const { return shape_[0]; }
  std::size_t c() const { return shape_[1]; }
  std::size_t h() const { return shape_[2]; }
  std::size_t w() const { return shape_[3]; }
  const std::array<std::size_t, 4>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane() const { return shape_[2] * shape_[3]; }
  std::size_t sample_size() const { return shape_[1] * shape_[2] * shape_[3]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }

  T* sample(std::size_t i) { return data_.data() + i * sample_size(); }
  const T* sample(std::size_t i) const { return data_.data() + i * sample_size(); }

  T& operator()(std::size_t i, std::size_t ch, std::size_t y = 0, std::size_t x = 0) {
    return data_[((i * shape_[1] + ch) * shape_[2] + y) * shape_[3] + x];
  }
  const T& operator()(std::size_t i, std::size_t ch, std::size_t y = 0, std::size_t x = 0) const {
    return data_[((i * shape_[1] + ch) * shape_[2] + y) * shape_[3] + x];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }
  void reshape(std::size_t n, std::size_t c, std::size_t h = 1, std::size_t w = 1) {
    if (n * c * h * w != data_.size()) throw DimensionError("reshape changes element count");
    shape_ = {n, c, h, w};
  }

  Tensor& operator+=(const Tensor& other) {
    if (other.shape_ != shape_) throw DimensionError("tensor shape mismatch in +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  std::string shape_string() const {
    return "(" + std::to_string(shape_[0]) + "," + std::to_string(shape_[1]) + "," + std::to_string(shape_[2]) +
           "," + std::to_string(shape_[3]) + ")";
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(n(), c(), h(), w());
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

 private:
  std::array<std::size_t, 4> shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

/// Concatenates along channels. All inputs share n, h, w.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) throw DimensionError("concat shape mismatch");
  Tensor<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
  for (std::size_t i = 0; i < a.n(); ++i) {
    std::copy_n(a.sample(i), a.sample_size(), out.sample(i));
    std::copy_n(b.sample(i), b.sample_size(), out.sample(i) + a.sample_size());
  }
  return out;
}

/// Channels [begin, begin + count) of `t`.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& t, std::size_t begin, std::size_t count) {
  Tensor<T> out(t.n(), count, t.h(), t.w());
  const std::size_t p = t.plane();
  for (std::size_t i = 0; i < t.n(); ++i) std::copy_n(t.sample(i) + begin * p, count * p, out.sample(i));
  return out;
}

/// Adds `src` into channels [begin, begin + src.c()) of `dst`.
template <typename T>
void add_into_channels(Tensor<T>& dst, const Tensor<T>& src, std::size_t begin) {
  const std::size_t p = dst.plane();
  for (std::size_t i = 0; i < dst.n(); ++i) {
    T* d = dst.sample(i) + begin * p;
    const T* s = src.sample(i);
    for (std::size_t k = 0; k < src.sample_size(); ++k) d[k] += s[k];
  }
}

}  // namespace dexnet::nn
