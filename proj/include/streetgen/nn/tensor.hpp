#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "streetgen/grid.hpp"

namespace streetgen::nn {

/// Dense NCHW tensor.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w, T value = T{})
      : n_(n), c_(c), h_(h), w_(w), data_(static_cast<std::size_t>(n) * c * h * w, value) {}

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h_) * w_; }
  std::size_t sample_size() const { return static_cast<std::size_t>(c_) * h_ * w_; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T* sample(int i) { return data_.data() + i * sample_size(); }
  const T* sample(int i) const { return data_.data() + i * sample_size(); }
  T* channel(int i, int ch) { return sample(i) + ch * plane(); }
  const T* channel(int i, int ch) const { return sample(i) + ch * plane(); }

  T& operator()(int i, int ch, int r, int col) { return data_[((static_cast<std::size_t>(i) * c_ + ch) * h_ + r) * w_ + col]; }
  T operator()(int i, int ch, int r, int col) const {
    return data_[((static_cast<std::size_t>(i) * c_ + ch) * h_ + r) * w_ + col];
  }

  bool same_shape(const Tensor& o) const { return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }
  std::string shape_string() const {
    return std::to_string(n_) + "x" + std::to_string(c_) + "x" + std::to_string(h_) + "x" + std::to_string(w_);
  }
  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<T> data_;
};

template <class T>
void set_channel(Tensor<T>& t, int i, int ch, const FloatGrid& g) {
  if (g.width() != t.w() || g.height() != t.h()) throw Error("set_channel: grid shape mismatch");
  T* dst = t.channel(i, ch);
  for (std::size_t k = 0; k < t.plane(); ++k) dst[k] = static_cast<T>(g.data()[k]);
}

template <class T>
FloatGrid get_channel(const Tensor<T>& t, int i, int ch) {
  FloatGrid g(t.w(), t.h());
  const T* src = t.channel(i, ch);
  for (std::size_t k = 0; k < t.plane(); ++k) g.data()[k] = static_cast<float>(src[k]);
  return g;
}

}  // namespace streetgen::nn
