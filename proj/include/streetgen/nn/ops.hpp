#pragma once

#include <span>

#include "streetgen/nn/tensor.hpp"

namespace streetgen::nn {

enum class Activation { none, relu, leaky_relu, sigmoid };

struct ConvGeometry {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  int dilation = 1;
  bool transposed = false;

  int output_size(int in) const;
  /// Weight layout: conv [out, in, k, k]; transposed [in, out, k, k].
  std::size_t weight_size() const {
    return static_cast<std::size_t>(in_channels) * out_channels * kernel * kernel;
  }
};

/// Unfolds an image (c, h, w) into rows c*k*k by columns hc*wc of the sliding grid.
template <class T>
void im2col(const T* image, int channels, int h, int w, int hc, int wc, const ConvGeometry& g, T* cols);
/// Adjoint of im2col; accumulates into image.
template <class T>
void col2im(const T* cols, int channels, int h, int w, int hc, int wc, const ConvGeometry& g, T* image);

template <class T>
Tensor<T> conv_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias,
                       const ConvGeometry& g);

/// Accumulates into dweight/dbias (skipped when empty); writes dx when non-null.
template <class T>
void conv_backward(const Tensor<T>& x, std::span<const T> weight, const ConvGeometry& g, const Tensor<T>& dy,
                   std::span<T> dweight, std::span<T> dbias, Tensor<T>* dx);

template <class T>
void activate(Tensor<T>& y, Activation a, T slope = T(0.2));
/// Multiplies dy by the activation derivative, expressed through the output y.
template <class T>
void activate_backward(const Tensor<T>& y, Activation a, Tensor<T>& dy, T slope = T(0.2));

/// Mean over factor x factor blocks.
template <class T>
Tensor<T> area_downsample(const Tensor<T>& x, int factor);

/// Channel concatenation of equally sized tensors.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
/// Channels [begin, end) of x.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int end);

/// One power-iteration step on the rows x cols view of `weight`, then writes
/// weight / sigma into `normalized`. With update=false the stored u, v are
/// used as is. Returns sigma; returns 0 and copies the weight unchanged when
/// the weight is numerically zero.
template <class T>
T spectral_normalize(std::span<const T> weight, int rows, int cols, std::span<T> u, std::span<T> v, bool update,
                     std::span<T> normalized);

/// dL/dW from dL/dW_sn, treating u and v as constants.
template <class T>
void spectral_normalize_backward(std::span<const T> grad_normalized, std::span<const T> normalized, T sigma,
                                 std::span<const T> u, std::span<const T> v, int rows, int cols,
                                 std::span<T> grad_weight);

}  // namespace streetgen::nn
