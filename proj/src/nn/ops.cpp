#include "streetgen/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include <Eigen/Dense>

namespace streetgen::nn {

namespace {

template <class T>
T ordered_sum(const T* a, std::size_t n) {
  T s{};
  for (std::size_t i = 0; i < n; ++i) s += a[i];
  return s;
}

template <class T>
T ordered_dot(const T* a, const T* b, std::size_t n) {
  T s{};
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <class T>
using CMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using MapVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

}  // namespace

int ConvGeometry::output_size(int in) const {
  if (transposed) return (in - 1) * stride - 2 * pad + dilation * (kernel - 1) + 1;
  return (in + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1;
}

template <class T>
void im2col(const T* image, int channels, int h, int w, int hc, int wc, const ConvGeometry& g, T* cols) {
  const int k = g.kernel;
  const std::size_t cols_per_row = static_cast<std::size_t>(hc) * wc;
  for (int c = 0; c < channels; ++c) {
    const T* src = image + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* dst = cols + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * cols_per_row;
        const int off_r = ki * g.dilation - g.pad;
        const int off_c = kj * g.dilation - g.pad;
        // Valid output column range: 0 <= oc*s + off_c < w.
        const int oc_lo = std::min(wc, off_c >= 0 ? 0 : (-off_c + g.stride - 1) / g.stride);
        const int oc_hi = std::max(oc_lo, w - off_c <= 0 ? 0 : std::min(wc, (w - off_c - 1) / g.stride + 1));
        for (int orow = 0; orow < hc; ++orow) {
          T* d = dst + static_cast<std::size_t>(orow) * wc;
          const int ir = orow * g.stride + off_r;
          if (ir < 0 || ir >= h) {
            std::fill_n(d, wc, T{});
            continue;
          }
          const T* s = src + static_cast<std::size_t>(ir) * w;
          std::fill_n(d, oc_lo, T{});
          if (g.stride == 1) {
            std::copy(s + oc_lo + off_c, s + oc_hi + off_c, d + oc_lo);
          } else {
            for (int oc = oc_lo; oc < oc_hi; ++oc) d[oc] = s[oc * g.stride + off_c];
          }
          std::fill(d + oc_hi, d + wc, T{});
        }
      }
    }
  }
}

template <class T>
void col2im(const T* cols, int channels, int h, int w, int hc, int wc, const ConvGeometry& g, T* image) {
  const int k = g.kernel;
  const std::size_t cols_per_row = static_cast<std::size_t>(hc) * wc;
  for (int c = 0; c < channels; ++c) {
    T* dst = image + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* src = cols + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * cols_per_row;
        const int off_r = ki * g.dilation - g.pad;
        const int off_c = kj * g.dilation - g.pad;
        const int oc_lo = std::min(wc, off_c >= 0 ? 0 : (-off_c + g.stride - 1) / g.stride);
        const int oc_hi = std::max(oc_lo, w - off_c <= 0 ? 0 : std::min(wc, (w - off_c - 1) / g.stride + 1));
        for (int orow = 0; orow < hc; ++orow) {
          const int ir = orow * g.stride + off_r;
          if (ir < 0 || ir >= h) continue;
          const T* s = src + static_cast<std::size_t>(orow) * wc;
          T* d = dst + static_cast<std::size_t>(ir) * w;
          for (int oc = oc_lo; oc < oc_hi; ++oc) d[oc * g.stride + off_c] += s[oc];
        }
      }
    }
  }
}

template <class T>
Tensor<T> conv_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias,
                       const ConvGeometry& g) {
  if (x.c() != g.in_channels) {
    throw Error("conv: expected " + std::to_string(g.in_channels) + " input channels, got " +
                std::to_string(x.c()));
  }
  if (weight.size() != g.weight_size()) throw Error("conv: weight size mismatch");
  const int ho = g.output_size(x.h()), wo = g.output_size(x.w());
  if (ho <= 0 || wo <= 0) throw Error("conv: input " + x.shape_string() + " too small");
  Tensor<T> y(x.n(), g.out_channels, ho, wo);
  const int kk = g.kernel * g.kernel;
  if (!g.transposed) {
    const int K = g.in_channels * kk;
    const int P = ho * wo;
    const bool pointwise = g.kernel == 1 && g.stride == 1 && g.pad == 0;
    std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(K) * P);
    CMapMat<T> W(weight.data(), g.out_channels, K);
    for (int i = 0; i < x.n(); ++i) {
      const T* colp = x.sample(i);
      if (!pointwise) {
        im2col(x.sample(i), x.c(), x.h(), x.w(), ho, wo, g, cols.data());
        colp = cols.data();
      }
      MapMat<T> Y(y.sample(i), g.out_channels, P);
      Y.noalias() = W * CMapMat<T>(colp, K, P);
      if (!bias.empty()) Y.colwise() += CMapVec<T>(bias.data(), g.out_channels);
    }
  } else {
    const int K = g.out_channels * kk;
    const int P = x.h() * x.w();
    std::vector<T> cols(static_cast<std::size_t>(K) * P);
    CMapMat<T> W(weight.data(), g.in_channels, K);
    for (int i = 0; i < x.n(); ++i) {
      MapMat<T> C(cols.data(), K, P);
      C.noalias() = W.transpose() * CMapMat<T>(x.sample(i), g.in_channels, P);
      col2im(cols.data(), g.out_channels, ho, wo, x.h(), x.w(), g, y.sample(i));
      if (!bias.empty()) {
        MapMat<T> Y(y.sample(i), g.out_channels, ho * wo);
        Y.colwise() += CMapVec<T>(bias.data(), g.out_channels);
      }
    }
  }
  return y;
}

template <class T>
void conv_backward(const Tensor<T>& x, std::span<const T> weight, const ConvGeometry& g, const Tensor<T>& dy,
                   std::span<T> dweight, std::span<T> dbias, Tensor<T>* dx) {
  const int kk = g.kernel * g.kernel;
  if (dx) *dx = Tensor<T>(x.n(), x.c(), x.h(), x.w());
  if (!dbias.empty()) {
    for (int i = 0; i < dy.n(); ++i) {
      for (int o = 0; o < g.out_channels; ++o) dbias[o] += ordered_sum(dy.channel(i, o), dy.plane());
    }
  }
  if (!g.transposed) {
    const int K = g.in_channels * kk;
    const int P = dy.h() * dy.w();
    const bool pointwise = g.kernel == 1 && g.stride == 1 && g.pad == 0;
    std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(K) * P);
    std::vector<T> dcols(pointwise ? 0 : static_cast<std::size_t>(K) * P);
    CMapMat<T> W(weight.data(), g.out_channels, K);
    for (int i = 0; i < x.n(); ++i) {
      CMapMat<T> dY(dy.sample(i), g.out_channels, P);
      if (!dweight.empty()) {
        const T* colp = x.sample(i);
        if (!pointwise) {
          im2col(x.sample(i), x.c(), x.h(), x.w(), dy.h(), dy.w(), g, cols.data());
          colp = cols.data();
        }
        MapMat<T>(dweight.data(), g.out_channels, K).noalias() += dY * CMapMat<T>(colp, K, P).transpose();
      }
      if (dx) {
        if (pointwise) {
          MapMat<T>(dx->sample(i), K, P).noalias() = W.transpose() * dY;
        } else {
          MapMat<T>(dcols.data(), K, P).noalias() = W.transpose() * dY;
          col2im(dcols.data(), x.c(), x.h(), x.w(), dy.h(), dy.w(), g, dx->sample(i));
        }
      }
    }
  } else {
    const int K = g.out_channels * kk;
    const int P = x.h() * x.w();
    std::vector<T> dcols(static_cast<std::size_t>(K) * P);
    CMapMat<T> W(weight.data(), g.in_channels, K);
    for (int i = 0; i < x.n(); ++i) {
      im2col(dy.sample(i), g.out_channels, dy.h(), dy.w(), x.h(), x.w(), g, dcols.data());
      CMapMat<T> dC(dcols.data(), K, P);
      if (!dweight.empty()) {
        MapMat<T>(dweight.data(), g.in_channels, K).noalias() +=
            CMapMat<T>(x.sample(i), g.in_channels, P) * dC.transpose();
      }
      if (dx) MapMat<T>(dx->sample(i), g.in_channels, P).noalias() = W * dC;
    }
  }
}

template <class T>
void activate(Tensor<T>& y, Activation a, T slope) {
  auto& v = y.vec();
  switch (a) {
    case Activation::none: break;
    case Activation::relu:
      for (auto& e : v) e = e > T{} ? e : T{};
      break;
    case Activation::leaky_relu:
      for (auto& e : v) e = e > T{} ? e : slope * e;
      break;
    case Activation::sigmoid:
      for (auto& e : v) e = T(1) / (T(1) + std::exp(-e));
      break;
  }
}

template <class T>
void activate_backward(const Tensor<T>& y, Activation a, Tensor<T>& dy, T slope) {
  const auto& yv = y.vec();
  auto& dv = dy.vec();
  switch (a) {
    case Activation::none: break;
    case Activation::relu:
      for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = yv[i] > T{} ? dv[i] : T{};
      break;
    case Activation::leaky_relu:
      for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = yv[i] > T{} ? dv[i] : slope * dv[i];
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= yv[i] * (T(1) - yv[i]);
      break;
  }
}

template <class T>
Tensor<T> area_downsample(const Tensor<T>& x, int factor) {
  if (factor == 1) return x;
  if (factor <= 0 || x.h() % factor || x.w() % factor) throw Error("area_downsample: size not divisible");
  Tensor<T> y(x.n(), x.c(), x.h() / factor, x.w() / factor);
  const T inv = T(1) / static_cast<T>(factor * factor);
  for (int i = 0; i < x.n(); ++i)
    for (int c = 0; c < x.c(); ++c)
      for (int r = 0; r < y.h(); ++r)
        for (int col = 0; col < y.w(); ++col) {
          T s{};
          for (int a = 0; a < factor; ++a)
            for (int b = 0; b < factor; ++b) s += x(i, c, r * factor + a, col * factor + b);
          y(i, c, r, col) = s * inv;
        }
  return y;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) throw Error("concat: shape mismatch");
  Tensor<T> y(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int i = 0; i < a.n(); ++i) {
    std::copy_n(a.sample(i), a.sample_size(), y.sample(i));
    std::copy_n(b.sample(i), b.sample_size(), y.sample(i) + a.sample_size());
  }
  return y;
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int end) {
  Tensor<T> y(x.n(), end - begin, x.h(), x.w());
  for (int i = 0; i < x.n(); ++i) std::copy_n(x.channel(i, begin), y.sample_size(), y.sample(i));
  return y;
}

template <class T>
T spectral_normalize(std::span<const T> weight, int rows, int cols, std::span<T> u, std::span<T> v, bool update,
                     std::span<T> normalized) {
  // Plain loops keep the summation order independent of buffer alignment.
  const T tiny = std::numeric_limits<T>::min() * T(1e6);
  const T* w = weight.data();
  auto norm = [](std::span<const T> a) { return std::sqrt(ordered_dot(a.data(), a.data(), a.size())); };
  std::vector<T> wv(static_cast<std::size_t>(rows));
  auto mul_v = [&] {
    for (int r = 0; r < rows; ++r) wv[r] = ordered_dot(w + static_cast<std::size_t>(r) * cols, v.data(), cols);
  };
  if (update) {
    if (norm(u) <= tiny) std::fill(u.begin(), u.end(), T(1));
    std::fill(v.begin(), v.end(), T{});
    for (int r = 0; r < rows; ++r) {
      const T* row = w + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) v[c] += row[c] * u[r];
    }
    const T vn = norm(v);
    if (vn > tiny)
      for (auto& e : v) e /= vn;
    mul_v();
    std::copy(wv.begin(), wv.end(), u.begin());
    const T un = norm(u);
    if (un > tiny)
      for (auto& e : u) e /= un;
  }
  mul_v();
  const T sigma = ordered_dot(u.data(), wv.data(), rows);
  if (!(std::abs(sigma) > tiny) || !std::isfinite(sigma)) {
    std::copy(weight.begin(), weight.end(), normalized.begin());
    return T{};
  }
  for (std::size_t k = 0; k < weight.size(); ++k) normalized[k] = w[k] / sigma;
  return sigma;
}

template <class T>
void spectral_normalize_backward(std::span<const T> grad_normalized, std::span<const T> normalized, T sigma,
                                 std::span<const T> u, std::span<const T> v, int rows, int cols,
                                 std::span<T> grad_weight) {
  CMapMat<T> G(grad_normalized.data(), rows, cols);
  MapMat<T> dW(grad_weight.data(), rows, cols);
  if (sigma == T{}) {
    dW += G;
    return;
  }
  const T inner = ordered_dot(grad_normalized.data(), normalized.data(), grad_normalized.size());
  dW += (G - inner * CMapVec<T>(u.data(), rows) * CMapVec<T>(v.data(), cols).transpose()) / sigma;
}

#define STREETGEN_INSTANTIATE(T)                                                                               \
  template void im2col<T>(const T*, int, int, int, int, int, const ConvGeometry&, T*);                         \
  template void col2im<T>(const T*, int, int, int, int, int, const ConvGeometry&, T*);                         \
  template Tensor<T> conv_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>,                 \
                                     const ConvGeometry&);                                                     \
  template void conv_backward<T>(const Tensor<T>&, std::span<const T>, const ConvGeometry&, const Tensor<T>&, \
                                 std::span<T>, std::span<T>, Tensor<T>*);                                      \
  template void activate<T>(Tensor<T>&, Activation, T);                                                        \
  template void activate_backward<T>(const Tensor<T>&, Activation, Tensor<T>&, T);                             \
  template Tensor<T> area_downsample<T>(const Tensor<T>&, int);                                                \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> slice_channels<T>(const Tensor<T>&, int, int);                                            \
  template T spectral_normalize<T>(std::span<const T>, int, int, std::span<T>, std::span<T>, bool,             \
                                   std::span<T>);                                                              \
  template void spectral_normalize_backward<T>(std::span<const T>, std::span<const T>, T, std::span<const T>,  \
                                               std::span<const T>, int, int, std::span<T>);

STREETGEN_INSTANTIATE(float)
STREETGEN_INSTANTIATE(double)

}  // namespace streetgen::nn
