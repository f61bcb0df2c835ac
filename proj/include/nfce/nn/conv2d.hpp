#pragma once

#include <cstddef>
#include <vector>

#include "nfce/nn/gemm.hpp"
#include "nfce/tensor.hpp"

namespace nfce::nn {

/// Stride-1 2D cross-correlation with same-size zero padding.
/// weight: [C_out, C_in, r, r] with odd r; bias: [C_out].
template <typename T>
struct Conv2d {
  Tensor<T> weight;
  Tensor<T> bias;

  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel)
      : weight({out_channels, in_channels, kernel, kernel}), bias({out_channels}) {
    require(kernel % 2 == 1, "conv2d kernel size must be odd");
  }

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t kernel() const { return weight.dim(2); }
};

template <typename T>
struct Conv2dGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

namespace detail {

template <typename T>
void check_conv(const Conv2d<T>& layer, const Tensor<T>& x) {
  require_rank(x, 4, "conv2d input");
  require_rank(layer.weight, 4, "conv2d weight");
  require(layer.weight.dim(2) == layer.weight.dim(3) && layer.weight.dim(2) % 2 == 1,
          "conv2d kernel must be square with odd size");
  require_shape(layer.bias, {layer.out_channels()}, "conv2d bias");
  if (x.dim(1) != layer.in_channels()) {
    throw InvalidArgument("conv2d: input has " + std::to_string(x.dim(1)) +
                          " channels, layer expects " +
                          std::to_string(layer.in_channels()));
  }
}

/// cols[(c*r + ky)*r + kx][i*w + j] = x[c][i + ky - pad][j + kx - pad] (0 outside).
template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t h, std::size_t w,
            std::size_t r, T* cols) {
  const auto pad = static_cast<std::ptrdiff_t>(r / 2);
  const auto hh = static_cast<std::ptrdiff_t>(h);
  const auto ww = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* xc = x + c * h * w;
    for (std::size_t ky = 0; ky < r; ++ky) {
      for (std::size_t kx = 0; kx < r; ++kx) {
        T* row = cols + ((c * r + ky) * r + kx) * h * w;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::ptrdiff_t i = 0; i < hh; ++i) {
          const std::ptrdiff_t si = i + dy;
          T* out = row + i * ww;
          if (si < 0 || si >= hh) {
            for (std::ptrdiff_t j = 0; j < ww; ++j) out[j] = T(0);
            continue;
          }
          const T* src = xc + si * ww;
          for (std::ptrdiff_t j = 0; j < ww; ++j) {
            const std::ptrdiff_t sj = j + dx;
            out[j] = (sj < 0 || sj >= ww) ? T(0) : src[sj];
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters column gradients back onto the image.
template <typename T>
void col2im_acc(const T* cols, std::size_t channels, std::size_t h,
                std::size_t w, std::size_t r, T* x) {
  const auto pad = static_cast<std::ptrdiff_t>(r / 2);
  const auto hh = static_cast<std::ptrdiff_t>(h);
  const auto ww = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    T* xc = x + c * h * w;
    for (std::size_t ky = 0; ky < r; ++ky) {
      for (std::size_t kx = 0; kx < r; ++kx) {
        const T* row = cols + ((c * r + ky) * r + kx) * h * w;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::ptrdiff_t i = 0; i < hh; ++i) {
          const std::ptrdiff_t si = i + dy;
          if (si < 0 || si >= hh) continue;
          const T* in = row + i * ww;
          T* dst = xc + si * ww;
          for (std::ptrdiff_t j = 0; j < ww; ++j) {
            const std::ptrdiff_t sj = j + dx;
            if (sj >= 0 && sj < ww) dst[sj] += in[j];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Y(c_out) = sum_k W(c_out, k) (*) X(k) + bias(c_out), evaluated per sample as
/// one matrix product over an im2col buffer.
template <typename T>
Tensor<T> conv2d_forward(const Conv2d<T>& layer, const Tensor<T>& x) {
  detail::check_conv(layer, x);
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = layer.out_channels(), r = layer.kernel();
  const std::size_t hw = h * w, k = cin * r * r;
  Tensor<T> y({batch, cout, h, w});
  std::vector<T> cols(k * hw);
  for (std::size_t b = 0; b < batch; ++b) {
    detail::im2col(x.data() + b * cin * hw, cin, h, w, r, cols.data());
    T* yb = y.data() + b * cout * hw;
    for (std::size_t c = 0; c < cout; ++c) {
      std::fill(yb + c * hw, yb + (c + 1) * hw, layer.bias[c]);
    }
    detail::gemm_acc(cout, hw, k, layer.weight.data(), k, false, cols.data(), hw,
                     yb, hw);
  }
  return y;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Conv2d<T>& layer, const Tensor<T>& x,
                               const Tensor<T>& grad_out) {
  detail::check_conv(layer, x);
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = layer.out_channels(), r = layer.kernel();
  require_shape(grad_out, {batch, cout, h, w}, "conv2d grad_out");
  const std::size_t hw = h * w, k = cin * r * r;

  Conv2dGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(layer.weight.shape()),
                   Tensor<T>(layer.bias.shape())};
  std::vector<T> cols(k * hw), cols_t(hw * k), grad_cols(k * hw);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* gb = grad_out.data() + b * cout * hw;
    for (std::size_t c = 0; c < cout; ++c) {
      T acc = T(0);
      for (std::size_t p = 0; p < hw; ++p) acc += gb[c * hw + p];
      g.bias[c] += acc;
    }
    detail::im2col(x.data() + b * cin * hw, cin, h, w, r, cols.data());
    detail::transpose(k, hw, cols.data(), cols_t.data());
    // dW[cout x k] += dY[cout x hw] * cols^T[hw x k]
    detail::gemm_acc(cout, k, hw, gb, hw, false, cols_t.data(), k,
                     g.weight.data(), k);
    // dcols[k x hw] = W^T[k x cout] * dY[cout x hw]
    std::fill(grad_cols.begin(), grad_cols.end(), T(0));
    detail::gemm_acc(k, hw, cout, layer.weight.data(), k, true, gb, hw,
                     grad_cols.data(), hw);
    detail::col2im_acc(grad_cols.data(), cin, h, w, r,
                       g.input.data() + b * cin * hw);
  }
  return g;
}

}  // namespace nfce::nn
