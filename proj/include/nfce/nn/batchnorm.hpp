#pragma once

#include <cmath>
#include <cstddef>

#include "nfce/tensor.hpp"

namespace nfce::nn {

enum class Mode { train, eval };

/// Per-channel batch normalization over [B, C, H, W] inputs.
template <typename T>
struct BatchNorm {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels)
      : gamma({channels}, T(1)),
        beta({channels}, T(0)),
        running_mean({channels}, T(0)),
        running_var({channels}, T(1)) {}

  std::size_t channels() const { return gamma.size(); }
};

template <typename T>
struct BatchNormCache {
  Mode mode = Mode::eval;
  Tensor<T> x_hat;
  Tensor<T> batch_mean;  // [C]
  Tensor<T> batch_var;   // [C], biased
  Tensor<T> inv_std;     // [C]
  std::size_t count = 0;  // elements per channel
};

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

/// Train mode normalizes with batch statistics over B*H*W; eval mode with
/// the running statistics. Running statistics are not touched here, see
/// update_running_stats.
template <typename T>
Tensor<T> batchnorm_forward(const BatchNorm<T>& layer, const Tensor<T>& x,
                            Mode mode, BatchNormCache<T>* cache = nullptr) {
  require_rank(x, 4, "batchnorm input");
  const std::size_t batch = x.dim(0), channels = x.dim(1), hw = x.dim(2) * x.dim(3);
  require(channels == layer.channels(), "batchnorm: channel count mismatch");
  const std::size_t count = batch * hw;

  Tensor<T> mean({channels}), var({channels}), inv_std({channels});
  if (mode == Mode::train) {
    require(count >= 2, "batchnorm: train mode needs at least two elements per channel");
    for (std::size_t c = 0; c < channels; ++c) {
      T sum = T(0);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.data() + (b * channels + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) sum += p[i];
      }
      const T mu = sum / static_cast<T>(count);
      T sq = T(0);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.data() + (b * channels + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      mean[c] = mu;
      var[c] = sq / static_cast<T>(count);
    }
  } else {
    mean = layer.running_mean;
    var = layer.running_var;
  }
  for (std::size_t c = 0; c < channels; ++c) inv_std[c] = T(1) / std::sqrt(var[c] + layer.eps);

  Tensor<T> y(x.shape());
  Tensor<T> x_hat;
  if (cache) x_hat = Tensor<T>(x.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t off = (b * channels + c) * hw;
      const T mu = mean[c], s = inv_std[c], g = layer.gamma[c], be = layer.beta[c];
      for (std::size_t i = 0; i < hw; ++i) {
        const T xh = (x[off + i] - mu) * s;
        if (cache) x_hat[off + i] = xh;
        y[off + i] = g * xh + be;
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->x_hat = std::move(x_hat);
    cache->batch_mean = std::move(mean);
    cache->batch_var = std::move(var);
    cache->inv_std = std::move(inv_std);
    cache->count = count;
  }
  return y;
}

/// Exponential moving average of the batch statistics; the running variance
/// uses the unbiased batch estimate.
template <typename T>
void update_running_stats(BatchNorm<T>& layer, const BatchNormCache<T>& cache) {
  require(cache.mode == Mode::train, "running stats need a train-mode cache");
  const T m = layer.momentum;
  const T unbias = static_cast<T>(cache.count) / static_cast<T>(cache.count - 1);
  for (std::size_t c = 0; c < layer.channels(); ++c) {
    layer.running_mean[c] = (T(1) - m) * layer.running_mean[c] + m * cache.batch_mean[c];
    layer.running_var[c] =
        (T(1) - m) * layer.running_var[c] + m * cache.batch_var[c] * unbias;
  }
}

/// Gradients through the train-mode normalization, including the dependence
/// of the batch mean and variance on every input.
template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNorm<T>& layer,
                                     const BatchNormCache<T>& cache,
                                     const Tensor<T>& grad_out) {
  require(cache.mode == Mode::train && !cache.x_hat.empty(),
          "batchnorm_backward requires a train-mode forward cache");
  require_shape(grad_out, cache.x_hat.shape(), "batchnorm grad_out");
  const std::size_t batch = grad_out.dim(0), channels = grad_out.dim(1),
                    hw = grad_out.dim(2) * grad_out.dim(3);
  BatchNormGrads<T> g{Tensor<T>(grad_out.shape()), Tensor<T>({channels}),
                      Tensor<T>({channels})};
  const T n = static_cast<T>(cache.count);
  for (std::size_t c = 0; c < channels; ++c) {
    T sum_g = T(0), sum_gx = T(0);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        sum_g += grad_out[off + i];
        sum_gx += grad_out[off + i] * cache.x_hat[off + i];
      }
    }
    g.beta[c] = sum_g;
    g.gamma[c] = sum_gx;
    const T scale = layer.gamma[c] * cache.inv_std[c] / n;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        g.input[off + i] =
            scale * (n * grad_out[off + i] - sum_g - cache.x_hat[off + i] * sum_gx);
      }
    }
  }
  return g;
}

}  // namespace nfce::nn
