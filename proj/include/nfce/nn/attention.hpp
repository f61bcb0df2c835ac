#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "nfce/nn/gemm.hpp"
#include "nfce/nn/softmax.hpp"
#include "nfce/tensor.hpp"

namespace nfce::nn {

/// Single-head scaled dot-product self-attention over [B, T, C] tokens.
/// Projections are [C, D] without bias.
template <typename T>
struct SelfAttention {
  Tensor<T> w_query;
  Tensor<T> w_key;
  Tensor<T> w_value;

  SelfAttention() = default;
  SelfAttention(std::size_t channels, std::size_t dim)
      : w_query({channels, dim}), w_key({channels, dim}), w_value({channels, dim}) {}

  std::size_t channels() const { return w_query.dim(0); }
  std::size_t dim() const { return w_query.dim(1); }
};

template <typename T>
struct AttentionCache {
  Tensor<T> x;        // [B, T, C]
  Tensor<T> query;    // [B, T, D]
  Tensor<T> key;      // [B, T, D]
  Tensor<T> value;    // [B, T, D]
  Tensor<T> weights;  // [B, T, T], rows sum to one

  bool valid() const { return !weights.empty(); }
};

template <typename T>
struct AttentionGrads {
  Tensor<T> input;
  Tensor<T> w_query;
  Tensor<T> w_key;
  Tensor<T> w_value;
};

namespace detail {
template <typename T>
void check_attention(const SelfAttention<T>& layer) {
  require_rank(layer.w_query, 2, "attention W_Q");
  require_shape(layer.w_key, layer.w_query.shape(), "attention W_K");
  require_shape(layer.w_value, layer.w_query.shape(), "attention W_V");
}
}  // namespace detail

/// Q = X W_Q, K = X W_K, V = X W_V;  A = softmax(Q K^T / sqrt(D));  out = A V.
template <typename T>
Tensor<T> attention_forward(const SelfAttention<T>& layer, const Tensor<T>& x,
                            AttentionCache<T>* cache = nullptr) {
  detail::check_attention(layer);
  require_rank(x, 3, "attention input");
  const std::size_t batch = x.dim(0), tokens = x.dim(1), c = x.dim(2);
  if (c != layer.channels()) {
    throw InvalidArgument("attention: token width " + std::to_string(c) +
                          " does not match layer input dim " +
                          std::to_string(layer.channels()));
  }
  const std::size_t d = layer.dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(d));

  Tensor<T> q({batch, tokens, d}), k({batch, tokens, d}), v({batch, tokens, d});
  Tensor<T> weights({batch, tokens, tokens});
  Tensor<T> out({batch, tokens, d});
  std::vector<T> key_t(d * tokens);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* xb = x.data() + b * tokens * c;
    T* qb = q.data() + b * tokens * d;
    T* kb = k.data() + b * tokens * d;
    T* vb = v.data() + b * tokens * d;
    detail::gemm_acc(tokens, d, c, xb, c, false, layer.w_query.data(), d, qb, d);
    detail::gemm_acc(tokens, d, c, xb, c, false, layer.w_key.data(), d, kb, d);
    detail::gemm_acc(tokens, d, c, xb, c, false, layer.w_value.data(), d, vb, d);

    T* wb = weights.data() + b * tokens * tokens;
    detail::transpose(tokens, d, kb, key_t.data());
    detail::gemm_acc(tokens, tokens, d, qb, d, false, key_t.data(), tokens, wb, tokens);
    for (std::size_t t = 0; t < tokens; ++t) {
      std::span<T> row(wb + t * tokens, tokens);
      for (T& s : row) s *= scale;
      softmax_inplace(row);
    }
    detail::gemm_acc(tokens, d, tokens, wb, tokens, false, vb, d,
                     out.data() + b * tokens * d, d);
  }
  if (cache) {
    cache->x = x;
    cache->query = std::move(q);
    cache->key = std::move(k);
    cache->value = std::move(v);
    cache->weights = std::move(weights);
  }
  return out;
}

template <typename T>
AttentionGrads<T> attention_backward(const SelfAttention<T>& layer,
                                     const AttentionCache<T>& cache,
                                     const Tensor<T>& grad_out) {
  detail::check_attention(layer);
  require(cache.valid(), "attention_backward requires a forward cache");
  const std::size_t batch = cache.x.dim(0), tokens = cache.x.dim(1),
                    c = cache.x.dim(2), d = layer.dim();
  require_shape(grad_out, {batch, tokens, d}, "attention grad_out");
  const T scale = T(1) / std::sqrt(static_cast<T>(d));

  AttentionGrads<T> g{Tensor<T>(cache.x.shape()), Tensor<T>(layer.w_query.shape()),
                      Tensor<T>(layer.w_key.shape()), Tensor<T>(layer.w_value.shape())};
  std::vector<T> wq_t(d * c), wk_t(d * c), wv_t(d * c);
  detail::transpose(c, d, layer.w_query.data(), wq_t.data());
  detail::transpose(c, d, layer.w_key.data(), wk_t.data());
  detail::transpose(c, d, layer.w_value.data(), wv_t.data());

  std::vector<T> dq(tokens * d), dk(tokens * d), dv(tokens * d);
  std::vector<T> value_t(d * tokens), dscores(tokens * tokens);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* xb = cache.x.data() + b * tokens * c;
    const T* qb = cache.query.data() + b * tokens * d;
    const T* kb = cache.key.data() + b * tokens * d;
    const T* vb = cache.value.data() + b * tokens * d;
    const T* pb = cache.weights.data() + b * tokens * tokens;
    const T* gb = grad_out.data() + b * tokens * d;
    std::fill(dq.begin(), dq.end(), T(0));
    std::fill(dk.begin(), dk.end(), T(0));
    std::fill(dv.begin(), dv.end(), T(0));
    std::fill(dscores.begin(), dscores.end(), T(0));

    // dV = A^T dO,  dA = dO V^T
    detail::gemm_acc(tokens, d, tokens, pb, tokens, true, gb, d, dv.data(), d);
    detail::transpose(tokens, d, vb, value_t.data());
    detail::gemm_acc(tokens, tokens, d, gb, d, false, value_t.data(), tokens,
                     dscores.data(), tokens);
    // Softmax Jacobian row by row, folded with the 1/sqrt(D) scaling.
    for (std::size_t t = 0; t < tokens; ++t) {
      T* ds = dscores.data() + t * tokens;
      const T* p = pb + t * tokens;
      T dot = T(0);
      for (std::size_t s = 0; s < tokens; ++s) dot += ds[s] * p[s];
      for (std::size_t s = 0; s < tokens; ++s) ds[s] = p[s] * (ds[s] - dot) * scale;
    }
    // dQ = dS K,  dK = dS^T Q
    detail::gemm_acc(tokens, d, tokens, dscores.data(), tokens, false, kb, d, dq.data(), d);
    detail::gemm_acc(tokens, d, tokens, dscores.data(), tokens, true, qb, d, dk.data(), d);

    // Projection weights: dW = X^T dY.
    detail::gemm_acc(c, d, tokens, xb, c, true, dq.data(), d, g.w_query.data(), d);
    detail::gemm_acc(c, d, tokens, xb, c, true, dk.data(), d, g.w_key.data(), d);
    detail::gemm_acc(c, d, tokens, xb, c, true, dv.data(), d, g.w_value.data(), d);

    T* gx = g.input.data() + b * tokens * c;
    detail::gemm_acc(tokens, c, d, dq.data(), d, false, wq_t.data(), c, gx, c);
    detail::gemm_acc(tokens, c, d, dk.data(), d, false, wk_t.data(), c, gx, c);
    detail::gemm_acc(tokens, c, d, dv.data(), d, false, wv_t.data(), c, gx, c);
  }
  return g;
}

}  // namespace nfce::nn
