#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "nfce/tensor.hpp"

namespace nfce {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-parameter first and second moment estimates plus the step counter.
template <typename T>
struct AdamState {
  std::vector<Tensor<T>> first;
  std::vector<Tensor<T>> second;
  long step = 0;
};

/// One bias-corrected Adam update. A non-finite gradient anywhere skips the
/// whole step (state and parameters untouched) and returns false.
template <typename T>
bool adam_step(AdamState<T>& state, std::span<Tensor<T>* const> params,
               std::span<const Tensor<T>> grads, const AdamOptions& opt) {
  require(params.size() == grads.size(), "adam: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_shape(grads[i], params[i]->shape(), "adam gradient");
    for (T g : grads[i].values()) {
      if (!std::isfinite(g)) return false;
    }
  }
  if (state.first.empty()) {
    for (auto* p : params) {
      state.first.emplace_back(p->shape());
      state.second.emplace_back(p->shape());
    }
  }
  require(state.first.size() == params.size(), "adam: state does not match parameters");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(opt.beta1, t);
  const double bc2 = 1.0 - std::pow(opt.beta2, t);
  const T b1 = static_cast<T>(opt.beta1), b2 = static_cast<T>(opt.beta2);
  const T step_size = static_cast<T>(opt.learning_rate / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(opt.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* w = params[i]->data();
    T* m = state.first[i].data();
    T* v = state.second[i].data();
    const T* g = grads[i].data();
    for (std::size_t k = 0; k < params[i]->size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      w[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_bc2 + eps);
    }
  }
  return true;
}

template <typename T>
struct LossAndGrad {
  double loss = 0.0;
  Tensor<T> grad;
};

/// (1/n) sum (pred - target)^2 and its gradient (2/n)(pred - target).
template <typename T>
LossAndGrad<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_shape(target, pred.shape(), "mse target");
  LossAndGrad<T> out{0.0, Tensor<T>(pred.shape())};
  const double n = static_cast<double>(pred.size());
  double acc = 0.0;
  const T scale = static_cast<T>(2.0 / n);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T diff = pred[i] - target[i];
    acc += static_cast<double>(diff) * static_cast<double>(diff);
    out.grad[i] = scale * diff;
  }
  out.loss = acc / n;
  return out;
}

}  // namespace nfce
