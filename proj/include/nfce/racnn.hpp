#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nfce/channel.hpp"
#include "nfce/nn/attention.hpp"
#include "nfce/nn/batchnorm.hpp"
#include "nfce/nn/conv2d.hpp"
#include "nfce/nn/relu.hpp"
#include "nfce/random.hpp"
#include "nfce/tensor.hpp"

namespace nfce {

enum class Variant { racnn, cnn_only };

inline std::string to_string(Variant v) { return v == Variant::racnn ? "racnn" : "cnn"; }

inline Variant parse_variant(const std::string& s) {
  if (s == "racnn") return Variant::racnn;
  if (s == "cnn" || s == "cnn_only") return Variant::cnn_only;
  throw InvalidArgument("unknown model variant '" + s + "' (expected racnn|cnn)");
}

/// Denoiser architecture:
///   head  conv(2 -> C) + ReLU
///   body  depth x [conv(C -> C) + BN + ReLU + RA(C)]   (RA dropped for cnn_only)
///   tail  conv(C -> 2)
/// The attention width equals the trunk width.
struct ModelConfig {
  std::size_t image_rows = 16;  // N_x
  std::size_t image_cols = 16;  // N_y
  std::size_t width = 64;
  std::size_t depth = 3;
  std::size_t kernel = 3;
  Variant variant = Variant::racnn;

  std::size_t antennas() const { return image_rows * image_cols; }
  std::size_t attention_dim() const { return width; }

  /// Most nearly square N_x x N_y factorization of M with N_x <= N_y.
  static ModelConfig for_antennas(std::size_t antennas, std::size_t width = 64,
                                  std::size_t depth = 3,
                                  Variant variant = Variant::racnn) {
    require(antennas >= 1, "antenna count must be positive");
    ModelConfig cfg;
    std::size_t rows = static_cast<std::size_t>(std::sqrt(static_cast<double>(antennas)));
    while (rows > 1 && antennas % rows != 0) --rows;
    cfg.image_rows = std::max<std::size_t>(rows, 1);
    cfg.image_cols = antennas / cfg.image_rows;
    cfg.width = width;
    cfg.depth = depth;
    cfg.variant = variant;
    return cfg;
  }

  void validate() const {
    require(image_rows >= 1 && image_cols >= 1, "model: image dims must be positive");
    require(width >= 1, "model: width must be positive");
    require(kernel % 2 == 1, "model: kernel size must be odd");
  }

  /// Trainable parameter count (running statistics excluded).
  std::size_t parameter_count() const {
    const std::size_t c = width, r2 = kernel * kernel;
    const std::size_t head = 2 * c * r2 + c;
    const std::size_t block = c * c * r2 + c + 2 * c +
                              (variant == Variant::racnn ? 3 * c * c : 0);
    const std::size_t tail = c * 2 * r2 + 2;
    return head + depth * block + tail;
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Complex M-vector -> [2, N_x, N_y] image: channel 0 real, channel 1
/// imaginary, row-major fill.
template <typename T>
Tensor<T> vec_to_image(const ComplexVector& h, std::size_t rows, std::size_t cols) {
  if (static_cast<std::size_t>(h.size()) != rows * cols) {
    throw InvalidArgument("vec_to_image: vector length " + std::to_string(h.size()) +
                          " != " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  Tensor<T> img({2, rows, cols});
  const std::size_t m = rows * cols;
  for (std::size_t i = 0; i < m; ++i) {
    img[i] = static_cast<T>(h[static_cast<Eigen::Index>(i)].real());
    img[m + i] = static_cast<T>(h[static_cast<Eigen::Index>(i)].imag());
  }
  return img;
}

template <typename T>
ComplexVector image_to_vec(const Tensor<T>& img) {
  require_rank(img, 3, "image_to_vec");
  require(img.dim(0) == 2, "image_to_vec: expected two channels");
  const std::size_t m = img.dim(1) * img.dim(2);
  ComplexVector h(static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) {
    h[static_cast<Eigen::Index>(i)] =
        Complex(static_cast<double>(img[i]), static_cast<double>(img[m + i]));
  }
  return h;
}

/// Stacks vectors into a [B, 2, N_x, N_y] batch.
template <typename T>
Tensor<T> batch_to_images(std::span<const ComplexVector> hs, std::size_t rows,
                          std::size_t cols) {
  require(!hs.empty(), "empty batch");
  Tensor<T> out({hs.size(), 2, rows, cols});
  const std::size_t per = 2 * rows * cols;
  for (std::size_t b = 0; b < hs.size(); ++b) {
    const Tensor<T> img = vec_to_image<T>(hs[b], rows, cols);
    std::copy(img.data(), img.data() + per, out.data() + b * per);
  }
  return out;
}

template <typename T>
std::vector<ComplexVector> images_to_batch(const Tensor<T>& imgs) {
  require_rank(imgs, 4, "images_to_batch");
  const std::size_t per = imgs.dim(1) * imgs.dim(2) * imgs.dim(3);
  std::vector<ComplexVector> out;
  out.reserve(imgs.dim(0));
  for (std::size_t b = 0; b < imgs.dim(0); ++b) {
    Tensor<T> img({imgs.dim(1), imgs.dim(2), imgs.dim(3)},
                  std::vector<T>(imgs.data() + b * per, imgs.data() + (b + 1) * per));
    out.push_back(image_to_vec(img));
  }
  return out;
}

namespace detail {

/// [B, C, H, W] feature map <-> [B, H*W, C] token sequence.
template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x) {
  const std::size_t batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> tokens({batch, hw, c});
  for (std::size_t b = 0; b < batch; ++b) {
    nn::detail::transpose(c, hw, x.data() + b * c * hw, tokens.data() + b * c * hw);
  }
  return tokens;
}

template <typename T>
void add_from_tokens(const Tensor<T>& tokens, Tensor<T>& x) {
  const std::size_t batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* src = tokens.data() + b * c * hw;
    T* dst = x.data() + b * c * hw;
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) dst[ch * hw + p] += src[p * c + ch];
  }
}

}  // namespace detail

/// Residual attention block: spatial positions are tokens, channels are
/// features, and the attention output is added back onto the input.
template <typename T>
Tensor<T> ra_block_forward(const nn::SelfAttention<T>& attention, const Tensor<T>& x,
                           nn::AttentionCache<T>* cache = nullptr) {
  require_rank(x, 4, "ra_block input");
  if (x.dim(1) != attention.channels() || attention.dim() != attention.channels()) {
    throw InvalidArgument("ra_block: width " + std::to_string(x.dim(1)) +
                          " does not match attention " +
                          shape_string(attention.w_query.shape()));
  }
  const Tensor<T> attended = nn::attention_forward(attention, detail::to_tokens(x), cache);
  Tensor<T> y = x;
  detail::add_from_tokens(attended, y);
  return y;
}

template <typename T>
std::pair<Tensor<T>, nn::AttentionGrads<T>> ra_block_backward(
    const nn::SelfAttention<T>& attention, const nn::AttentionCache<T>& cache,
    const Tensor<T>& grad_out) {
  auto grads = nn::attention_backward(attention, cache, detail::to_tokens(grad_out));
  Tensor<T> grad_x = grad_out;
  detail::add_from_tokens(grads.input, grad_x);
  return {std::move(grad_x), std::move(grads)};
}

template <typename T>
struct BodyBlock {
  nn::Conv2d<T> conv;
  nn::BatchNorm<T> bn;
  nn::SelfAttention<T> attention;  // empty for cnn_only
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor;
};

/// Forward intermediates needed by the backward pass.
template <typename T>
struct RacnnCache {
  struct Block {
    Tensor<T> conv_in;
    nn::BatchNormCache<T> bn;
    Tensor<T> relu_in;
    nn::AttentionCache<T> attention;
  };
  Tensor<T> input;
  Tensor<T> head_out;  // pre-ReLU
  std::vector<Block> blocks;
  Tensor<T> tail_in;
  bool valid = false;
};

template <typename T>
struct DenoiseResult {
  Tensor<T> h_hat;
  Tensor<T> noise_hat;
};

template <typename T>
class Racnn {
 public:
  Racnn() = default;
  explicit Racnn(const ModelConfig& config) : config_(config) {
    config_.validate();
    const std::size_t c = config_.width, r = config_.kernel;
    head_ = nn::Conv2d<T>(2, c, r);
    body_.resize(config_.depth);
    for (auto& block : body_) {
      block.conv = nn::Conv2d<T>(c, c, r);
      block.bn = nn::BatchNorm<T>(c);
      if (config_.variant == Variant::racnn) block.attention = nn::SelfAttention<T>(c, c);
    }
    tail_ = nn::Conv2d<T>(c, 2, r);
  }

  const ModelConfig& config() const { return config_; }
  nn::Mode mode() const { return mode_; }
  void set_mode(nn::Mode mode) { mode_ = mode; }

  nn::Conv2d<T>& head() { return head_; }
  nn::Conv2d<T>& tail() { return tail_; }
  std::vector<BodyBlock<T>>& body() { return body_; }
  const std::vector<BodyBlock<T>>& body() const { return body_; }

  /// Trainable tensors in a fixed order shared with Gradients.
  std::vector<NamedTensor<T>> parameters() {
    std::vector<NamedTensor<T>> out{{"head.weight", &head_.weight},
                                    {"head.bias", &head_.bias}};
    for (std::size_t i = 0; i < body_.size(); ++i) {
      const std::string p = "body." + std::to_string(i) + ".";
      auto& b = body_[i];
      out.push_back({p + "conv.weight", &b.conv.weight});
      out.push_back({p + "conv.bias", &b.conv.bias});
      out.push_back({p + "bn.gamma", &b.bn.gamma});
      out.push_back({p + "bn.beta", &b.bn.beta});
      if (config_.variant == Variant::racnn) {
        out.push_back({p + "attn.w_query", &b.attention.w_query});
        out.push_back({p + "attn.w_key", &b.attention.w_key});
        out.push_back({p + "attn.w_value", &b.attention.w_value});
      }
    }
    out.push_back({"tail.weight", &tail_.weight});
    out.push_back({"tail.bias", &tail_.bias});
    return out;
  }

  /// Non-trainable state (BN running statistics).
  std::vector<NamedTensor<T>> buffers() {
    std::vector<NamedTensor<T>> out;
    for (std::size_t i = 0; i < body_.size(); ++i) {
      const std::string p = "body." + std::to_string(i) + ".bn.";
      out.push_back({p + "running_mean", &body_[i].bn.running_mean});
      out.push_back({p + "running_var", &body_[i].bn.running_var});
    }
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& p : parameters()) n += p.tensor->size();
    return n;
  }

  /// Zero-mean uniform initialization with fan-in scaling, deterministic in
  /// the seed. BN starts at gamma = 1, beta = 0; biases at 0.
  void initialize(std::uint64_t seed) {
    std::uint64_t index = 0;
    auto fill_uniform = [&](Tensor<T>& t, double bound) {
      Rng rng(derive_seed(seed, index++));
      for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    };
    auto conv_init = [&](nn::Conv2d<T>& conv) {
      const double fan_in =
          static_cast<double>(conv.in_channels() * conv.kernel() * conv.kernel());
      fill_uniform(conv.weight, std::sqrt(3.0 / fan_in));
      conv.bias.fill(T(0));
    };
    conv_init(head_);
    for (auto& b : body_) {
      conv_init(b.conv);
      b.bn = nn::BatchNorm<T>(config_.width);
      if (config_.variant == Variant::racnn) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(config_.width));
        fill_uniform(b.attention.w_query, bound);
        fill_uniform(b.attention.w_key, bound);
        fill_uniform(b.attention.w_value, bound);
      }
    }
    conv_init(tail_);
  }

  /// Noise estimate for a [B, 2, N_x, N_y] batch.
  Tensor<T> forward(const Tensor<T>& x, nn::Mode mode, RacnnCache<T>* cache = nullptr) const {
    require_shape(x, {x.rank() == 4 ? x.dim(0) : 0, 2, config_.image_rows, config_.image_cols},
                  "model input");
    if (cache) {
      cache->input = x;
      cache->blocks.assign(body_.size(), {});
    }
    Tensor<T> a = nn::conv2d_forward(head_, x);
    Tensor<T> h = nn::relu_forward(a);
    if (cache) cache->head_out = std::move(a);
    for (std::size_t i = 0; i < body_.size(); ++i) {
      const auto& b = body_[i];
      auto* bc = cache ? &cache->blocks[i] : nullptr;
      Tensor<T> z = nn::conv2d_forward(b.conv, h);
      if (bc) bc->conv_in = std::move(h);
      Tensor<T> n = nn::batchnorm_forward(b.bn, z, mode, bc ? &bc->bn : nullptr);
      h = nn::relu_forward(n);
      if (bc) bc->relu_in = std::move(n);
      if (config_.variant == Variant::racnn) {
        h = ra_block_forward(b.attention, h, bc ? &bc->attention : nullptr);
      }
    }
    Tensor<T> out = nn::conv2d_forward(tail_, h);
    if (cache) {
      cache->tail_in = std::move(h);
      cache->valid = true;
    }
    return out;
  }

  /// Gradients of a loss w.r.t. every parameter (order of parameters())
  /// given d loss / d noise_estimate. Optionally returns d loss / d input.
  std::vector<Tensor<T>> backward(const RacnnCache<T>& cache, const Tensor<T>& grad_out,
                                  Tensor<T>* grad_input = nullptr) const {
    require(cache.valid, "model backward requires a forward cache");
    auto tg = nn::conv2d_backward(tail_, cache.tail_in, grad_out);
    Tensor<T> g = std::move(tg.input);

    std::vector<std::vector<Tensor<T>>> block_grads(body_.size());
    for (std::size_t i = body_.size(); i-- > 0;) {
      const auto& b = body_[i];
      const auto& bc = cache.blocks[i];
      auto& out = block_grads[i];
      std::vector<Tensor<T>> attn;
      if (config_.variant == Variant::racnn) {
        auto [gx, ag] = ra_block_backward(b.attention, bc.attention, g);
        g = std::move(gx);
        attn = {std::move(ag.w_query), std::move(ag.w_key), std::move(ag.w_value)};
      }
      g = nn::relu_backward(bc.relu_in, g);
      auto bg = nn::batchnorm_backward(b.bn, bc.bn, g);
      auto cg = nn::conv2d_backward(b.conv, bc.conv_in, bg.input);
      g = std::move(cg.input);
      out.push_back(std::move(cg.weight));
      out.push_back(std::move(cg.bias));
      out.push_back(std::move(bg.gamma));
      out.push_back(std::move(bg.beta));
      for (auto& t : attn) out.push_back(std::move(t));
    }
    g = nn::relu_backward(cache.head_out, g);
    auto hg = nn::conv2d_backward(head_, cache.input, g);

    std::vector<Tensor<T>> grads;
    grads.push_back(std::move(hg.weight));
    grads.push_back(std::move(hg.bias));
    for (auto& bg : block_grads)
      for (auto& t : bg) grads.push_back(std::move(t));
    grads.push_back(std::move(tg.weight));
    grads.push_back(std::move(tg.bias));
    if (grad_input) *grad_input = std::move(hg.input);
    return grads;
  }

  /// Folds the batch statistics of a train-mode forward into the BN running
  /// statistics.
  void update_running_stats(const RacnnCache<T>& cache) {
    for (std::size_t i = 0; i < body_.size(); ++i) {
      nn::update_running_stats(body_[i].bn, cache.blocks[i].bn);
    }
  }

  /// Fingerprint of all ReLU on/off decisions in a cache.
  static std::uint64_t activation_pattern(const RacnnCache<T>& cache) {
    std::uint64_t hash = 0x243F6A8885A308D3ULL;
    auto mix = [&](const Tensor<T>& t) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        hash = splitmix64(hash ^ (t[i] > T(0) ? 1u : 2u) ^ (i << 2));
      }
    };
    mix(cache.head_out);
    for (const auto& b : cache.blocks) mix(b.relu_in);
    return hash;
  }

  template <typename U>
  Racnn<U> cast() const {
    Racnn<U> out(config_);
    auto src = const_cast<Racnn*>(this)->parameters();
    auto dst = out.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].tensor = src[i].tensor->template cast<U>();
    auto sb = const_cast<Racnn*>(this)->buffers();
    auto db = out.buffers();
    for (std::size_t i = 0; i < sb.size(); ++i) *db[i].tensor = sb[i].tensor->template cast<U>();
    out.set_mode(mode_);
    return out;
  }

 private:
  ModelConfig config_;
  nn::Conv2d<T> head_;
  std::vector<BodyBlock<T>> body_;
  nn::Conv2d<T> tail_;
  nn::Mode mode_ = nn::Mode::eval;
};

template <typename T>
Racnn<T> build_model(const ModelConfig& config, std::uint64_t init_seed) {
  Racnn<T> model(config);
  model.initialize(init_seed);
  return model;
}

/// noise_hat = trunk(x);  h_hat = x - noise_hat.
template <typename T>
DenoiseResult<T> denoise(const Racnn<T>& model, const Tensor<T>& x_noisy) {
  if (model.mode() != nn::Mode::eval) {
    throw InvalidArgument("denoise: model must be in eval mode (batch norm uses running statistics)");
  }
  DenoiseResult<T> r;
  r.noise_hat = model.forward(x_noisy, nn::Mode::eval);
  r.h_hat = Tensor<T>(x_noisy.shape());
  for (std::size_t i = 0; i < x_noisy.size(); ++i) r.h_hat[i] = x_noisy[i] - r.noise_hat[i];
  return r;
}

}  // namespace nfce
