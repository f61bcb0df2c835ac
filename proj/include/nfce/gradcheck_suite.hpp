#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "nfce/gradcheck.hpp"
#include "nfce/nn/attention.hpp"
#include "nfce/nn/batchnorm.hpp"
#include "nfce/nn/conv2d.hpp"
#include "nfce/nn/relu.hpp"
#include "nfce/optim.hpp"
#include "nfce/racnn.hpp"
#include "nfce/random.hpp"

namespace nfce {

namespace detail {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

/// sum(weights * y): a scalar probe whose gradient w.r.t. y is `weights`.
inline double probe(const Tensor<double>& weights, const Tensor<double>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += weights[i] * y[i];
  return s;
}

}  // namespace detail

/// State shared by the closures of one problem instance. Kept alive by the
/// caller for as long as the problem is used.
struct GradcheckFixture {
  virtual ~GradcheckFixture() = default;
  GradcheckProblem problem;
};

namespace detail {

struct ConvFixture : GradcheckFixture {
  nn::Conv2d<double> layer;
  Tensor<double> x, probe_w;
  ConvFixture(std::uint64_t seed, std::size_t batch, std::size_t cin, std::size_t cout,
              std::size_t size, std::size_t r) {
    Rng rng(seed);
    layer = nn::Conv2d<double>(cin, cout, r);
    layer.weight = random_tensor(layer.weight.shape(), rng);
    layer.bias = random_tensor(layer.bias.shape(), rng);
    x = random_tensor({batch, cin, size, size}, rng);
    probe_w = random_tensor({batch, cout, size, size}, rng);
    problem.name = "conv2d";
    problem.inputs = {{"input", &x}, {"weight", &layer.weight}, {"bias", &layer.bias}};
    problem.loss = [this] { return probe(probe_w, nn::conv2d_forward(layer, x)); };
    problem.gradients = [this] {
      auto g = nn::conv2d_backward(layer, x, probe_w);
      return std::vector<Tensor<double>>{g.input, g.weight, g.bias};
    };
  }
};

struct ReluFixture : GradcheckFixture {
  Tensor<double> x, probe_w;
  ReluFixture(std::uint64_t seed, std::size_t n) {
    Rng rng(seed);
    // Keep every coordinate at least 0.1 away from the kink.
    x = Tensor<double>({n});
    for (auto& v : x.values()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 2.0);
    probe_w = random_tensor({n}, rng);
    problem.name = "relu";
    problem.inputs = {{"input", &x}};
    problem.loss = [this] { return probe(probe_w, nn::relu_forward(x)); };
    problem.gradients = [this] {
      return std::vector<Tensor<double>>{nn::relu_backward(x, probe_w)};
    };
  }
};

struct BatchNormFixture : GradcheckFixture {
  nn::BatchNorm<double> layer;
  Tensor<double> x, probe_w;
  BatchNormFixture(std::uint64_t seed, std::size_t batch, std::size_t channels,
                   std::size_t size) {
    Rng rng(seed);
    layer = nn::BatchNorm<double>(channels);
    layer.gamma = random_tensor({channels}, rng);
    layer.beta = random_tensor({channels}, rng);
    x = random_tensor({batch, channels, size, size}, rng, 2.0);
    probe_w = random_tensor(x.shape(), rng);
    problem.name = "batchnorm";
    problem.inputs = {{"input", &x}, {"gamma", &layer.gamma}, {"beta", &layer.beta}};
    problem.loss = [this] {
      return probe(probe_w, nn::batchnorm_forward(layer, x, nn::Mode::train));
    };
    problem.gradients = [this] {
      nn::BatchNormCache<double> cache;
      nn::batchnorm_forward(layer, x, nn::Mode::train, &cache);
      auto g = nn::batchnorm_backward(layer, cache, probe_w);
      return std::vector<Tensor<double>>{g.input, g.gamma, g.beta};
    };
  }
};

struct AttentionFixture : GradcheckFixture {
  nn::SelfAttention<double> layer;
  Tensor<double> x, probe_w;
  AttentionFixture(std::uint64_t seed, std::size_t batch, std::size_t tokens,
                   std::size_t channels) {
    Rng rng(seed);
    layer = nn::SelfAttention<double>(channels, channels);
    layer.w_query = random_tensor(layer.w_query.shape(), rng, 0.5);
    layer.w_key = random_tensor(layer.w_key.shape(), rng, 0.5);
    layer.w_value = random_tensor(layer.w_value.shape(), rng, 0.5);
    x = random_tensor({batch, tokens, channels}, rng);
    probe_w = random_tensor(x.shape(), rng);
    problem.name = "attention";
    problem.inputs = {{"input", &x},
                      {"w_query", &layer.w_query},
                      {"w_key", &layer.w_key},
                      {"w_value", &layer.w_value}};
    problem.loss = [this] { return probe(probe_w, nn::attention_forward(layer, x)); };
    problem.gradients = [this] {
      nn::AttentionCache<double> cache;
      nn::attention_forward(layer, x, &cache);
      auto g = nn::attention_backward(layer, cache, probe_w);
      return std::vector<Tensor<double>>{g.input, g.w_query, g.w_key, g.w_value};
    };
  }
};

struct RaBlockFixture : GradcheckFixture {
  nn::SelfAttention<double> layer;
  Tensor<double> x, probe_w;
  RaBlockFixture(std::uint64_t seed, std::size_t batch, std::size_t channels, std::size_t size) {
    Rng rng(seed);
    layer = nn::SelfAttention<double>(channels, channels);
    layer.w_query = random_tensor(layer.w_query.shape(), rng, 0.5);
    layer.w_key = random_tensor(layer.w_key.shape(), rng, 0.5);
    layer.w_value = random_tensor(layer.w_value.shape(), rng, 0.5);
    x = random_tensor({batch, channels, size, size}, rng);
    probe_w = random_tensor(x.shape(), rng);
    problem.name = "ra_block";
    problem.inputs = {{"input", &x},
                      {"w_query", &layer.w_query},
                      {"w_key", &layer.w_key},
                      {"w_value", &layer.w_value}};
    problem.loss = [this] { return probe(probe_w, ra_block_forward(layer, x)); };
    problem.gradients = [this] {
      nn::AttentionCache<double> cache;
      ra_block_forward(layer, x, &cache);
      auto [gx, g] = ra_block_backward(layer, cache, probe_w);
      return std::vector<Tensor<double>>{gx, g.w_query, g.w_key, g.w_value};
    };
  }
};

struct MseFixture : GradcheckFixture {
  Tensor<double> pred, target;
  MseFixture(std::uint64_t seed, std::size_t n) {
    Rng rng(seed);
    pred = random_tensor({n}, rng);
    target = random_tensor({n}, rng);
    problem.name = "mse";
    problem.inputs = {{"pred", &pred}};
    problem.loss = [this] { return mse_loss(pred, target).loss; };
    problem.gradients = [this] {
      return std::vector<Tensor<double>>{mse_loss(pred, target).grad};
    };
  }
};

/// Train-mode MSE between the denoised output and a clean target, through
/// the whole network.
struct RacnnFixture : GradcheckFixture {
  Racnn<double> model;
  Tensor<double> x, target;
  RacnnFixture(std::uint64_t seed, const ModelConfig& cfg, std::size_t batch) {
    model = build_model<double>(cfg, seed);
    Rng rng(derive_seed(seed, 0xDA7A));
    // Perturb BN affine terms and biases away from their initial values.
    for (auto& p : model.parameters()) {
      if (p.name.ends_with("bias") || p.name.ends_with("beta")) {
        for (auto& v : p.tensor->values()) v = 0.1 * rng.normal();
      } else if (p.name.ends_with("gamma")) {
        for (auto& v : p.tensor->values()) v = 1.0 + 0.1 * rng.normal();
      }
    }
    x = random_tensor({batch, 2, cfg.image_rows, cfg.image_cols}, rng);
    target = random_tensor(x.shape(), rng);
    problem.name = cfg.variant == Variant::racnn ? "racnn" : "cnn";
    problem.inputs.push_back({"input", &x});
    for (auto& p : model.parameters()) problem.inputs.push_back({p.name, p.tensor});
    problem.loss = [this] { return loss_of(model.forward(x, nn::Mode::train)); };
    problem.gradients = [this] {
      RacnnCache<double> cache;
      const Tensor<double> noise = model.forward(x, nn::Mode::train, &cache);
      auto lg = mse_loss(h_hat(noise), target);
      // h_hat = x - noise, so d/d noise = -d/d h_hat and d/d x gets +d/d h_hat.
      Tensor<double> g_noise = lg.grad;
      for (auto& v : g_noise.values()) v = -v;
      Tensor<double> g_input;
      auto grads = model.backward(cache, g_noise, &g_input);
      g_input += lg.grad;
      std::vector<Tensor<double>> out{std::move(g_input)};
      for (auto& g : grads) out.push_back(std::move(g));
      return out;
    };
    problem.pattern = [this] {
      RacnnCache<double> cache;
      model.forward(x, nn::Mode::train, &cache);
      return Racnn<double>::activation_pattern(cache);
    };
  }

  Tensor<double> h_hat(const Tensor<double>& noise) const {
    Tensor<double> h(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) h[i] = x[i] - noise[i];
    return h;
  }
  double loss_of(const Tensor<double>& noise) const { return mse_loss(h_hat(noise), target).loss; }
};

}  // namespace detail

inline const std::vector<std::string>& gradcheck_layer_names() {
  static const std::vector<std::string> names{"conv2d", "relu",     "batchnorm", "attention",
                                              "ra_block", "mse", "racnn"};
  return names;
}

/// Small end-to-end configuration used for the full-network check.
inline ModelConfig gradcheck_model_config(Variant variant = Variant::racnn) {
  ModelConfig cfg;
  cfg.image_rows = 4;
  cfg.image_cols = 4;
  cfg.width = 8;
  cfg.depth = 1;
  cfg.kernel = 3;
  cfg.variant = variant;
  return cfg;
}

/// Random problem instances for one layer. `instance` selects shape and
/// values; all instances are deterministic.
inline std::unique_ptr<GradcheckFixture> make_gradcheck_fixture(const std::string& layer,
                                                                std::size_t instance,
                                                                std::uint64_t seed = 2024) {
  const std::uint64_t s = derive_seed(seed, instance);
  const std::size_t k = instance % 5;
  if (layer == "conv2d") {
    return std::make_unique<detail::ConvFixture>(s, 1 + k % 2, 2 + k % 3, 1 + (k + 1) % 3,
                                                 3 + k, k == 4 ? 1 : 3);
  }
  if (layer == "relu") return std::make_unique<detail::ReluFixture>(s, 16 + 8 * k);
  if (layer == "batchnorm") {
    return std::make_unique<detail::BatchNormFixture>(s, 2 + k % 2, 1 + k % 3, 2 + k % 3);
  }
  if (layer == "attention") {
    return std::make_unique<detail::AttentionFixture>(s, 1 + k % 2, 1 + k, 3 + k % 3);
  }
  if (layer == "ra_block") {
    return std::make_unique<detail::RaBlockFixture>(s, 1 + k % 2, 2 + k % 3, 1 + k % 3);
  }
  if (layer == "mse") return std::make_unique<detail::MseFixture>(s, 4 + 3 * k);
  if (layer == "racnn") {
    return std::make_unique<detail::RacnnFixture>(s, gradcheck_model_config(), 2);
  }
  throw InvalidArgument("unknown gradcheck layer '" + layer +
                        "' (conv2d|relu|batchnorm|attention|ra_block|mse|racnn)");
}

struct GradcheckSuiteOptions {
  std::string layer;  // empty: all layers
  double tolerance = 1e-4;
  double step = 1e-5;
  std::size_t instances = 5;
  std::uint64_t seed = 2024;
};

/// Runs `instances` random checks for every selected layer (the end-to-end
/// network check runs once).
inline std::vector<GradcheckReport> run_gradcheck_suite(const GradcheckSuiteOptions& opt) {
  std::vector<std::string> layers;
  if (opt.layer.empty()) {
    layers = gradcheck_layer_names();
  } else {
    make_gradcheck_fixture(opt.layer, 0, opt.seed);  // validates the name
    layers = {opt.layer};
  }
  std::vector<GradcheckReport> reports;
  for (const auto& layer : layers) {
    const std::size_t n = layer == "racnn" ? 1 : opt.instances;
    for (std::size_t i = 0; i < n; ++i) {
      auto fixture = make_gradcheck_fixture(layer, i, opt.seed);
      auto report = gradcheck(fixture->problem, opt.step, opt.tolerance);
      report.name = layer + "#" + std::to_string(i);
      reports.push_back(std::move(report));
    }
  }
  return reports;
}

}  // namespace nfce
