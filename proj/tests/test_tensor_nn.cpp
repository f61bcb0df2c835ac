#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "nfce/gradcheck_suite.hpp"
#include "nfce/nn/attention.hpp"
#include "nfce/nn/batchnorm.hpp"
#include "nfce/nn/conv2d.hpp"
#include "nfce/nn/relu.hpp"
#include "nfce/nn/softmax.hpp"

using namespace nfce;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Tensor<double> randn(Shape shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

// Direct six-loop cross-correlation with zero padding.
Tensor<double> conv_oracle(const nn::Conv2d<double>& layer, const Tensor<double>& x) {
  const std::size_t b_n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = layer.out_channels(), r = layer.kernel();
  const long pad = static_cast<long>(r / 2);
  Tensor<double> y({b_n, cout, h, w});
  for (std::size_t b = 0; b < b_n; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          double acc = layer.bias[o];
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t ky = 0; ky < r; ++ky)
              for (std::size_t kx = 0; kx < r; ++kx) {
                const long yi = long(i) + long(ky) - pad, xj = long(j) + long(kx) - pad;
                if (yi < 0 || xj < 0 || yi >= long(h) || xj >= long(w)) continue;
                acc += layer.weight(o, c, ky, kx) * x(b, c, std::size_t(yi), std::size_t(xj));
              }
          y(b, o, i, j) = acc;
        }
  return y;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_zero(const Tensor<double>& t) {
  for (double v : t.values())
    if (v != 0.0) return false;
  return true;
}

}  // namespace

TEST_CASE("tensor shape rules") {
  Tensor<double> t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  t(1, 2, 3) = 5.0;
  CHECK(t[23] == 5.0);
  CHECK(t.reshaped({6, 4})(5, 3) == 5.0);
  CHECK_THROWS_AS(t.reshaped({5, 5}), InvalidArgument);
  CHECK_THROWS_AS(Tensor<double>({2, 0}), InvalidArgument);
  CHECK_THROWS_AS(Tensor<double>({2, 2}, std::vector<double>(3)), InvalidArgument);
  const Tensor<float> f = t.cast<float>();
  CHECK(f[23] == 5.0f);
}

TEST_CASE("conv2d identity kernel") {
  nn::Conv2d<double> layer(1, 1, 1);
  layer.weight[0] = 1.0;
  Rng rng(1);
  const auto x = randn({2, 1, 4, 5}, rng);
  CHECK(nn::conv2d_forward(layer, x) == x);
}

TEST_CASE("conv2d zero padding arithmetic") {
  nn::Conv2d<double> layer(1, 1, 3);
  layer.weight.fill(1.0);
  const double c = 2.5;
  const auto y = nn::conv2d_forward(layer, Tensor<double>({1, 1, 5, 5}, c));
  CHECK(y(0, 0, 2, 2) == 9 * c);
  CHECK(y(0, 0, 0, 0) == 4 * c);
  CHECK(y(0, 0, 4, 4) == 4 * c);
  CHECK(y(0, 0, 0, 2) == 6 * c);
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  Rng rng(2);
  for (int k = 0; k < 20; ++k) {
    const std::size_t b = 1 + rng.uniform_int(0, 2), cin = 1 + rng.uniform_int(0, 3),
                      cout = 1 + rng.uniform_int(0, 3), h = 1 + rng.uniform_int(0, 7),
                      w = 1 + rng.uniform_int(0, 7), r = 1 + 2 * rng.uniform_int(0, 2);
    nn::Conv2d<double> layer(cin, cout, r);
    layer.weight = randn(layer.weight.shape(), rng);
    layer.bias = randn(layer.bias.shape(), rng);
    const auto x = randn({b, cin, h, w}, rng);
    CHECK(max_abs_diff(nn::conv2d_forward(layer, x), conv_oracle(layer, x)) <= 1e-12);
  }
}

TEST_CASE("conv2d rejects bad shapes") {
  nn::Conv2d<double> layer(2, 3, 3);
  CHECK_THROWS_AS(nn::conv2d_forward(layer, Tensor<double>({1, 3, 4, 4})), InvalidArgument);
  CHECK_THROWS_AS(nn::conv2d_forward(layer, Tensor<double>({3, 4, 4})), InvalidArgument);
  CHECK_THROWS_AS(nn::Conv2d<double>(2, 3, 2), InvalidArgument);
  CHECK_THROWS_AS(nn::conv2d_backward(layer, Tensor<double>({1, 2, 4, 4}),
                                      Tensor<double>({1, 2, 4, 4})),
                  InvalidArgument);
}

TEST_CASE("conv2d backward simple identities") {
  Rng rng(3);
  nn::Conv2d<double> layer(2, 3, 3);
  layer.weight = randn(layer.weight.shape(), rng);
  const auto x = randn({2, 2, 4, 4}, rng);
  const auto g = randn({2, 3, 4, 4}, rng);
  const auto grads = nn::conv2d_backward(layer, x, g);
  for (std::size_t o = 0; o < 3; ++o) {
    double s = 0;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < 16; ++i) s += g[(b * 3 + o) * 16 + i];
    CHECK_THAT(grads.bias[o], WithinAbs(s, 1e-12));
  }
  const auto zero = nn::conv2d_backward(layer, x, Tensor<double>({2, 3, 4, 4}));
  CHECK(all_zero(zero.input));
  CHECK(all_zero(zero.weight));
  CHECK(all_zero(zero.bias));
}

TEST_CASE("conv2d on a 2x3x5x5 input passes gradcheck") {
  auto fx = std::make_unique<detail::ConvFixture>(77, 2, 3, 4, 5, 3);
  CHECK(fx->x.shape() == Shape{2, 3, 5, 5});
  const auto report = gradcheck(fx->problem, 1e-5, 1e-4);
  CHECK(report.passed);
  CHECK(report.max_rel_error() < 1e-4);
}

TEST_CASE("relu forward and backward") {
  const Tensor<double> x({3}, std::vector<double>{-1, 0, 2});
  CHECK(nn::relu_forward(x) == Tensor<double>({3}, std::vector<double>{0, 0, 2}));
  CHECK(nn::relu_backward(x, Tensor<double>({3}, 1.0)) ==
        Tensor<double>({3}, std::vector<double>{0, 0, 1}));
  for (std::size_t i = 0; i < 5; ++i) {
    auto fx = make_gradcheck_fixture("relu", i);
    CHECK(gradcheck(fx->problem, 1e-5, 1e-6).passed);
  }
}

TEST_CASE("batchnorm constant input gives beta") {
  nn::BatchNorm<double> bn(2);
  bn.beta[0] = 0.25;
  bn.beta[1] = -1.5;
  bn.gamma[0] = 3.0;
  Tensor<double> x({3, 2, 2, 2});
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t i = 0; i < 4; ++i) {
      x[(b * 2 + 0) * 4 + i] = 7.0;
      x[(b * 2 + 1) * 4 + i] = -2.0;
    }
  const auto y = nn::batchnorm_forward(bn, x, nn::Mode::train);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(y[(b * 2 + 0) * 4 + i] == 0.25);
      CHECK(y[(b * 2 + 1) * 4 + i] == -1.5);
    }
}

TEST_CASE("batchnorm normalizes per channel") {
  Rng rng(4);
  nn::BatchNorm<double> bn(3);
  auto x = randn({4, 3, 3, 3}, rng);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 3.0 + 0.1 * x[i] * double(1 + (i / 9) % 3);
  nn::BatchNormCache<double> cache;
  const auto y = nn::batchnorm_forward(bn, x, nn::Mode::train, &cache);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < 9; ++i) mean += y[(b * 3 + c) * 9 + i] / 36.0;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < 9; ++i) var += std::pow(y[(b * 3 + c) * 9 + i] - mean, 2) / 36.0;
    const double s2 = cache.batch_var[c];
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - s2 / (s2 + 1e-5)) < 1e-5);
  }
}

TEST_CASE("batchnorm eval mode uses running statistics") {
  Rng rng(5);
  nn::BatchNorm<double> bn(2);
  const auto x = randn({1, 2, 3, 3}, rng);
  const auto y = nn::batchnorm_forward(bn, x, nn::Mode::eval);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK_THAT(y[i], WithinRel(x[i] / std::sqrt(1 + 1e-5), 1e-14));
  nn::BatchNormCache<double> cache;
  nn::batchnorm_forward(bn, x, nn::Mode::eval, &cache);
  CHECK_THROWS_AS(nn::batchnorm_backward(bn, cache, x), InvalidArgument);
}

TEST_CASE("batchnorm rejects single-element batches in train mode") {
  nn::BatchNorm<double> bn(2);
  CHECK_THROWS_AS(nn::batchnorm_forward(bn, Tensor<double>({1, 2, 1, 1}), nn::Mode::train),
                  InvalidArgument);
  CHECK_NOTHROW(nn::batchnorm_forward(bn, Tensor<double>({1, 2, 1, 1}), nn::Mode::eval));
  CHECK_NOTHROW(nn::batchnorm_forward(bn, Tensor<double>({2, 2, 1, 1}), nn::Mode::train));
}

TEST_CASE("batchnorm backward identities") {
  Rng rng(6);
  nn::BatchNorm<double> bn(3);
  bn.gamma = randn({3}, rng);
  const auto x = randn({2, 3, 4, 4}, rng);
  nn::BatchNormCache<double> cache;
  nn::batchnorm_forward(bn, x, nn::Mode::train, &cache);
  const auto g = randn(x.shape(), rng);
  const auto grads = nn::batchnorm_backward(bn, cache, g);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < 16; ++i) s += g[(b * 3 + c) * 16 + i];
    CHECK_THAT(grads.beta[c], WithinAbs(s, 1e-12));
  }
  const auto flat = nn::batchnorm_backward(bn, cache, Tensor<double>(x.shape(), 1.7));
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < 16; ++i) s += flat.input[(b * 3 + c) * 16 + i];
    CHECK(std::abs(s) < 1e-10);
  }
}

TEST_CASE("batchnorm running statistics use the configured momentum") {
  Rng rng(7);
  nn::BatchNorm<double> bn(1);
  const auto x = randn({4, 1, 2, 2}, rng);
  nn::BatchNormCache<double> cache;
  nn::batchnorm_forward(bn, x, nn::Mode::train, &cache);
  double mean = 0, var = 0;
  for (double v : x.values()) mean += v / 16;
  for (double v : x.values()) var += (v - mean) * (v - mean) / 15;
  nn::update_running_stats(bn, cache);
  CHECK_THAT(bn.running_mean[0], WithinRel(0.1 * mean, 1e-12));
  CHECK_THAT(bn.running_var[0], WithinRel(0.9 + 0.1 * var, 1e-12));
}

TEST_CASE("softmax examples") {
  const std::vector<double> zeros{0, 0, 0};
  for (double v : nn::softmax_row<double>(zeros)) CHECK_THAT(v, WithinRel(1.0 / 3, 1e-15));
  const std::vector<double> big{1000, 0};
  const auto s = nn::softmax_row<double>(big);
  CHECK(s[0] == 1.0);
  CHECK(s[1] >= 0.0);
  CHECK(s[1] < 1e-300);
  CHECK(std::isfinite(s[1]));
}

TEST_CASE("softmax normalization, shift invariance and order") {
  Rng rng(8);
  for (int k = 0; k < 50; ++k) {
    std::vector<double> x(1 + rng.uniform_int(0, 20));
    for (auto& v : x) v = 5 * rng.normal();
    const auto a = nn::softmax_row<double>(x);
    double sum = 0;
    for (double v : a) sum += v;
    CHECK(std::abs(sum - 1) <= 1e-12);
    auto shifted = x;
    for (auto& v : shifted) v += 123.456;
    const auto b = nn::softmax_row<double>(shifted);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(std::abs(a[i] - b[i]) <= 1e-12);
      for (std::size_t j = 0; j < x.size(); ++j)
        if (x[i] < x[j]) CHECK(a[i] <= a[j]);
    }
  }
}

TEST_CASE("attention with zero query and key averages the values") {
  Rng rng(9);
  nn::SelfAttention<double> attn(3, 3);
  attn.w_value = randn({3, 3}, rng);
  const auto x = randn({2, 5, 3}, rng);
  nn::AttentionCache<double> cache;
  const auto y = nn::attention_forward(attn, x, &cache);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t s = 0; s < 5; ++s) CHECK_THAT(cache.weights(b, t, s), WithinRel(0.2, 1e-15));
    for (std::size_t d = 0; d < 3; ++d) {
      double mean_v = 0;
      for (std::size_t s = 0; s < 5; ++s) mean_v += cache.value(b, s, d) / 5;
      for (std::size_t t = 0; t < 5; ++t) CHECK_THAT(y(b, t, d), WithinAbs(mean_v, 1e-14));
    }
  }
}

TEST_CASE("single-token attention returns the value projection") {
  Rng rng(10);
  nn::SelfAttention<double> attn(4, 4);
  attn.w_query = randn({4, 4}, rng);
  attn.w_key = randn({4, 4}, rng);
  attn.w_value = randn({4, 4}, rng);
  const auto x = randn({3, 1, 4}, rng);
  nn::AttentionCache<double> cache;
  const auto y = nn::attention_forward(attn, x, &cache);
  for (std::size_t b = 0; b < 3; ++b) {
    CHECK(cache.weights(b, 0, 0) == 1.0);
    for (std::size_t d = 0; d < 4; ++d) CHECK_THAT(y(b, 0, d), WithinAbs(cache.value(b, 0, d), 1e-15));
  }
}

TEST_CASE("attention rows sum to one") {
  Rng rng(11);
  nn::SelfAttention<double> attn(6, 6);
  attn.w_query = randn({6, 6}, rng);
  attn.w_key = randn({6, 6}, rng);
  const auto x = randn({2, 9, 6}, rng);
  nn::AttentionCache<double> cache;
  nn::attention_forward(attn, x, &cache);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 9; ++t) {
      double s = 0;
      for (std::size_t u = 0; u < 9; ++u) s += cache.weights(b, t, u);
      CHECK(std::abs(s - 1) <= 1e-12);
    }
}

TEST_CASE("attention rejects mismatched shapes and missing caches") {
  nn::SelfAttention<double> attn(3, 3);
  CHECK_THROWS_AS(nn::attention_forward(attn, Tensor<double>({1, 4, 2})), InvalidArgument);
  CHECK_THROWS_AS(nn::attention_forward(attn, Tensor<double>({4, 3})), InvalidArgument);
  nn::AttentionCache<double> empty;
  CHECK_THROWS_AS(nn::attention_backward(attn, empty, Tensor<double>({1, 4, 3})), InvalidArgument);
}

TEST_CASE("attention backward of zero is zero") {
  auto fx = std::make_unique<detail::AttentionFixture>(12, 1, 4, 3);
  nn::AttentionCache<double> cache;
  nn::attention_forward(fx->layer, fx->x, &cache);
  const auto g = nn::attention_backward(fx->layer, cache, Tensor<double>(fx->x.shape()));
  CHECK(all_zero(g.input));
  CHECK(all_zero(g.w_query));
  CHECK(all_zero(g.w_key));
  CHECK(all_zero(g.w_value));
}

TEST_CASE("attention value gradient reduces to mean pooling") {
  // With W_Q = W_K = 0 every output row is mean_s(x_s) W_V, so for the
  // probe sum(G * out) the W_V gradient is mean(x)^T sum_t(G_t).
  Rng rng(13);
  nn::SelfAttention<double> attn(3, 3);
  attn.w_value = randn({3, 3}, rng);
  const auto x = randn({1, 4, 3}, rng);
  const auto g = randn({1, 4, 3}, rng);
  nn::AttentionCache<double> cache;
  nn::attention_forward(attn, x, &cache);
  const auto grads = nn::attention_backward(attn, cache, g);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t d = 0; d < 3; ++d) {
      double mean_x = 0, sum_g = 0;
      for (std::size_t t = 0; t < 4; ++t) {
        mean_x += x(0, t, c) / 4;
        sum_g += g(0, t, d);
      }
      CHECK_THAT(grads.w_value(c, d), WithinAbs(mean_x * sum_g, 1e-13));
    }
}

TEST_CASE("attention gradchecks") {
  auto small = std::make_unique<detail::AttentionFixture>(14, 1, 4, 3);
  CHECK(gradcheck(small->problem, 1e-5, 1e-4).passed);
  auto wide = std::make_unique<detail::AttentionFixture>(15, 1, 4, 8);
  CHECK(gradcheck(wide->problem, 1e-5, 1e-4).max_rel_error() < 1e-4);
}

TEST_CASE("every layer passes gradcheck on five random instances") {
  for (const auto& layer : gradcheck_layer_names()) {
    if (layer == "racnn") continue;
    for (std::size_t i = 0; i < 5; ++i) {
      auto fx = make_gradcheck_fixture(layer, i);
      const auto report = gradcheck(fx->problem, 1e-5, 1e-4);
      INFO(layer << " #" << i << " max rel " << report.max_rel_error());
      CHECK(report.passed);
    }
  }
}

TEST_CASE("mse gradcheck is exact up to rounding") {
  for (std::size_t i = 0; i < 5; ++i) {
    auto fx = make_gradcheck_fixture("mse", i);
    CHECK(gradcheck(fx->problem, 1e-5, 1e-8).passed);
  }
}

TEST_CASE("gradcheck of a linear function") {
  Tensor<double> w({5}, std::vector<double>{1, -2, 3, 0.5, 7});
  Tensor<double> x({5}, std::vector<double>{0.3, 0.1, -0.4, 2, 1});
  GradcheckProblem p;
  p.name = "linear";
  p.inputs = {{"x", &x}};
  p.loss = [&] {
    double s = 0;
    for (std::size_t i = 0; i < 5; ++i) s += w[i] * x[i];
    return s;
  };
  p.gradients = [&] { return std::vector<Tensor<double>>{w}; };
  const auto report = gradcheck(p, 1e-5, 1e-8);
  CHECK(report.passed);
  CHECK(report.max_rel_error() < 1e-8);
}

TEST_CASE("gradcheck reports non-finite losses and tiny tolerances") {
  Tensor<double> x({2}, std::vector<double>{1, 2});
  GradcheckProblem p;
  p.inputs = {{"x", &x}};
  p.loss = [&] { return x[0] > 1.0 ? std::numeric_limits<double>::infinity() : x[0] * x[1]; };
  p.gradients = [&] { return std::vector<Tensor<double>>{Tensor<double>({2}, std::vector<double>{2, 1})}; };
  const auto bad = gradcheck(p, 1e-5, 1e-4);
  CHECK_FALSE(bad.finite);
  CHECK_FALSE(bad.passed);

  auto fx = make_gradcheck_fixture("conv2d", 0);
  const auto strict = gradcheck(fx->problem, 1e-5, 1e-12);
  CHECK_FALSE(strict.passed);
  CHECK(strict.max_rel_error() > 1e-12);
}

TEST_CASE("gradcheck suite filter and unknown layers") {
  GradcheckSuiteOptions opt;
  opt.layer = "conv2d";
  const auto reports = run_gradcheck_suite(opt);
  CHECK(reports.size() == 5);
  for (const auto& r : reports) CHECK(r.name.rfind("conv2d", 0) == 0);
  opt.layer = "pooling";
  CHECK_THROWS_AS(run_gradcheck_suite(opt), InvalidArgument);
}

TEST_CASE("forward passes are deterministic") {
  Rng rng(16);
  nn::Conv2d<double> conv(3, 4, 3);
  conv.weight = randn(conv.weight.shape(), rng);
  nn::SelfAttention<double> attn(4, 4);
  attn.w_query = randn({4, 4}, rng);
  attn.w_key = randn({4, 4}, rng);
  attn.w_value = randn({4, 4}, rng);
  const auto x = randn({2, 3, 5, 5}, rng);
  CHECK(nn::conv2d_forward(conv, x) == nn::conv2d_forward(conv, x));
  const auto t = randn({2, 7, 4}, rng);
  CHECK(nn::attention_forward(attn, t) == nn::attention_forward(attn, t));
}

TEST_CASE("layers run in single precision") {
  Rng rng(17);
  nn::Conv2d<double> conv(2, 2, 3);
  conv.weight = randn(conv.weight.shape(), rng);
  const auto x = randn({1, 2, 4, 4}, rng);
  nn::Conv2d<float> conv_f;
  conv_f.weight = conv.weight.cast<float>();
  conv_f.bias = conv.bias.cast<float>();
  const auto y = nn::conv2d_forward(conv, x);
  const auto yf = nn::conv2d_forward(conv_f, x.cast<float>());
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - yf[i]) < 1e-5);
}
