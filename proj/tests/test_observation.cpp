#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "nfce/channel.hpp"
#include "nfce/observation.hpp"
#include "nfce/parallel.hpp"

using namespace nfce;
using Catch::Matchers::WithinRel;

namespace {

const ArrayConfig kArray = ArrayConfig::half_wavelength(64);

ComplexVector channel(std::uint64_t seed) {
  return sample_channel(kArray, ScenarioSpec::hybrid(), seed).h;
}

}  // namespace

TEST_CASE("snr_to_noise_var examples") {
  CHECK(snr_to_noise_var(0.0, 1.0) == 1.0);
  CHECK_THAT(snr_to_noise_var(10.0, 1.0), WithinRel(0.1, 1e-15));
  CHECK_THAT(snr_to_noise_var(20.0, 1.0), WithinRel(0.01, 1e-15));
  CHECK_THAT(snr_to_noise_var(20.0, 4.0), WithinRel(0.04, 1e-15));
  CHECK(snr_to_noise_var(std::numeric_limits<double>::infinity()) == 0.0);
  CHECK_THROWS_AS(snr_to_noise_var(10.0, 0.0), InvalidArgument);
  CHECK_THROWS_AS(snr_to_noise_var(std::nan("")), InvalidArgument);
}

TEST_CASE("infinite SNR leaves the channel untouched") {
  const ComplexVector h = channel(1);
  const Observation obs = observe(h, std::numeric_limits<double>::infinity(), 1.0, 5);
  CHECK(obs.x_noisy == h);
  CHECK(obs.noise.squaredNorm() == 0.0);
  CHECK(obs.noise_var == 0.0);
}

TEST_CASE("observation is deterministic in its seed") {
  const ComplexVector h = channel(2);
  const Observation a = observe(h, 10.0, 1.0, 77);
  const Observation b = observe(h, 10.0, 1.0, 77);
  CHECK(a.x_noisy == b.x_noisy);
  CHECK(a.noise == b.noise);
  CHECK(a.source_seed == 77);
  CHECK(observe(h, 10.0, 1.0, 78).noise != a.noise);
}

TEST_CASE("noisy input is channel plus stored noise") {
  const double ulp = std::numeric_limits<double>::epsilon();
  for (std::uint64_t s = 0; s < 200; ++s) {
    const ComplexVector h = channel(s);
    for (double snr : {-10.0, 0.0, 20.0}) {
      const Observation obs = observe(h, snr, 2.0, s);
      CHECK(obs.x_noisy == h + obs.noise);
      // Subtracting back rounds once more: exact up to half an ulp of x.
      for (Eigen::Index m = 0; m < h.size(); ++m) {
        const Complex back = obs.x_noisy[m] - obs.noise[m];
        CHECK(std::abs(back.real() - h[m].real()) <= ulp * std::abs(obs.x_noisy[m].real()));
        CHECK(std::abs(back.imag() - h[m].imag()) <= ulp * std::abs(obs.x_noisy[m].imag()));
      }
    }
  }
}

TEST_CASE("empirical noise power matches the requested SNR") {
  const std::size_t n = 10000;
  const ComplexVector h = channel(3);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += observe(h, 10.0, 1.0, derive_seed(4, i)).noise.squaredNorm() / double(h.size());
  }
  CHECK_THAT(acc / double(n), WithinRel(0.1, 0.02));
}

TEST_CASE("SNR calibration against the ensemble channel power") {
  const std::size_t n = 10000;
  const double power = 2.0;
  for (double snr : {0.0, 10.0, 20.0}) {
    double signal = 0.0, noise = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const ComplexVector h = channel(derive_seed(5, i));
      const Observation obs = observe(h, snr, power, derive_seed(6, i));
      signal += h.squaredNorm() * power;
      noise += obs.noise.squaredNorm() * power;  // |z|^2 with z = sqrt(P) * noise
    }
    CHECK_THAT(signal / noise, WithinRel(std::pow(10.0, snr / 10.0), 0.03));
  }
}

TEST_CASE("noise is white") {
  // 12500 draws of 8 components: 1e5 pooled samples.
  const std::size_t draws = 12500, m = 8;
  const ComplexVector zero = ComplexVector::Zero(m);
  std::vector<ComplexVector> z(draws);
  for (std::size_t i = 0; i < draws; ++i) z[i] = observe(zero, 0.0, 1.0, derive_seed(8, i)).noise;

  // Per-real-component variance is 1/2; the standard error of a product
  // mean of independent components is 1/2 / sqrt(N).
  const double pooled = double(draws * m);
  double re_im = 0.0;
  for (const auto& v : z)
    for (Eigen::Index k = 0; k < v.size(); ++k) re_im += v[k].real() * v[k].imag();
  CHECK(std::abs(re_im / pooled) < 3 * 0.5 / std::sqrt(pooled));

  const double pairs = double(draws * (m - 1));
  double re_re = 0.0, im_im = 0.0;
  Complex cross = 0.0;
  for (const auto& v : z) {
    for (Eigen::Index k = 0; k + 1 < v.size(); ++k) {
      re_re += v[k].real() * v[k + 1].real();
      im_im += v[k].imag() * v[k + 1].imag();
      cross += v[k] * std::conj(v[k + 1]);
    }
  }
  CHECK(std::abs(re_re / pairs) < 3 * 0.5 / std::sqrt(pairs));
  CHECK(std::abs(im_im / pairs) < 3 * 0.5 / std::sqrt(pairs));
  // Complex cross-covariance: each part has standard error 1/sqrt(2N).
  CHECK(std::abs((cross / pairs).real()) < 3 / std::sqrt(2 * pairs));
  CHECK(std::abs((cross / pairs).imag()) < 3 / std::sqrt(2 * pairs));
}

TEST_CASE("observation overload uses the realization's gain variance") {
  auto scen = ScenarioSpec::hybrid();
  scen.gain_variance = 4.0;
  const auto ch = sample_channel(kArray, scen, 9);
  const Observation obs = observe(ch, 10.0, 1.0, 10);
  CHECK_THAT(obs.noise_var, WithinRel(0.4, 1e-15));
}
