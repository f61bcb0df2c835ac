#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "nfce/classical.hpp"
#include "nfce/metrics.hpp"
#include "nfce/parallel.hpp"

using namespace nfce;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::vector<ComplexVector> draw(const ArrayConfig& cfg, const ScenarioSpec& scen, std::size_t n,
                                std::uint64_t seed) {
  std::vector<ComplexVector> out(n);
  parallel_for(n, [&](std::size_t i) { out[i] = sample_channel(cfg, scen, derive_seed(seed, i)).h; });
  return out;
}

std::vector<Observation> observe_all(const std::vector<ComplexVector>& hs, double snr,
                                     std::uint64_t seed) {
  std::vector<Observation> out(hs.size());
  for (std::size_t i = 0; i < hs.size(); ++i) out[i] = observe(hs[i], snr, 1.0, derive_seed(seed, i));
  return out;
}

}  // namespace

TEST_CASE("LS returns the observation") {
  const ArrayConfig cfg = ArrayConfig::half_wavelength(32);
  const ComplexVector h = sample_channel(cfg, ScenarioSpec::hybrid(), 1).h;
  const Observation clean = observe(h, std::numeric_limits<double>::infinity(), 1.0, 2);
  CHECK(ls_estimate(clean) == h);
  const Observation noisy = observe(h, 5.0, 1.0, 3);
  const ComplexVector diff = ls_estimate(noisy) - h;
  CHECK((diff - noisy.noise).norm() <= 4 * std::numeric_limits<double>::epsilon() * noisy.x_noisy.norm());
}

TEST_CASE("LS NMSE is 1/SNR") {
  const ArrayConfig cfg = ArrayConfig::half_wavelength(256);
  const auto hs = draw(cfg, ScenarioSpec::hybrid(), 10000, 21);
  for (double snr : {0.0, 10.0, 20.0}) {
    const auto obs = observe_all(hs, snr, 22);
    std::vector<ComplexVector> est;
    for (const auto& o : obs) est.push_back(ls_estimate(o));
    CHECK_THAT(nmse(hs, est), WithinRel(std::pow(10.0, -snr / 10.0), 0.02));
  }
}

TEST_CASE("fit_mmse of a rank-one set") {
  const Complex c(1.5, -2.0);
  std::vector<ComplexVector> cal(10, ComplexVector::Zero(4));
  for (auto& h : cal) h[0] = c;
  const MmseFilter f = fit_mmse(cal);
  CHECK(f.sample_count == 10);
  CHECK(f.covariance(0, 0) == Complex(std::norm(c), 0.0));
  CHECK(f.covariance.cwiseAbs().sum() == std::norm(c));
}

TEST_CASE("fit_mmse rejects an empty set") {
  CHECK_THROWS_AS(fit_mmse(std::span<const ComplexVector>{}), InvalidArgument);
  std::vector<ComplexVector> mixed{ComplexVector::Zero(3), ComplexVector::Zero(4)};
  CHECK_THROWS_AS(fit_mmse(mixed), InvalidArgument);
}

TEST_CASE("empirical covariance trace and symmetry") {
  const ArrayConfig cfg = ArrayConfig::half_wavelength(256);
  const auto hs = draw(cfg, ScenarioSpec::far_only(PathCount::fixed(3)), 100000, 31);
  const MmseFilter f = fit_mmse(hs);
  CHECK_THAT(f.covariance.trace().real(), WithinRel(256.0, 0.02));
  CHECK((f.covariance - f.covariance.adjoint()).norm() <= 1e-12);
}

TEST_CASE("covariance matches a direct outer-product sum") {
  const ArrayConfig cfg = ArrayConfig::half_wavelength(16);
  const auto hs = draw(cfg, ScenarioSpec::hybrid(), 700, 32);
  ComplexMatrix direct = ComplexMatrix::Zero(16, 16);
  for (const auto& h : hs) direct += h * h.adjoint();
  direct /= 700.0;
  CHECK((fit_mmse(hs).covariance - direct).norm() <= 1e-12 * direct.norm());
}

TEST_CASE("MMSE limits") {
  const ArrayConfig cfg = ArrayConfig::half_wavelength(16);
  const auto hs = draw(cfg, ScenarioSpec::hybrid(), 2000, 41);
  const MmseFilter f = fit_mmse(hs);
  const ComplexVector h = hs.front();

  Observation huge = observe(h, 0.0, 1.0, 42);
  huge.noise_var = 1e12;
  CHECK(mmse_estimate(f, huge).norm() < 1e-9 * huge.x_noisy.norm());

  const Observation clean = observe(h, std::numeric_limits<double>::infinity(), 1.0, 43);
  CHECK((mmse_estimate(f, clean) - h).norm() < 1e-9 * h.norm());
}

TEST_CASE("zero noise with a singular covariance fails") {
  std::vector<ComplexVector> cal(5, ComplexVector::Zero(4));
  for (auto& h : cal) h[0] = 1.0;
  const MmseFilter f = fit_mmse(cal);
  Observation obs = observe(ComplexVector::Ones(4), std::numeric_limits<double>::infinity(), 1.0, 1);
  CHECK_THROWS_AS(mmse_estimate(f, obs), NumericalError);
  CHECK_THROWS_AS(f.wiener_matrix(0.0), NumericalError);
  obs.noise_var = 0.1;
  CHECK_NOTHROW(mmse_estimate(f, obs));
}

TEST_CASE("MMSE is linear in the observation") {
  const ArrayConfig cfg = ArrayConfig::half_wavelength(32);
  const MmseFilter f = fit_mmse(draw(cfg, ScenarioSpec::hybrid(), 3000, 51));
  Observation a = observe(ComplexVector::Zero(32), 0.0, 1.0, 52);
  Observation b = observe(ComplexVector::Zero(32), 0.0, 1.0, 53);
  const Complex alpha(0.7, -1.3), beta(-2.1, 0.4);
  Observation mix = a;
  mix.x_noisy = alpha * a.x_noisy + beta * b.x_noisy;
  const ComplexVector lhs = mmse_estimate(f, mix);
  const ComplexVector rhs = alpha * mmse_estimate(f, a) + beta * mmse_estimate(f, b);
  CHECK((lhs - rhs).norm() <= 1e-9 * rhs.norm());
}

TEST_CASE("Wiener matrix agrees with the per-observation solve") {
  const ArrayConfig cfg = ArrayConfig::half_wavelength(24);
  const auto hs = draw(cfg, ScenarioSpec::hybrid(), 2000, 61);
  const MmseFilter f = fit_mmse(hs);
  const Observation obs = observe(hs[3], 5.0, 1.0, 62);
  const ComplexVector direct = mmse_estimate(f, obs);
  CHECK((f.wiener_matrix(obs.noise_var) * obs.x_noisy - direct).norm() <= 1e-10 * direct.norm());
}

TEST_CASE("MMSE beats LS on its own scenario") {
  const ArrayConfig cfg = ArrayConfig::half_wavelength(256);
  const auto scen = ScenarioSpec::far_only(PathCount::fixed(3));
  const MmseFilter f = fit_mmse(draw(cfg, scen, 10000, 71));
  const auto hs = draw(cfg, scen, 10000, 72);
  for (double snr : {0.0, 10.0}) {
    const auto obs = observe_all(hs, snr, 73);
    std::vector<ComplexVector> ls, mmse;
    const ComplexMatrix w = f.wiener_matrix(obs.front().noise_var);
    for (const auto& o : obs) {
      ls.push_back(ls_estimate(o));
      mmse.push_back(w * o.x_noisy);
    }
    CHECK(nmse(hs, mmse) < nmse(hs, ls));
  }
}

TEST_CASE("nmse examples") {
  std::vector<ComplexVector> h{ComplexVector::Constant(4, Complex(1, 2)),
                               ComplexVector::Constant(4, Complex(-3, 0.5))};
  CHECK(nmse(h, h) == 0.0);
  std::vector<ComplexVector> zero(2, ComplexVector::Zero(4));
  CHECK(nmse(h, zero) == 1.0);
  CHECK_THROWS_AS(nmse(zero, h), InvalidArgument);
  CHECK_THROWS_AS(nmse(h, std::vector<ComplexVector>(1, ComplexVector::Zero(4))), InvalidArgument);
}

TEST_CASE("nmse is invariant to a common complex scale") {
  const ArrayConfig cfg = ArrayConfig::half_wavelength(16);
  const auto hs = draw(cfg, ScenarioSpec::hybrid(), 100, 81);
  const auto obs = observe_all(hs, 3.0, 82);
  std::vector<ComplexVector> est, hs2, est2;
  const Complex k(-2.5, 7.0);
  for (std::size_t i = 0; i < hs.size(); ++i) {
    est.push_back(obs[i].x_noisy);
    hs2.push_back(k * hs[i]);
    est2.push_back(k * obs[i].x_noisy);
  }
  CHECK_THAT(nmse(hs2, est2), WithinRel(nmse(hs, est), 1e-12));
}
