#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

#include "nfce/channel.hpp"
#include "nfce/error.hpp"
#include "nfce/random.hpp"

namespace nfce {

/// Noisy LS-domain channel input for a single user with unit pilot.
struct Observation {
  ComplexVector x_noisy;  // h + noise
  ComplexVector noise;    // effective noise z / sqrt(P)
  double snr_db = 0.0;
  double noise_var = 0.0;  // per-component variance of `noise`
  std::uint64_t source_seed = 0;
};

/// Noise variance sigma_z^2 = P * 10^(-snr/10). An infinite SNR maps to 0.
inline double snr_to_noise_var(double snr_db, double transmit_power = 1.0) {
  require(transmit_power > 0.0, "transmit power must be positive");
  require(!std::isnan(snr_db), "SNR must not be NaN");
  if (std::isinf(snr_db)) return snr_db > 0 ? 0.0 : std::numeric_limits<double>::infinity();
  return transmit_power * std::pow(10.0, -snr_db / 10.0);
}

/// y = sqrt(P) h + z,  z ~ CN(0, sigma_z^2 I), returned in LS form y / sqrt(P).
///
/// SNR is referenced to the ensemble channel power per antenna
/// (`channel_power`, i.e. the gain variance), not to the realization's own
/// energy, so a given SNR always means the same noise level.
///
/// x_noisy is computed as h + noise from the stored noise, so
/// x_noisy == h + noise holds bitwise; x_noisy - noise recovers h up to one
/// rounding of the addition.
inline Observation observe(const ComplexVector& h, double snr_db,
                           double transmit_power, std::uint64_t seed,
                           double channel_power = 1.0) {
  require(channel_power > 0.0, "channel power must be positive");
  const double sigma_z2 = channel_power * snr_to_noise_var(snr_db, transmit_power);
  Observation obs;
  obs.snr_db = snr_db;
  obs.noise_var = sigma_z2 / transmit_power;
  obs.source_seed = seed;
  obs.noise = ComplexVector::Zero(h.size());
  if (obs.noise_var > 0.0) {
    Rng rng(seed);
    const double inv_sqrt_p = 1.0 / std::sqrt(transmit_power);
    for (Eigen::Index m = 0; m < h.size(); ++m) {
      obs.noise[m] = rng.complex_normal(sigma_z2) * inv_sqrt_p;
    }
  }
  obs.x_noisy = h + obs.noise;
  return obs;
}

inline Observation observe(const ChannelRealization& channel, double snr_db,
                           double transmit_power, std::uint64_t seed) {
  return observe(channel.h, snr_db, transmit_power, seed,
                 channel.paths.gain_variance);
}

}  // namespace nfce
