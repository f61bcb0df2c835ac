#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nfce/error.hpp"
#include "nfce/random.hpp"

namespace nfce {

using Complex = std::complex<double>;
using ComplexVector = Eigen::VectorXcd;
using ComplexMatrix = Eigen::MatrixXcd;

/// Uniform linear array geometry. Spacing defaults to half a wavelength.
struct ArrayConfig {
  std::size_t num_antennas = 256;
  double wavelength = 0.01;    // meters
  double spacing = 0.005;      // meters
  double carrier_freq = 30e9;  // Hz, informational

  static ArrayConfig half_wavelength(std::size_t num_antennas,
                                     double wavelength = 0.01) {
    ArrayConfig cfg;
    cfg.num_antennas = num_antennas;
    cfg.wavelength = wavelength;
    cfg.spacing = wavelength / 2.0;
    cfg.carrier_freq = 299792458.0 / wavelength;
    return cfg;
  }

  void validate() const {
    require(num_antennas >= 1, "ArrayConfig: num_antennas must be positive");
    require(wavelength > 0.0, "ArrayConfig: wavelength must be positive");
    require(spacing >= 0.0, "ArrayConfig: spacing must be non-negative");
  }
};

/// Boundary between radiating near field and far field: M^2 * lambda / 2.
inline double rayleigh_distance(const ArrayConfig& cfg) {
  const double m = static_cast<double>(cfg.num_antennas);
  return 0.5 * m * m * cfg.wavelength;
}

struct NearPath {
  double angle = 0.0;     // radians
  double distance = 1.0;  // meters, scatterer to array center
};

/// Multipath geometry: far-field block first, then near-field block.
struct PathSet {
  std::vector<double> far_angles;
  std::vector<NearPath> near_paths;
  double gain_variance = 1.0;

  std::size_t num_far() const { return far_angles.size(); }
  std::size_t num_near() const { return near_paths.size(); }
  std::size_t size() const { return num_far() + num_near(); }
};

inline void check_angle(double angle) {
  constexpr double half_pi = std::numbers::pi / 2.0;
  require(std::isfinite(angle) && angle >= -half_pi && angle <= half_pi,
          "steering angle must lie in [-pi/2, pi/2]");
}

/// Planar-wavefront ULA response, unit norm:
///   a_m = exp(-j 2 pi (d / lambda) m sin(phi)) / sqrt(M),  m = 0..M-1.
inline ComplexVector far_steering_vector(const ArrayConfig& cfg, double angle) {
  check_angle(angle);
  const auto m_count = static_cast<Eigen::Index>(cfg.num_antennas);
  const double scale = 1.0 / std::sqrt(static_cast<double>(m_count));
  const double step = -2.0 * std::numbers::pi * (cfg.spacing / cfg.wavelength) *
                      std::sin(angle);
  ComplexVector a(m_count);
  for (Eigen::Index m = 0; m < m_count; ++m) {
    a[m] = std::polar(scale, step * static_cast<double>(m));
  }
  return a;
}

/// Distance from a scatterer at (r, phi), measured from the array center,
/// to antenna m (1-based):  sqrt(r^2 + delta^2 d^2 - 2 r delta d sin(phi))
/// with delta = (2m - M - 1) / 2.
inline double near_element_distance(const ArrayConfig& cfg, double distance,
                                    double angle, std::size_t antenna) {
  require(distance > 0.0 && std::isfinite(distance),
          "near-field distance must be positive");
  require(antenna >= 1 && antenna <= cfg.num_antennas,
          "antenna index must lie in 1..M");
  const double delta =
      (2.0 * static_cast<double>(antenna) -
       static_cast<double>(cfg.num_antennas) - 1.0) / 2.0;
  const double offset = delta * cfg.spacing;
  return std::sqrt(distance * distance + offset * offset -
                   2.0 * distance * offset * std::sin(angle));
}

/// Spherical-wavefront response, unit norm:
///   a = exp(-j (2 pi / lambda) (r_m - r)) / sqrt(M).
///
/// Element i of the returned vector is antenna m = M - i. With this order
/// the vector tends to far_steering_vector(angle) (up to a global phase) as
/// the distance grows; in the 1..M order it would tend to the mirror angle.
/// r_m - r is evaluated as (r_m^2 - r^2) / (r_m + r) to avoid cancellation
/// at large distances.
inline ComplexVector near_steering_vector(const ArrayConfig& cfg, double angle,
                                          double distance) {
  check_angle(angle);
  require(distance > 0.0 && std::isfinite(distance),
          "near-field distance must be positive");
  const auto m_count = static_cast<Eigen::Index>(cfg.num_antennas);
  const double scale = 1.0 / std::sqrt(static_cast<double>(m_count));
  const double k = 2.0 * std::numbers::pi / cfg.wavelength;
  const double sin_angle = std::sin(angle);
  ComplexVector a(m_count);
  for (Eigen::Index i = 0; i < m_count; ++i) {
    const auto m = static_cast<std::size_t>(m_count - i);
    const double r_m = near_element_distance(cfg, distance, angle, m);
    const double offset =
        (2.0 * static_cast<double>(m) - static_cast<double>(m_count) - 1.0) / 2.0 *
        cfg.spacing;
    const double excess =
        offset * (offset - 2.0 * distance * sin_angle) / (r_m + distance);
    a[i] = std::polar(scale, -k * excess);
  }
  return a;
}

/// M x L steering matrix sqrt(M/L) [far columns | near columns].
inline ComplexMatrix build_steering_matrix(const ArrayConfig& cfg,
                                           const PathSet& paths) {
  const std::size_t l_total = paths.size();
  require(l_total >= 1, "steering matrix needs at least one path");
  const auto m_count = static_cast<Eigen::Index>(cfg.num_antennas);
  const double scale = std::sqrt(static_cast<double>(cfg.num_antennas) /
                                 static_cast<double>(l_total));
  ComplexMatrix a(m_count, static_cast<Eigen::Index>(l_total));
  Eigen::Index col = 0;
  for (double angle : paths.far_angles) {
    a.col(col++) = scale * far_steering_vector(cfg, angle);
  }
  for (const NearPath& p : paths.near_paths) {
    a.col(col++) = scale * near_steering_vector(cfg, p.angle, p.distance);
  }
  return a;
}

/// Path count that is either fixed (lo == hi) or uniform on [lo, hi].
struct PathCount {
  int lo = 0;
  int hi = 0;

  static PathCount fixed(int n) { return {n, n}; }
  static PathCount uniform(int lo, int hi) { return {lo, hi}; }
  bool is_fixed() const { return lo == hi; }

  std::string to_string() const {
    return is_fixed() ? std::to_string(lo)
                      : "u" + std::to_string(lo) + "-" + std::to_string(hi);
  }

  /// Accepts "7" or "u0-10".
  static PathCount parse(const std::string& text) {
    try {
      if (!text.empty() && text[0] == 'u') {
        const auto dash = text.find('-', 1);
        if (dash == std::string::npos) throw InvalidArgument("");
        std::size_t used_lo = 0, used_hi = 0;
        const std::string lo_s = text.substr(1, dash - 1);
        const std::string hi_s = text.substr(dash + 1);
        const int lo = std::stoi(lo_s, &used_lo);
        const int hi = std::stoi(hi_s, &used_hi);
        if (used_lo != lo_s.size() || used_hi != hi_s.size() || lo < 0 || hi < lo)
          throw InvalidArgument("");
        return uniform(lo, hi);
      }
      std::size_t used = 0;
      const int n = std::stoi(text, &used);
      if (used != text.size() || n < 0) throw InvalidArgument("");
      return fixed(n);
    } catch (const std::exception&) {
      throw InvalidArgument("invalid path count '" + text +
                            "' (expected N or uLO-HI)");
    }
  }
};

/// Distributions for drawing one channel realization.
struct ScenarioSpec {
  std::string name = "hybrid";
  PathCount far = PathCount::uniform(0, 10);
  PathCount near = PathCount::uniform(0, 10);
  double angle_min = -std::numbers::pi / 2.0;
  double angle_max = std::numbers::pi / 2.0;
  double distance_min = 10.0;
  double distance_max = 80.0;
  double gain_variance = 1.0;

  static ScenarioSpec hybrid(PathCount far = PathCount::uniform(0, 10),
                             PathCount near = PathCount::uniform(0, 10)) {
    ScenarioSpec s;
    s.name = "hybrid";
    s.far = far;
    s.near = near;
    return s;
  }
  static ScenarioSpec far_only(PathCount far) {
    ScenarioSpec s;
    s.name = "far";
    s.far = far;
    s.near = PathCount::fixed(0);
    return s;
  }
  static ScenarioSpec near_only(PathCount near) {
    ScenarioSpec s;
    s.name = "near";
    s.far = PathCount::fixed(0);
    s.near = near;
    return s;
  }

  void validate() const {
    require(far.lo >= 0 && far.hi >= far.lo, "scenario: invalid far path range");
    require(near.lo >= 0 && near.hi >= near.lo,
            "scenario: invalid near path range");
    require(far.hi + near.hi >= 1, "scenario: can never draw a path");
    require(angle_min >= -std::numbers::pi / 2.0 &&
                angle_max <= std::numbers::pi / 2.0 && angle_min <= angle_max,
            "scenario: angle range must lie in [-pi/2, pi/2]");
    require(distance_min >= 0.0 && distance_max > distance_min,
            "scenario: invalid distance range");
    require(gain_variance > 0.0, "scenario: gain variance must be positive");
  }
};

struct ChannelRealization {
  ComplexVector h;
  PathSet paths;
  ComplexVector gains;
  std::uint64_t seed = 0;
};

/// Draws one realization h = A g. Draws with no paths at all are redrawn.
inline ChannelRealization sample_channel(const ArrayConfig& cfg,
                                         const ScenarioSpec& scenario,
                                         std::uint64_t seed) {
  cfg.validate();
  scenario.validate();
  Rng rng(seed);
  ChannelRealization out;
  out.seed = seed;
  std::int64_t l_far = 0;
  std::int64_t l_near = 0;
  do {
    l_far = rng.uniform_int(scenario.far.lo, scenario.far.hi);
    l_near = rng.uniform_int(scenario.near.lo, scenario.near.hi);
  } while (l_far + l_near == 0);

  PathSet& paths = out.paths;
  paths.gain_variance = scenario.gain_variance;
  for (std::int64_t l = 0; l < l_far; ++l) {
    paths.far_angles.push_back(rng.uniform(scenario.angle_min, scenario.angle_max));
  }
  for (std::int64_t l = 0; l < l_near; ++l) {
    NearPath p;
    p.angle = rng.uniform(scenario.angle_min, scenario.angle_max);
    p.distance = rng.uniform_open(scenario.distance_min, scenario.distance_max);
    paths.near_paths.push_back(p);
  }
  const auto l_total = static_cast<Eigen::Index>(paths.size());
  out.gains.resize(l_total);
  for (Eigen::Index l = 0; l < l_total; ++l) {
    out.gains[l] = rng.complex_normal(scenario.gain_variance);
  }
  out.h = build_steering_matrix(cfg, paths) * out.gains;
  return out;
}

}  // namespace nfce
