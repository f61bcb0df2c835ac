#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "nfce/channel.hpp"
#include "nfce/error.hpp"
#include "nfce/observation.hpp"

namespace nfce {

/// Least squares under a unit pilot is the pilot-inverted observation itself.
inline ComplexVector ls_estimate(const Observation& obs) { return obs.x_noisy; }

/// Linear MMSE filter built from an empirical channel covariance.
struct MmseFilter {
  ComplexMatrix covariance;  // (1/N) sum h h^H, Hermitian PSD
  std::size_t sample_count = 0;

  Eigen::Index dim() const { return covariance.rows(); }

  /// Wiener matrix R (R + s I)^{-1}. R and (R + s I) commute, so it is
  /// obtained by a Cholesky solve of (R + s I) W = R rather than an inverse.
  ComplexMatrix wiener_matrix(double noise_var) const {
    require(noise_var >= 0.0, "noise variance must be non-negative");
    ComplexMatrix regularized = covariance;
    regularized.diagonal().array() += noise_var;
    Eigen::LLT<ComplexMatrix> llt(regularized);
    if (llt.info() != Eigen::Success) {
      throw NumericalError(
          "MMSE solve failed: R + noise_var*I is not positive definite");
    }
    ComplexMatrix w = llt.solve(covariance);
    // Hermitian by construction in exact arithmetic; W = W^H up to rounding.
    return w;
  }
};

/// Empirical covariance (1/N) sum h h^H. Blocks of channels are folded in
/// with a Hermitian rank update of the upper triangle, which is then
/// mirrored, so the result is exactly Hermitian.
inline MmseFilter fit_mmse(std::span<const ComplexVector> calibration) {
  if (calibration.empty()) {
    throw InvalidArgument("fit_mmse: empty calibration set");
  }
  const Eigen::Index m = calibration.front().size();
  constexpr std::size_t kBlock = 256;
  ComplexMatrix r = ComplexMatrix::Zero(m, m);
  ComplexMatrix block(m, static_cast<Eigen::Index>(kBlock));
  for (std::size_t start = 0; start < calibration.size(); start += kBlock) {
    const std::size_t n = std::min(kBlock, calibration.size() - start);
    for (std::size_t k = 0; k < n; ++k) {
      const ComplexVector& h = calibration[start + k];
      require(h.size() == m, "fit_mmse: inconsistent channel lengths");
      block.col(static_cast<Eigen::Index>(k)) = h;
    }
    r.selfadjointView<Eigen::Upper>().rankUpdate(block.leftCols(static_cast<Eigen::Index>(n)));
  }
  const double inv_n = 1.0 / static_cast<double>(calibration.size());
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      r(i, j) *= inv_n;
      r(j, i) = std::conj(r(i, j));
    }
    r(j, j) = Complex(r(j, j).real() * inv_n, 0.0);
  }
  return MmseFilter{std::move(r), calibration.size()};
}

inline MmseFilter fit_mmse(std::span<const ChannelRealization> calibration) {
  std::vector<ComplexVector> hs;
  hs.reserve(calibration.size());
  for (const auto& c : calibration) hs.push_back(c.h);
  return fit_mmse(std::span<const ComplexVector>(hs));
}

/// R (R + s I)^{-1} x via a Cholesky solve.
inline ComplexVector mmse_estimate(const MmseFilter& filter,
                                   const Observation& obs) {
  require(filter.dim() == obs.x_noisy.size(),
          "mmse_estimate: filter and observation dimensions differ");
  ComplexMatrix regularized = filter.covariance;
  regularized.diagonal().array() += obs.noise_var;
  Eigen::LLT<ComplexMatrix> llt(regularized);
  if (llt.info() != Eigen::Success) {
    throw NumericalError(
        "MMSE solve failed: R + noise_var*I is not positive definite");
  }
  return filter.covariance * llt.solve(obs.x_noisy);
}

}  // namespace nfce
