#pragma once

#include <span>

#include "nfce/channel.hpp"
#include "nfce/error.hpp"

namespace nfce {

/// Aggregate NMSE as a ratio of sums: sum_i |h_i - est_i|^2 / sum_i |h_i|^2.
inline double nmse(std::span<const ComplexVector> truth,
                   std::span<const ComplexVector> estimate) {
  require(truth.size() == estimate.size(), "nmse: sample counts differ");
  double err = 0.0, energy = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(truth[i].size() == estimate[i].size(), "nmse: vector lengths differ");
    err += (truth[i] - estimate[i]).squaredNorm();
    energy += truth[i].squaredNorm();
  }
  if (!(energy > 0.0)) throw InvalidArgument("nmse: reference channels have zero energy");
  return err / energy;
}

}  // namespace nfce
