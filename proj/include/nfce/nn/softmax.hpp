#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace nfce::nn {

/// Max-subtracted softmax, in place. Finite input gives an output that sums
/// to one and preserves order.
template <typename T>
void softmax_inplace(std::span<T> row) {
  if (row.empty()) return;
  const T peak = *std::max_element(row.begin(), row.end());
  T total = T(0);
  for (T& v : row) {
    v = std::exp(v - peak);
    total += v;
  }
  const T inv = T(1) / total;
  for (T& v : row) v *= inv;
}

template <typename T>
std::vector<T> softmax_row(std::span<const T> x) {
  std::vector<T> out(x.begin(), x.end());
  softmax_inplace(std::span<T>(out));
  return out;
}

}  // namespace nfce::nn
