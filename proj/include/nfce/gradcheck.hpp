#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nfce/tensor.hpp"

namespace nfce {

/// A scalar function of named f64 tensors together with its analytic
/// gradient, prepared for a finite-difference comparison.
struct GradcheckProblem {
  std::string name;
  /// Tensors to perturb, in the same order as `gradients` returns them.
  std::vector<std::pair<std::string, Tensor<double>*>> inputs;
  std::function<double()> loss;
  std::function<std::vector<Tensor<double>>()> gradients;
  /// Optional fingerprint of piecewise-linear branch choices (e.g. ReLU
  /// masks). Coordinates whose +/- step changes it straddle a kink and are
  /// skipped.
  std::function<std::uint64_t()> pattern;
};

struct GradcheckGroup {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

struct GradcheckReport {
  std::string name;
  std::vector<GradcheckGroup> groups;
  double tolerance = 0.0;
  bool finite = true;
  bool passed = false;
  std::string message;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& g : groups) m = std::max(m, g.max_rel_error);
    return m;
  }
};

/// Central differences (f(x+h) - f(x-h)) / 2h for every input coordinate.
///
/// Per-element relative error is |analytic - numeric| / max(|analytic|,
/// |numeric|, 1e-3 * scale, 1e-12), where scale is the largest analytic
/// magnitude over all inputs. Entries far below that scale (including
/// gradients that vanish identically, such as a bias feeding a batch norm)
/// are judged against it instead of their own size.
inline GradcheckReport gradcheck(const GradcheckProblem& problem, double step,
                                 double tolerance,
                                 std::size_t max_coords_per_group = 0) {
  GradcheckReport report;
  report.name = problem.name;
  report.tolerance = tolerance;

  const double base = problem.loss();
  if (!std::isfinite(base)) {
    report.finite = false;
    report.message = "non-finite loss at the base point";
    return report;
  }
  const std::vector<Tensor<double>> analytic = problem.gradients();
  if (analytic.size() != problem.inputs.size()) {
    report.finite = false;
    report.message = "gradient count does not match input count";
    return report;
  }
  const std::optional<std::uint64_t> base_pattern =
      problem.pattern ? std::optional(problem.pattern()) : std::nullopt;

  double scale = 0.0;
  for (const auto& a : analytic) {
    for (double v : a.values()) {
      if (!std::isfinite(v)) report.finite = false;
      scale = std::max(scale, std::abs(v));
    }
  }

  for (std::size_t gi = 0; gi < problem.inputs.size(); ++gi) {
    auto& [name, tensor] = problem.inputs[gi];
    const Tensor<double>& a = analytic[gi];
    GradcheckGroup group;
    group.name = name;
    if (a.shape() != tensor->shape()) {
      report.finite = false;
      report.message = "gradient shape mismatch for " + name;
      return report;
    }
    const std::size_t n = tensor->size();
    const std::size_t stride =
        (max_coords_per_group == 0 || n <= max_coords_per_group)
            ? 1
            : (n + max_coords_per_group - 1) / max_coords_per_group;
    for (std::size_t i = 0; i < n; i += stride) {
      double& x = (*tensor)[i];
      const double saved = x;
      x = saved + step;
      const double f_plus = problem.loss();
      const bool kink_plus = base_pattern && problem.pattern() != *base_pattern;
      x = saved - step;
      const double f_minus = problem.loss();
      const bool kink_minus = base_pattern && problem.pattern() != *base_pattern;
      x = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        report.finite = false;
        continue;
      }
      if (kink_plus || kink_minus) {
        ++group.skipped;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double abs_err = std::abs(a[i] - numeric);
      const double denom = std::max({std::abs(a[i]), std::abs(numeric),
                                     1e-3 * scale, 1e-12});
      group.max_abs_error = std::max(group.max_abs_error, abs_err);
      group.max_rel_error = std::max(group.max_rel_error, abs_err / denom);
      ++group.checked;
    }
    report.groups.push_back(group);
  }
  if (!report.finite && report.message.empty()) {
    report.message = "non-finite values encountered";
  }
  report.passed = report.finite && report.max_rel_error() <= tolerance;
  return report;
}

}  // namespace nfce
