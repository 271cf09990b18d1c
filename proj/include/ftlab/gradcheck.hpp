#pragma once

#include <functional>
#include <vector>

#include "ftlab/matrix.hpp"

namespace ftlab {

/// Result of a finite-difference gradient check.
struct GradCheckReport {
  double max_rel_err = 0.0;
  int checked = 0;
  int skipped = 0;  // coordinates where both gradients were below 1e-12
};

/// Central-difference check of `analytic` against `loss` over a sampled subset
/// of at least `max_coords` coordinates (all of them when fewer exist).
/// `params` are perturbed in place and restored; `analytic[i]` must be
/// congruent to `*params[i]`. Throws ShapeError if h <= 0.
GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  const std::vector<Matrix*>& params,
                                  const std::vector<const Matrix*>& analytic,
                                  double h, int max_coords, std::uint64_t seed);

}  // namespace ftlab
