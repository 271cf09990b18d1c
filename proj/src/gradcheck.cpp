#include "ftlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "ftlab/errors.hpp"
#include "ftlab/rng.hpp"

namespace ftlab {

GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  const std::vector<Matrix*>& params,
                                  const std::vector<const Matrix*>& analytic,
                                  double h, int max_coords, std::uint64_t seed) {
  if (h <= 0.0) throw ShapeError("finite_diff_check: h must be positive");
  if (params.size() != analytic.size()) {
    throw ShapeError("finite_diff_check: params/analytic count mismatch");
  }

  struct Coord {
    int tensor;
    std::size_t index;
  };
  std::vector<Coord> coords;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (!params[t]->same_shape(*analytic[t])) {
      throw ShapeError("finite_diff_check: gradient not congruent to parameter " +
                       std::to_string(t));
    }
    for (std::size_t i = 0; i < params[t]->size(); ++i)
      coords.push_back({static_cast<int>(t), i});
  }

  Rng rng(seed);
  rng.shuffle(coords);
  const std::size_t n = std::min<std::size_t>(coords.size(),
                                              static_cast<std::size_t>(max_coords));

  GradCheckReport report;
  for (std::size_t k = 0; k < n; ++k) {
    const auto [t, i] = coords[k];
    double& theta = params[t]->data[i];
    const double saved = theta;
    theta = saved + h;
    const double lp = loss();
    theta = saved - h;
    const double lm = loss();
    theta = saved;

    const double numeric = (lp - lm) / (2.0 * h);
    const double exact = analytic[t]->data[i];
    const double denom = std::max(std::abs(numeric), std::abs(exact));
    if (denom < 1e-12) {
      ++report.skipped;
      continue;
    }
    report.max_rel_err = std::max(report.max_rel_err, std::abs(numeric - exact) / denom);
    ++report.checked;
  }
  return report;
}

}  // namespace ftlab
