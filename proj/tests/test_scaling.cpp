#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "ftlab/errors.hpp"
#include "ftlab/rng.hpp"
#include "ftlab/scaling.hpp"

using namespace ftlab;

namespace {

std::vector<ScalingPoint> planted_points(double alpha, double c,
                                         const std::vector<double>& ds) {
  std::vector<ScalingPoint> pts;
  for (double d : ds) {
    ScalingPoint p;
    p.d = d;
    p.error_rate = c * std::pow(d / 1000.0, -alpha);
    pts.push_back(p);
  }
  return pts;
}

}  // namespace

TEST_CASE("exact planted power law is recovered to 1e-10") {
  const auto pts = planted_points(0.28, 0.5, {1000, 2000, 4000, 8000});
  const ScalingFit fit = fit_power_law(pts);
  CHECK(std::abs(fit.alpha - 0.28) < 1e-10);
  CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(fit.points_used == 4);
  CHECK(fit.points_dropped == 0);
}

TEST_CASE("flat error rates give alpha near zero") {
  std::vector<ScalingPoint> pts;
  for (double d : {100.0, 200.0, 400.0}) {
    ScalingPoint p;
    p.d = d;
    p.error_rate = 0.3;
    pts.push_back(p);
  }
  const ScalingFit fit = fit_power_law(pts);
  CHECK(std::abs(fit.alpha) < 1e-12);
}

TEST_CASE("fit is invariant to rescaling every d by a constant") {
  const auto pts = planted_points(0.35, 0.8, {500, 1000, 2000, 4000, 8000});
  auto scaled = pts;
  for (auto& p : scaled) p.d *= 7.5;
  const ScalingFit a = fit_power_law(pts);
  const ScalingFit b = fit_power_law(scaled);
  CHECK(std::abs(a.alpha - b.alpha) < 1e-12);
  CHECK(a.intercept != b.intercept);  // only C shifts
}

TEST_CASE("zero-error points are dropped; fewer than 3 survivors rejected") {
  auto pts = planted_points(0.3, 0.5, {1000, 2000, 4000, 8000});
  pts[1].error_rate = 0.0;
  const ScalingFit fit = fit_power_law(pts);
  CHECK(fit.points_dropped == 1);
  CHECK(fit.points_used == 3);

  pts[2].error_rate = 0.0;
  CHECK_THROWS_AS(fit_power_law(pts), ShapeError);
}

TEST_CASE("noisy planted exponents are recovered within 2 stderr >= 90/100") {
  Rng rng(7);
  const double alpha = 0.35;
  int hits = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ScalingPoint> pts;
    double d = 500.0;
    for (int i = 0; i < 8; ++i, d *= 2.0) {
      ScalingPoint p;
      p.d = d;
      p.error_rate = 0.8 * std::pow(d / 1000.0, -alpha) * std::exp(rng.normal(0, 0.05));
      pts.push_back(p);
    }
    const ScalingFit fit = fit_power_law(pts);
    if (std::abs(fit.alpha - alpha) <= 2.0 * fit.alpha_stderr) ++hits;
  }
  CHECK(hits >= 90);
}

TEST_CASE("cross-domain exponent derivation is exact on the quoted inputs") {
  CHECK(derive_cross_domain_exponent(0.076, 0.095, 0.195) == 0.24375);
  // ratio-1 case returns ld exactly; doubling ld doubles the result
  CHECK(derive_cross_domain_exponent(0.2, 0.095, 0.2) == 0.095);
  CHECK(derive_cross_domain_exponent(0.076, 0.19, 0.195) ==
        2.0 * derive_cross_domain_exponent(0.076, 0.095, 0.195));
  CHECK_THROWS_AS(derive_cross_domain_exponent(0.0, 0.1, 0.1), ShapeError);
  CHECK_THROWS_AS(derive_cross_domain_exponent(0.1, -0.1, 0.1), ShapeError);
}

TEST_CASE("universality comparison reports the gap") {
  ScalingFit fit;
  fit.alpha = 0.28;
  fit.alpha_stderr = 0.03;
  const double derived = derive_cross_domain_exponent(0.076, 0.095, 0.195);
  const UniversalityReport rep = compare_to_universality(fit, derived);
  CHECK(rep.gap == doctest::Approx(0.03625).epsilon(1e-12));
  CHECK(rep.within_two_stderr);  // 0.03625 <= 0.06

  fit.alpha_stderr = 0.01;
  CHECK_FALSE(compare_to_universality(fit, derived).within_two_stderr);

  fit.alpha = derived;
  CHECK(compare_to_universality(fit, derived).gap == 0.0);
}

TEST_CASE("scaling csv and svg are written") {
  const auto pts = planted_points(0.28, 0.5, {1000, 2000, 4000, 8000});
  const ScalingFit fit = fit_power_law(pts);
  const auto dir = std::filesystem::temp_directory_path();
  const auto csv = dir / "ftlab_scaling_test.csv";
  const auto svg = dir / "ftlab_scaling_test.svg";
  save_scaling_csv(pts, fit, csv.string());
  save_scaling_svg(pts, fit, 0.24375, svg.string());
  CHECK(std::filesystem::file_size(csv) > 0);
  CHECK(std::filesystem::file_size(svg) > 0);
  std::filesystem::remove(csv);
  std::filesystem::remove(svg);
}

TEST_CASE("run_fractions wires subsampling, training and evaluation together") {
  // Tiny end-to-end smoke: 2 fractions x 1 seed on a fast classification task.
  const TaskSpec cls = make_task(TaskKind::kClassification, 3);
  const Dataset base = sample_dataset(cls, 96, "train", 5);
  const Dataset eval_set = sample_dataset(cls, 48, "eval", 6);

  ScalingRunConfig cfg;
  cfg.fractions = {1.0, 0.25};
  cfg.seeds = {1};
  cfg.model.vocab_size = kTaskVocabSize;
  cfg.model.context_len = 64;
  cfg.model.d_model = 16;
  cfg.model.n_heads = 2;
  cfg.model.n_layers = 1;
  cfg.model.seed = 9;
  cfg.train.learning_rate = 2e-3;
  cfg.train.batch_size = 16;
  cfg.steps = 60;
  cfg.eval_tasks = {cls};
  cfg.eval_sets = {eval_set};
  cfg.eval_sampler.max_new_tokens = 4;

  const auto points = run_fractions(base, cfg);
  REQUIRE(points.size() == 2);
  CHECK(points[0].d == 96.0);
  CHECK(points[1].d == 24.0);
  CHECK(points[0].per_seed_error.size() == 1);
  for (const auto& p : points) {
    CHECK(p.error_rate >= 0.0);
    CHECK(p.error_rate <= 1.0);
    CHECK(p.tokens > 0);
  }

  ScalingRunConfig bad = cfg;
  bad.eval_tasks = {make_task(TaskKind::kRegression, 1)};
  bad.eval_sets = {eval_set};
  CHECK_THROWS_AS(run_fractions(base, bad), ValidationError);
}
