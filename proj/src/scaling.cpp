#include "ftlab/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "ftlab/errors.hpp"
#include "ftlab/rng.hpp"

namespace ftlab {

void ScalingRunConfig::validate() const {
  if (fractions.empty()) throw ValidationError("fractions", "must be nonempty");
  if (seeds.empty()) throw ValidationError("seeds", "must be nonempty");
  if (steps < 1) throw ValidationError("steps", "must be >= 1");
  if (eval_tasks.empty()) throw ValidationError("eval_tasks", "must be nonempty");
  if (eval_tasks.size() != eval_sets.size()) {
    throw ValidationError("eval_sets", "must pair up with eval_tasks");
  }
  for (const auto& t : eval_tasks) {
    if (t.metric == MetricKind::kRmse) {
      throw ValidationError("eval_tasks",
                            "error rate E is defined over F1 tasks only");
    }
  }
}

std::vector<ScalingPoint> run_fractions(const Dataset& base,
                                        const ScalingRunConfig& cfg) {
  cfg.validate();
  std::vector<ScalingPoint> points;
  for (double fraction : cfg.fractions) {
    ScalingPoint pt;
    pt.fraction = fraction;
    double loss_acc = 0.0;
    int survivors = 0;
    for (std::uint64_t seed : cfg.seeds) {
      const Dataset sub = subsample(base, fraction, derive_seed(seed, 0x66726163ULL));
      pt.d = static_cast<double>(sub.size());
      pt.tokens = sub.token_count();

      ModelConfig mc = cfg.model;
      mc.seed = derive_seed(cfg.model.seed, seed);
      PolicyParams params = PolicyParams::init(mc);

      TrainConfig tc = cfg.train;
      tc.seed = derive_seed(seed, 0x7363616cULL);
      TrainStage stage;
      stage.kind = StageKind::kSft;
      stage.data = &sub;
      stage.steps = cfg.steps;
      tc.curriculum = {stage};

      try {
        const TrainReport rep = train(params, tc);
        loss_acc += rep.stages.back().losses.back();
      } catch (const TrainError&) {
        continue;  // diverged run: excluded and reported via per_seed_error size
      }
      ++survivors;

      const MetricReport mr = evaluate(params, cfg.eval_tasks, cfg.eval_sets,
                                       cfg.eval_sampler, "scaling");
      double f1_sum = 0.0;
      for (const auto& row : mr.rows) f1_sum += row.value;
      pt.per_seed_error.push_back(1.0 -
                                  f1_sum / static_cast<double>(mr.rows.size()));
    }
    if (survivors == 0) {
      throw TrainError("run_fractions: every run diverged at fraction " +
                           std::to_string(fraction),
                       -1, -1);
    }
    double e_acc = 0.0;
    for (double e : pt.per_seed_error) e_acc += e;
    pt.error_rate = e_acc / static_cast<double>(survivors);
    pt.final_loss = loss_acc / static_cast<double>(survivors);
    points.push_back(std::move(pt));
  }
  return points;
}

ScalingFit fit_power_law(const std::vector<ScalingPoint>& points) {
  std::vector<double> xs, ys;
  ScalingFit fit;
  for (const auto& p : points) {
    if (p.d <= 0.0) throw ShapeError("fit_power_law: d must be positive");
    if (p.error_rate < 0.0) throw ShapeError("fit_power_law: E must be nonnegative");
    if (p.error_rate == 0.0) {
      ++fit.points_dropped;  // log undefined; dropped with a warning in the report
      continue;
    }
    xs.push_back(std::log(p.d));
    ys.push_back(std::log(p.error_rate));
  }
  const int n = static_cast<int>(xs.size());
  if (n < 3) {
    throw ShapeError("fit_power_law: need at least 3 points with E > 0, have " +
                     std::to_string(n));
  }

  double xm = 0.0, ym = 0.0;
  for (int i = 0; i < n; ++i) {
    xm += xs[i];
    ym += ys[i];
  }
  xm /= n;
  ym /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (int i = 0; i < n; ++i) {
    sxx += (xs[i] - xm) * (xs[i] - xm);
    sxy += (xs[i] - xm) * (ys[i] - ym);
    syy += (ys[i] - ym) * (ys[i] - ym);
  }
  if (sxx == 0.0) throw ShapeError("fit_power_law: all d identical");

  const double slope = sxy / sxx;
  fit.alpha = -slope;
  fit.intercept = ym - slope * xm;
  double rss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = ys[i] - (slope * xs[i] + fit.intercept);
    rss += r * r;
  }
  fit.r_squared = syy == 0.0 ? 1.0 : 1.0 - rss / syy;
  fit.alpha_stderr = n > 2 ? std::sqrt(rss / (n - 2) / sxx) : 0.0;
  fit.points_used = n;
  return fit;
}

double derive_cross_domain_exponent(double lp, double ld, double ep) {
  if (lp <= 0.0 || ld <= 0.0 || ep <= 0.0) {
    throw ShapeError("derive_cross_domain_exponent: inputs must be positive");
  }
  if (ep == lp) return ld;  // ratio 1: exact by definition
  return ep * ld / lp;
}

UniversalityReport compare_to_universality(const ScalingFit& fit, double derived) {
  UniversalityReport rep;
  rep.fitted_alpha = fit.alpha;
  rep.derived = derived;
  rep.gap = std::abs(fit.alpha - derived);
  rep.within_two_stderr = rep.gap <= 2.0 * fit.alpha_stderr;
  return rep;
}

void save_scaling_csv(const std::vector<ScalingPoint>& points, const ScalingFit& fit,
                      const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open scaling csv for writing: " + path);
  std::size_t max_seeds = 0;
  for (const auto& p : points) max_seeds = std::max(max_seeds, p.per_seed_error.size());
  os << "fraction,d,tokens";
  for (std::size_t s = 0; s < max_seeds; ++s) os << ",E_seed" << s;
  os << ",mean_E,final_loss\n";
  char buf[64];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.10g", p.fraction);
    os << buf << "," << p.d << "," << p.tokens;
    for (std::size_t s = 0; s < max_seeds; ++s) {
      if (s < p.per_seed_error.size()) {
        std::snprintf(buf, sizeof buf, "%.10g", p.per_seed_error[s]);
        os << "," << buf;
      } else {
        os << ",";
      }
    }
    std::snprintf(buf, sizeof buf, "%.10g", p.error_rate);
    os << "," << buf;
    std::snprintf(buf, sizeof buf, "%.10g", p.final_loss);
    os << "," << buf << "\n";
  }
  os << "# alpha,";
  std::snprintf(buf, sizeof buf, "%.10g", fit.alpha);
  os << buf << ",stderr,";
  std::snprintf(buf, sizeof buf, "%.10g", fit.alpha_stderr);
  os << buf << ",r2,";
  std::snprintf(buf, sizeof buf, "%.10g", fit.r_squared);
  os << buf << "\n";
  if (!os) throw IoError("short write on scaling csv: " + path);
}

void save_scaling_svg(const std::vector<ScalingPoint>& points, const ScalingFit& fit,
                      double derived, const std::string& path) {
  if (points.empty()) throw ShapeError("save_scaling_svg: no points");
  const int width = 640, height = 440;
  const int ml = 70, mr = 30, mt = 40, mb = 60;

  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& p : points) {
    if (p.error_rate <= 0.0) continue;
    xmin = std::min(xmin, std::log10(p.d));
    xmax = std::max(xmax, std::log10(p.d));
    ymin = std::min(ymin, std::log10(p.error_rate));
    ymax = std::max(ymax, std::log10(p.error_rate));
  }
  if (xmin > xmax) throw ShapeError("save_scaling_svg: no positive-E points");
  const double xpad = std::max(0.05, (xmax - xmin) * 0.1);
  const double ypad = std::max(0.05, (ymax - ymin) * 0.1);
  xmin -= xpad;
  xmax += xpad;
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double lx) {
    return ml + (lx - xmin) / (xmax - xmin) * (width - ml - mr);
  };
  auto py = [&](double ly) {
    return height - mb - (ly - ymin) / (ymax - ymin) * (height - mt - mb);
  };

  std::ofstream os(path);
  if (!os) throw IoError("cannot open svg for writing: " + path);
  char buf[512];
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
     << "\" height=\"" << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n",
                ml, height - mb, width - mr, height - mb);
  os << buf;
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n",
                ml, mt, ml, height - mb);
  os << buf;

  // fitted line ln E = -alpha ln d + C, drawn across the x range
  const double lnx0 = xmin * std::log(10.0), lnx1 = xmax * std::log(10.0);
  const double lny0 = -fit.alpha * lnx0 + fit.intercept;
  const double lny1 = -fit.alpha * lnx1 + fit.intercept;
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                "stroke=\"#c44\" stroke-width=\"1.5\"/>\n",
                px(xmin), py(lny0 / std::log(10.0)), px(xmax),
                py(lny1 / std::log(10.0)));
  os << buf;

  for (const auto& p : points) {
    if (p.error_rate <= 0.0) continue;
    std::snprintf(buf, sizeof buf,
                  "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"4\" fill=\"#246\"/>\n",
                  px(std::log10(p.d)), py(std::log10(p.error_rate)));
    os << buf;
  }

  std::snprintf(buf, sizeof buf,
                "<text x=\"%d\" y=\"%d\" font-size=\"14\">alpha = %.4f (stderr %.4f), "
                "r^2 = %.3f, derived = %.5f</text>\n",
                ml, mt - 12, fit.alpha, fit.alpha_stderr, fit.r_squared, derived);
  os << buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"%d\" y=\"%d\" font-size=\"13\">log10 d (training "
                "samples)</text>\n",
                width / 2 - 70, height - 18);
  os << buf;
  std::snprintf(
      buf, sizeof buf,
      "<text x=\"18\" y=\"%d\" font-size=\"13\" transform=\"rotate(-90 18 %d)\">"
      "log10 E (error rate)</text>\n",
      height / 2 + 50, height / 2 + 50);
  os << buf;
  os << "</svg>\n";
  if (!os) throw IoError("short write on svg: " + path);
}

}  // namespace ftlab
