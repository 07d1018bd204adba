// SPDX-License-Identifier: Apache-2.0
#include "labelcon/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "labelcon/error.hpp"

namespace labelcon {

GradCheckReport finite_diff_check(const LossEvaluator& evaluator, std::span<const double> point,
                                  const GradCheckOptions& options) {
  const double h = options.step;
  if (!(h >= 1e-7 && h <= 1e-3)) {
    throw ArgumentError("finite_diff_check: step " + std::to_string(h) + " outside [1e-7, 1e-3]");
  }

  std::vector<double> analytic;
  const double first = evaluator(point, &analytic);
  const double second = evaluator(point, nullptr);
  if (first != second) {
    throw DeterminismError("finite_diff_check: evaluator returned different values for the same point");
  }
  if (analytic.size() != point.size()) {
    throw DimensionError("finite_diff_check: gradient has " + std::to_string(analytic.size()) +
                         " entries for a point of " + std::to_string(point.size()));
  }

  std::vector<std::size_t> coords(point.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (options.max_params > 0 && options.max_params < coords.size()) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_params);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckReport report;
  std::vector<double> probe(point.begin(), point.end());
  for (std::size_t k : coords) {
    const double saved = probe[k];
    probe[k] = saved + h;
    const double up = evaluator(probe, nullptr);
    probe[k] = saved - h;
    const double down = evaluator(probe, nullptr);
    probe[k] = saved;

    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[k];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    double rel = std::abs(a - numeric) / denom;
    if (std::isnan(rel)) rel = INFINITY;
    if (rel > report.max_rel_error || report.num_params_checked == 0) {
      report.max_rel_error = rel;
      report.worst_param_index = k;
      report.analytic_at_worst = a;
      report.numeric_at_worst = numeric;
    }
    ++report.num_params_checked;
  }
  return report;
}

}  // namespace labelcon
