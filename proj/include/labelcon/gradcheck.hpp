// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace labelcon {

/// Evaluates a scalar loss at `point`. When `grad` is non-null the evaluator
/// also writes the analytic gradient (same length as `point`) into it.
using LossEvaluator = std::function<double(std::span<const double> point, std::vector<double>* grad)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param_index = 0;
  std::size_t num_params_checked = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

struct GradCheckOptions {
  double step = 1e-6;
  // 0 checks every coordinate; otherwise a seeded subset of this size.
  std::size_t max_params = 0;
  std::uint64_t seed = 0;
};

/// Compares the evaluator's analytic gradient against central differences
/// (L(x + h e_k) - L(x - h e_k)) / 2h. The relative error of coordinate k is
/// |a - n| / max(|a|, |n|, 1e-8).
///
/// Throws ArgumentError if the step lies outside [1e-7, 1e-3] and
/// DeterminismError if two evaluations at the same point disagree.
GradCheckReport finite_diff_check(const LossEvaluator& evaluator, std::span<const double> point,
                                  const GradCheckOptions& options = {});

}  // namespace labelcon
