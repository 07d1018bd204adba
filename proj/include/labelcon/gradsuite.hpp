// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "labelcon/gradcheck.hpp"
#include "labelcon/loss.hpp"
#include "labelcon/model.hpp"

namespace labelcon {

// Deliberate gradient corruption, for checking that the checker notices.
enum class GradBug { none, contrastive_sign, head_bias };

struct GradSuiteOptions {
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-5;
  SimilarityKernel kernel;
  GradBug bug = GradBug::none;
};

struct GradSuiteEntry {
  std::string name;
  GradCheckReport report;
  bool passed = false;
};

struct GradSuiteResult {
  std::vector<GradSuiteEntry> entries;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Full-pipeline evaluator: flattened model parameters -> combined loss of
/// forward(inputs) against labels. Dropout must be disabled by the caller.
LossEvaluator pipeline_evaluator(const ModelParams& params, const Matrix& inputs, const Matrix& labels, double alpha,
                                 const ContrastiveOptions& contrastive);

/// Checks BCE, the contrastive loss and the body+head+combined-loss pipeline
/// against central differences on seeded small problems. Problems are drawn
/// so that no contrastive term sits on the clamp.
GradSuiteResult run_gradient_suite(const GradSuiteOptions& options);

}  // namespace labelcon
