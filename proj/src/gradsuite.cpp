// SPDX-License-Identifier: Apache-2.0
#include "labelcon/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "labelcon/error.hpp"

namespace labelcon {

namespace {

constexpr int kMaxDraws = 200;

Matrix uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = d(rng);
  return m;
}

// Random labels in which class 0 has at least two positives and every row
// carries at least one label.
Matrix active_labels(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  Matrix y(rows, cols);
  for (auto& v : y.data()) v = coin(rng) ? 1.0 : 0.0;
  y(0, 0) = 1.0;
  y(1, 0) = 1.0;
  y(rows - 1, 0) = 0.0;
  return y;
}

bool well_conditioned(const ContrastiveResult& r) {
  return r.clamped_terms == 0 && r.min_eps_gap > 2.0 && r.max_abs_ratio < 1e3;
}

GradSuiteEntry finish(std::string name, const GradCheckReport& report, double tolerance) {
  return {std::move(name), report, report.max_rel_error <= tolerance};
}

}  // namespace

LossEvaluator pipeline_evaluator(const ModelParams& params, const Matrix& inputs, const Matrix& labels, double alpha,
                                 const ContrastiveOptions& contrastive) {
  if (params.head.dropout_rate != 0.0) throw ConfigError("pipeline_evaluator: dropout must be disabled");
  return [=](std::span<const double> point, std::vector<double>* grad) {
    ModelParams local = params;
    local.set_flat_values(point);
    auto fwd = forward(local, inputs, Mode::train);
    auto loss = combined_loss(fwd.probs, labels, fwd.embeddings, alpha, contrastive);
    if (grad) *grad = backward(local, fwd.cache, loss.grad_probs, loss.grad_embeddings).flat();
    return loss.breakdown.total;
  };
}

GradSuiteResult run_gradient_suite(const GradSuiteOptions& options) {
  options.kernel.validate();
  std::mt19937_64 rng(options.seed);
  const GradCheckOptions check{options.step, 0, options.seed};
  ContrastiveOptions copt;
  copt.kernel = options.kernel;
  GradSuiteResult out;

  {
    const auto y = active_labels(4, 14, rng);
    const auto p = uniform(4, 14, rng, 0.05, 0.95);
    LossEvaluator ev = [&](std::span<const double> point, std::vector<double>* grad) {
      Matrix probs(4, 14, std::vector<double>(point.begin(), point.end()));
      auto r = bce_loss(probs, y);
      if (grad) *grad = r.grad.data();
      return r.value;
    };
    out.entries.push_back(finish("bce", finite_diff_check(ev, p.data(), check), options.tolerance));
  }

  {
    const std::size_t b = 6, h = 4, c = 3;
    Matrix y, x;
    for (int draw = 0; draw < kMaxDraws; ++draw) {
      y = active_labels(b, c, rng);
      x = uniform(b, h, rng, -1.0, 1.0);
      if (well_conditioned(contrastive_loss(x, y, copt))) break;
    }
    LossEvaluator ev = [&](std::span<const double> point, std::vector<double>* grad) {
      Matrix e(b, h, std::vector<double>(point.begin(), point.end()));
      auto r = contrastive_loss(e, y, copt);
      if (grad) {
        *grad = r.grad.data();
        if (options.bug == GradBug::contrastive_sign) (*grad)[0] = -(*grad)[0];
      }
      return r.value;
    };
    out.entries.push_back(finish("contrastive", finite_diff_check(ev, x.data(), check), options.tolerance));
  }

  for (BodyKind kind : {BodyKind::affine, BodyKind::mlp}) {
    const std::size_t b = 6, e = 5, h = 4, c = 3;
    BodyConfig body{kind, e, h, {}, Activation::tanh};
    if (kind == BodyKind::mlp) body.hidden_dims = {6};
    HeadConfig head{h, 8, c, 0.0, Activation::relu};
    ModelParams params;
    Matrix x, y;
    for (int draw = 0; draw < kMaxDraws; ++draw) {
      params = init_model(body, head, rng());
      x = uniform(b, e, rng, -1.0, 1.0);
      y = active_labels(b, c, rng);
      if (well_conditioned(contrastive_loss(forward(params, x, Mode::eval).embeddings, y, copt))) break;
    }
    // A larger alpha than training uses, so the contrastive path is not
    // drowned out in the body gradient.
    auto ev = pipeline_evaluator(params, x, y, 0.5, copt);
    LossEvaluator wrapped = [&](std::span<const double> point, std::vector<double>* grad) {
      const double v = ev(point, grad);
      if (grad && options.bug == GradBug::head_bias) grad->back() += 1e-3;
      return v;
    };
    out.entries.push_back(finish("pipeline_" + to_string(kind), finite_diff_check(wrapped, params.flat_values(), check),
                                 options.tolerance));
  }

  out.passed = true;
  for (const auto& entry : out.entries) {
    out.max_rel_error = std::max(out.max_rel_error, entry.report.max_rel_error);
    out.passed = out.passed && entry.passed;
  }
  return out;
}

}  // namespace labelcon
