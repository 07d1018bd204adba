// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <limits>
#include <span>
#include <string>

#include "labelcon/matrix.hpp"

namespace labelcon {

/// Pairwise similarity f(x, y) used inside the contrastive loss.
///
/// raw_cosine is plain cosine similarity. Its value can be <= 0, which makes
/// log(sigma * f / delta) undefined, so the log argument is clamped below at
/// `epsilon`. exp_cosine uses exp(cos / temperature), which is strictly
/// positive and never hits the clamp.
struct SimilarityKernel {
  enum class Kind { raw_cosine, exp_cosine };

  Kind kind = Kind::raw_cosine;
  double temperature = 1.0;
  double epsilon = 1e-6;

  void validate() const;
};

std::string to_string(SimilarityKernel::Kind kind);
SimilarityKernel::Kind parse_kernel_kind(const std::string& text);

inline constexpr double kBceProbClamp = 1e-7;

struct LossBreakdown {
  double total = 0.0;
  double bce = 0.0;
  double contrastive = 0.0;
  double alpha = 0.0;
};

struct BceResult {
  double value = 0.0;
  Matrix grad;  // d value / d probs
};

struct ContrastiveOptions {
  SimilarityKernel kernel;
  // Divide gamma by |C| like sigma. Off by default: gamma is the raw Hamming
  // distance.
  bool normalize_gamma = false;
};

struct ContrastiveResult {
  double value = 0.0;
  Matrix grad;  // d value / d embeddings
  // Set when no class has two or more positives in the batch; value and
  // gradient are then exactly zero.
  bool no_active_class = false;
  std::size_t active_classes = 0;
  // Number of (class, i, j) terms whose log argument hit the epsilon clamp.
  std::size_t clamped_terms = 0;
  // Distance of the batch from the clamp's discontinuities: the smallest
  // |ln(ratio / eps)| over positive ratios, and the largest |ratio| (which
  // blows up as delta crosses zero).
  double min_eps_gap = std::numeric_limits<double>::infinity();
  double max_abs_ratio = 0.0;
};

struct CombinedResult {
  LossBreakdown breakdown;
  Matrix grad_probs;
  Matrix grad_embeddings;
  bool no_active_class = false;
  std::size_t clamped_terms = 0;
};

/// dot(a, b) / (|a| |b|). Throws DegenerateInputError on a zero-norm input.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Mean binary cross-entropy over all B x |C| entries. Probabilities are
/// clamped into [1e-7, 1 - 1e-7] before the log; the gradient is zero where
/// the clamp is active.
BceResult bce_loss(const Matrix& probs, const Matrix& labels);

/// Label-aware contrastive loss.
///
/// For every class c with positives P(c) and negatives N(c) in the batch, and
/// every ordered pair (i, j), i != j, of positives:
///
///   s_ij     = sigma_ij * f(x_i, x_j),        sigma_ij = 1 - d(y_i, y_j) / |C|
///   delta_ij = (s_ij + sum_{k in N(c)} gamma_ik * f(x_i, x_k)) / (|N(c)| + 1)
///   term     = log(max(s_ij / delta_ij, epsilon))
///
/// The class contributes -mean(term) over its ordered pairs; the result is the
/// sum over classes divided by |C|. Classes with fewer than two positives
/// contribute zero but still count in |C|. Requires B >= 2.
ContrastiveResult contrastive_loss(const Matrix& embeddings, const Matrix& labels,
                                   const ContrastiveOptions& options = {});

/// bce + alpha * contrastive, with both gradients.
CombinedResult combined_loss(const Matrix& probs, const Matrix& labels, const Matrix& embeddings,
                             double alpha, const ContrastiveOptions& options = {});

}  // namespace labelcon
