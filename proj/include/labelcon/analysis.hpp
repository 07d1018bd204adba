// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "labelcon/data.hpp"
#include "labelcon/loss.hpp"
#include "labelcon/model.hpp"

namespace labelcon {

struct PredictionSet {
  std::vector<std::size_t> rows;  // dataset rows, in order
  Matrix probs;
  Matrix bits;  // 1 iff prob >= threshold
  double threshold = 0.5;
};

PredictionSet threshold_predictions(Matrix probs, double threshold);

/// Eval-mode forward over the given dataset rows.
PredictionSet predict(const ModelParams& params, const Dataset& dataset, std::span<const std::size_t> rows,
                      double threshold = 0.5);

/// Body output (the representation the contrastive loss shapes) for rows.
Matrix embed(const ModelParams& params, const Dataset& dataset, std::span<const std::size_t> rows);

struct F1Scores {
  double micro = 0.0;
  double macro = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::vector<double> per_class;
};

/// Micro-F1 pools TP/FP/FN over every (sample, class) cell; macro-F1 averages
/// per-class F1. A class with no gold and no predicted positives scores 0
/// unless `skip_empty`, in which case it is left out of the average.
F1Scores f1_scores(const Matrix& predictions, const Matrix& gold, bool skip_empty = false);

struct PairRecord {
  std::size_t i = 0;
  std::size_t j = 0;
  std::size_t distance = 0;
  double cosine = 0.0;
};

struct SimilarityReport {
  std::map<std::size_t, std::vector<double>> groups;  // Hamming distance -> cosines
  std::vector<PairRecord> pairs;                       // i < j, row-major order
  std::size_t n_pairs = 0;
  double beta = 0.0;       // OLS slope of cosine on distance
  double intercept = 0.0;
  double r_squared = 0.0;
  // Set when the fit is undefined (fewer than two pairs, or zero variance in
  // distance or similarity); beta and r_squared are then 0.
  bool degenerate = false;
};

/// All n(n-1)/2 pairwise cosine similarities grouped by label Hamming
/// distance, plus an ordinary least squares fit over the raw pairs.
SimilarityReport similarity_by_distance(const Matrix& embeddings, const Matrix& labels,
                                        std::span<const std::string> ids = {});

/// CSV with header pair_id,hamming_distance,cosine_similarity, one row per
/// pair, then a final row `summary,<beta>,<r_squared>`.
void export_report(const SimilarityReport& report, const std::filesystem::path& path);
std::string render_report_csv(const SimilarityReport& report);

struct ReportCsv {
  std::vector<std::pair<std::size_t, double>> rows;  // (distance, cosine)
  double beta = 0.0;
  double r_squared = 0.0;
};
ReportCsv read_report_csv(const std::filesystem::path& path);

struct ToyConfig {
  std::size_t num_points = 12;
  std::size_t label_dim = 3;
  std::size_t embed_dim = 2;
  std::size_t steps = 2000;
  double lr = 0.05;
  std::uint64_t seed = 0;
  // Raw cosine lets delta cross zero, where the loss is unbounded below and
  // plain gradient descent does not settle; the exponential kernel keeps
  // every term positive.
  ContrastiveOptions contrastive{{SimilarityKernel::Kind::exp_cosine, 1.0, 1e-6}, false};
};

struct GroupCosine {
  std::size_t group_a = 0;
  std::size_t group_b = 0;
  double before = 0.0;  // mean cross-group cosine
  double after = 0.0;
};

struct ToyReport {
  Matrix initial;
  Matrix final;
  std::vector<LabelVector> labels;
  std::vector<std::size_t> group_of;
  std::vector<std::string> group_names;
  std::vector<double> spread_before_deg;  // max pairwise angle per group
  std::vector<double> spread_after_deg;
  std::vector<GroupCosine> disjoint_pairs;  // groups whose labels share no bit
  std::vector<double> loss_history;         // loss before each step, plus final
  // Per point of the union group: true if its final direction lies strictly
  // between the two parent groups' mean directions.
  std::vector<bool> mixed_between;
  std::size_t decreasing_steps = 0;
};

/// Optimizes a handful of 2-D points directly under the contrastive loss by
/// full-batch gradient descent. Points come in four label groups: two pure
/// labels, their union, and a disjoint label.
ToyReport toy_experiment(const ToyConfig& config);

/// CSV of point_id,x0,y0,x1,y1,label_bits.
void export_toy(const ToyReport& report, const std::filesystem::path& path);
std::string render_toy_csv(const ToyReport& report);

double angle_degrees(std::span<const double> a, std::span<const double> b);

}  // namespace labelcon
