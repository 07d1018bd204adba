// SPDX-License-Identifier: Apache-2.0
#include "labelcon/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "labelcon/parallel.hpp"

namespace labelcon {

PredictionSet threshold_predictions(Matrix probs, double threshold) {
  PredictionSet out;
  out.threshold = threshold;
  out.bits = Matrix(probs.rows(), probs.cols());
  for (std::size_t k = 0; k < probs.size(); ++k) out.bits.data()[k] = probs.data()[k] >= threshold ? 1.0 : 0.0;
  out.probs = std::move(probs);
  return out;
}

PredictionSet predict(const ModelParams& params, const Dataset& dataset, std::span<const std::size_t> rows,
                      double threshold) {
  if (dataset.embed_dim() != params.body.in_dim) {
    throw DimensionError("predict: dataset embed_dim " + std::to_string(dataset.embed_dim()) +
                         " does not match model input " + std::to_string(params.body.in_dim));
  }
  if (dataset.num_classes() != params.head.out_dim) {
    throw DimensionError("predict: dataset has " + std::to_string(dataset.num_classes()) +
                         " classes, model outputs " + std::to_string(params.head.out_dim));
  }
  auto fwd = forward(params, dataset.embeddings(rows), Mode::eval);
  auto out = threshold_predictions(std::move(fwd.probs), threshold);
  out.rows.assign(rows.begin(), rows.end());
  return out;
}

Matrix embed(const ModelParams& params, const Dataset& dataset, std::span<const std::size_t> rows) {
  if (dataset.embed_dim() != params.body.in_dim) throw DimensionError("embed: dataset width does not match model");
  return forward(params, dataset.embeddings(rows), Mode::eval).embeddings;
}

namespace {

double f1_from(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

}  // namespace

F1Scores f1_scores(const Matrix& predictions, const Matrix& gold, bool skip_empty) {
  require_same_shape(predictions, gold, "f1_scores");
  const std::size_t num_c = gold.cols();
  std::vector<std::size_t> tp(num_c, 0), fp(num_c, 0), fn(num_c, 0);
  for (std::size_t r = 0; r < gold.rows(); ++r) {
    for (std::size_t c = 0; c < num_c; ++c) {
      const bool p = predictions(r, c) != 0.0;
      const bool g = gold(r, c) != 0.0;
      if (p && g) ++tp[c];
      else if (p) ++fp[c];
      else if (g) ++fn[c];
    }
  }
  F1Scores out;
  double macro_sum = 0.0;
  std::size_t macro_count = 0;
  for (std::size_t c = 0; c < num_c; ++c) {
    out.tp += tp[c];
    out.fp += fp[c];
    out.fn += fn[c];
    const double f = f1_from(tp[c], fp[c], fn[c]);
    out.per_class.push_back(f);
    const bool empty = tp[c] + fp[c] + fn[c] == 0;
    if (empty && skip_empty) continue;
    macro_sum += f;
    ++macro_count;
  }
  out.micro = f1_from(out.tp, out.fp, out.fn);
  out.macro = macro_count == 0 ? 0.0 : macro_sum / static_cast<double>(macro_count);
  return out;
}

SimilarityReport similarity_by_distance(const Matrix& embeddings, const Matrix& labels,
                                        std::span<const std::string> ids) {
  const std::size_t n = embeddings.rows();
  if (labels.rows() != n) throw DimensionError("similarity_by_distance: embeddings and labels differ in rows");
  if (n < 2) throw ArgumentError("similarity_by_distance: need at least two samples");

  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    norms[i] = norm(embeddings.row(i));
    if (!(norms[i] > 0.0)) {
      const std::string who = i < ids.size() ? "sample '" + ids[i] + "'" : "row " + std::to_string(i);
      throw DegenerateInputError("similarity_by_distance: zero-norm embedding for " + who);
    }
  }

  SimilarityReport report;
  report.n_pairs = n * (n - 1) / 2;
  report.pairs.resize(report.n_pairs);
  // Row i owns pair slots [offset(i), offset(i) + n - 1 - i).
  auto offset = [n](std::size_t i) { return i * (2 * n - i - 1) / 2; };
  parallel_for(
      n,
      [&](std::size_t i) {
        std::size_t slot = offset(i);
        for (std::size_t j = i + 1; j < n; ++j, ++slot) {
          double cs = dot(embeddings.row(i), embeddings.row(j)) / (norms[i] * norms[j]);
          cs = std::clamp(cs, -1.0, 1.0);
          report.pairs[slot] = {i, j, hamming_distance(labels.row(i), labels.row(j)), cs};
        }
      },
      16);

  double mean_x = 0.0, mean_y = 0.0;
  for (const auto& p : report.pairs) {
    report.groups[p.distance].push_back(p.cosine);
    mean_x += static_cast<double>(p.distance);
    mean_y += p.cosine;
  }
  const double count = static_cast<double>(report.n_pairs);
  mean_x /= count;
  mean_y /= count;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (const auto& p : report.pairs) {
    const double dx = static_cast<double>(p.distance) - mean_x;
    const double dy = p.cosine - mean_y;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  // Rounding in cosine of identical vectors leaves ~1e-16 residue; treat it as
  // zero variance.
  const double y_floor = 1e-24 * count;
  if (report.n_pairs < 2 || sxx == 0.0 || syy <= y_floor) {
    report.degenerate = true;
    report.beta = 0.0;
    report.r_squared = 0.0;
    report.intercept = mean_y;
    return report;
  }
  report.beta = sxy / sxx;
  report.intercept = mean_y - report.beta * mean_x;
  report.r_squared = std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0);
  return report;
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace

std::string render_report_csv(const SimilarityReport& report) {
  std::string out = "pair_id,hamming_distance,cosine_similarity\n";
  for (std::size_t k = 0; k < report.pairs.size(); ++k) {
    const auto& p = report.pairs[k];
    out += std::to_string(p.i) + "-" + std::to_string(p.j) + "," + std::to_string(p.distance) + "," +
           fmt_double(p.cosine) + "\n";
  }
  out += "summary," + fmt_double(report.beta) + "," + fmt_double(report.r_squared) + "\n";
  return out;
}

void export_report(const SimilarityReport& report, const std::filesystem::path& path) {
  write_text(path, render_report_csv(report));
}

ReportCsv read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open report '" + path.string() + "'");
  ReportCsv out;
  std::string line;
  std::getline(in, line);
  if (line != "pair_id,hamming_distance,cosine_similarity") throw LoadError("unexpected report header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id, second, third;
    std::getline(row, id, ',');
    std::getline(row, second, ',');
    std::getline(row, third, ',');
    if (id == "summary") {
      out.beta = std::stod(second);
      out.r_squared = std::stod(third);
    } else {
      out.rows.emplace_back(std::stoul(second), std::stod(third));
    }
  }
  return out;
}

double angle_degrees(std::span<const double> a, std::span<const double> b) {
  const double cs = std::clamp(cosine_similarity(a, b), -1.0, 1.0);
  return std::acos(cs) * 180.0 / std::numbers::pi;
}

namespace {

double max_pairwise_angle(const Matrix& x, const std::vector<std::size_t>& members) {
  double worst = 0.0;
  for (std::size_t a = 0; a < members.size(); ++a) {
    for (std::size_t b = a + 1; b < members.size(); ++b) {
      worst = std::max(worst, angle_degrees(x.row(members[a]), x.row(members[b])));
    }
  }
  return worst;
}

double mean_cross_cosine(const Matrix& x, const std::vector<std::size_t>& ga, const std::vector<std::size_t>& gb) {
  double sum = 0.0;
  for (auto a : ga) {
    for (auto b : gb) sum += cosine_similarity(x.row(a), x.row(b));
  }
  return sum / static_cast<double>(ga.size() * gb.size());
}

std::vector<double> mean_direction(const Matrix& x, const std::vector<std::size_t>& members) {
  std::vector<double> dir(x.cols(), 0.0);
  for (auto m : members) {
    const double len = norm(x.row(m));
    for (std::size_t k = 0; k < x.cols(); ++k) dir[k] += x(m, k) / len;
  }
  return dir;
}

// Signed planar angle from a to b in (-pi, pi].
double signed_angle(std::span<const double> a, std::span<const double> b) {
  return std::atan2(a[0] * b[1] - a[1] * b[0], a[0] * b[0] + a[1] * b[1]);
}

}  // namespace

ToyReport toy_experiment(const ToyConfig& cfg) {
  if (cfg.embed_dim != 2) throw ArgumentError("toy_experiment: embed_dim must be 2");
  if (cfg.label_dim < 2 || cfg.label_dim > 4) throw ArgumentError("toy_experiment: label_dim must lie in [2, 4]");
  if (cfg.steps < 1) throw ArgumentError("toy_experiment: steps must be >= 1");
  if (!(cfg.lr > 0.0)) throw ArgumentError("toy_experiment: lr must be > 0");

  ToyReport report;
  // Label groups: A = {0}, B = {1}, A|B = {0,1}, and (label_dim > 2) a group
  // owning every remaining bit.
  std::vector<LabelVector> group_labels;
  LabelVector a(cfg.label_dim), b(cfg.label_dim), ab(cfg.label_dim);
  a.set(0);
  b.set(1);
  ab.set(0);
  ab.set(1);
  group_labels = {a, b, ab};
  report.group_names = {"pure_a", "pure_b", "union_ab"};
  if (cfg.label_dim > 2) {
    LabelVector rest(cfg.label_dim);
    for (std::size_t c = 2; c < cfg.label_dim; ++c) rest.set(c);
    group_labels.push_back(rest);
    report.group_names.push_back("disjoint");
  }
  const std::size_t num_groups = group_labels.size();
  if (cfg.num_points < 2 * num_groups) {
    throw ArgumentError("toy_experiment: need at least " + std::to_string(2 * num_groups) + " points");
  }

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Matrix x(cfg.num_points, 2);
  std::vector<std::vector<std::size_t>> members(num_groups);
  for (std::size_t i = 0; i < cfg.num_points; ++i) {
    const std::size_t g = i % num_groups;
    report.group_of.push_back(g);
    report.labels.push_back(group_labels[g]);
    members[g].push_back(i);
    do {
      x(i, 0) = unif(rng);
      x(i, 1) = unif(rng);
    } while (norm(x.row(i)) < 0.1);
  }
  Matrix labels(cfg.num_points, cfg.label_dim);
  for (std::size_t i = 0; i < cfg.num_points; ++i) {
    for (std::size_t c = 0; c < cfg.label_dim; ++c) labels(i, c) = report.labels[i].test(c) ? 1.0 : 0.0;
  }
  report.initial = x;

  double prev = 0.0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    auto res = contrastive_loss(x, labels, cfg.contrastive);
    if (!std::isfinite(res.value)) {
      throw NumericalError("toy_experiment: non-finite loss at step " + std::to_string(step));
    }
    if (step > 0 && res.value < prev) ++report.decreasing_steps;
    prev = res.value;
    report.loss_history.push_back(res.value);
    for (std::size_t k = 0; k < x.size(); ++k) x.data()[k] -= cfg.lr * res.grad.data()[k];
    for (double v : x.data()) {
      if (!std::isfinite(v)) throw NumericalError("toy_experiment: diverged at step " + std::to_string(step));
    }
  }
  const double final_loss = contrastive_loss(x, labels, cfg.contrastive).value;
  if (final_loss < prev) ++report.decreasing_steps;
  report.loss_history.push_back(final_loss);
  report.final = x;

  for (std::size_t g = 0; g < num_groups; ++g) {
    report.spread_before_deg.push_back(max_pairwise_angle(report.initial, members[g]));
    report.spread_after_deg.push_back(max_pairwise_angle(report.final, members[g]));
  }
  for (std::size_t ga = 0; ga < num_groups; ++ga) {
    for (std::size_t gb = ga + 1; gb < num_groups; ++gb) {
      if (hamming_distance(group_labels[ga], group_labels[gb]) !=
          group_labels[ga].count() + group_labels[gb].count()) {
        continue;  // labels overlap
      }
      report.disjoint_pairs.push_back({ga, gb, mean_cross_cosine(report.initial, members[ga], members[gb]),
                                       mean_cross_cosine(report.final, members[ga], members[gb])});
    }
  }

  const auto dir_a = mean_direction(report.final, members[0]);
  const auto dir_b = mean_direction(report.final, members[1]);
  const double to_b = signed_angle(dir_a, dir_b);
  for (auto m : members[2]) {
    const double to_m = signed_angle(dir_a, report.final.row(m));
    const bool between = to_b > 0.0 ? (to_m > 0.0 && to_m < to_b) : (to_m < 0.0 && to_m > to_b);
    report.mixed_between.push_back(between);
  }
  return report;
}

std::string render_toy_csv(const ToyReport& report) {
  std::string out = "point_id,x0,y0,x1,y1,label_bits\n";
  for (std::size_t i = 0; i < report.labels.size(); ++i) {
    out += std::to_string(i) + "," + fmt_double(report.initial(i, 0)) + "," + fmt_double(report.initial(i, 1)) +
           "," + fmt_double(report.final(i, 0)) + "," + fmt_double(report.final(i, 1)) + "," +
           report.labels[i].to_string() + "\n";
  }
  return out;
}

void export_toy(const ToyReport& report, const std::filesystem::path& path) {
  write_text(path, render_toy_csv(report));
}

}  // namespace labelcon
