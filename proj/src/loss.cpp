// SPDX-License-Identifier: Apache-2.0
#include "labelcon/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "labelcon/data.hpp"
#include "labelcon/parallel.hpp"

namespace labelcon {

void SimilarityKernel::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("kernel temperature must be > 0");
  if (!(epsilon > 0.0 && epsilon <= 1e-2)) throw ConfigError("kernel epsilon must lie in (0, 1e-2]");
}

std::string to_string(SimilarityKernel::Kind kind) {
  return kind == SimilarityKernel::Kind::raw_cosine ? "raw_cosine" : "exp_cosine";
}

SimilarityKernel::Kind parse_kernel_kind(const std::string& text) {
  if (text == "raw_cosine") return SimilarityKernel::Kind::raw_cosine;
  if (text == "exp_cosine") return SimilarityKernel::Kind::exp_cosine;
  throw ConfigError("unknown kernel '" + text + "' (expected raw_cosine or exp_cosine)");
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine_similarity: vector lengths differ");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine_similarity: zero-norm vector");
  return dot(a, b) / (na * nb);
}

BceResult bce_loss(const Matrix& probs, const Matrix& labels) {
  require_same_shape(probs, labels, "bce_loss");
  BceResult out{0.0, Matrix(probs.rows(), probs.cols())};
  const double count = static_cast<double>(probs.size());
  if (probs.empty()) return out;
  const double lo = kBceProbClamp;
  const double hi = 1.0 - kBceProbClamp;
  double acc = 0.0;
  const auto& p = probs.data();
  const auto& y = labels.data();
  auto& g = out.grad.data();
  for (std::size_t k = 0; k < p.size(); ++k) {
    const bool clamped = p[k] < lo || p[k] > hi;
    const double q = clamped ? (p[k] < lo ? lo : hi) : p[k];
    acc -= y[k] * std::log(q) + (1.0 - y[k]) * std::log(1.0 - q);
    g[k] = clamped ? 0.0 : (-y[k] / q + (1.0 - y[k]) / (1.0 - q)) / count;
  }
  out.value = acc / count;
  return out;
}

namespace {

struct ClassTerm {
  double value = 0.0;
  bool active = false;
  std::size_t clamped = 0;
  double min_eps_gap = std::numeric_limits<double>::infinity();
  double max_abs_ratio = 0.0;
  // d(class value)/d f(x_i, x_k), indexed i * B + k. Only touched rows are
  // non-zero.
  std::vector<double> dfunc;
};

struct PairTables {
  std::size_t batch = 0;
  std::vector<double> func;      // f(x_i, x_k)
  std::vector<double> distance;  // Hamming distance of labels
};

ClassTerm class_term(std::size_t c, const Matrix& labels, const PairTables& t,
                     const ContrastiveOptions& opt, double num_classes) {
  const std::size_t batch = t.batch;
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t i = 0; i < batch; ++i) (labels(i, c) != 0.0 ? pos : neg).push_back(i);

  ClassTerm out;
  if (pos.size() < 2) return out;
  out.active = true;
  out.dfunc.assign(batch * batch, 0.0);

  const double gamma_scale = opt.normalize_gamma ? 1.0 / num_classes : 1.0;
  const double denom_count = static_cast<double>(neg.size()) + 1.0;
  const double pairs = static_cast<double>(pos.size() * (pos.size() - 1));
  const double eps = opt.kernel.epsilon;
  // Chain factor from one log term to the class value: value = -sum(term)/pairs.
  const double outer = -1.0 / pairs;

  double sum_terms = 0.0;
  for (std::size_t i : pos) {
    const double* f_row = t.func.data() + i * batch;
    const double* d_row = t.distance.data() + i * batch;
    double neg_sum = 0.0;
    for (std::size_t k : neg) neg_sum += gamma_scale * d_row[k] * f_row[k];

    double neg_coef = 0.0;
    for (std::size_t j : pos) {
      if (j == i) continue;
      const double sigma = 1.0 - d_row[j] / num_classes;
      const double s = sigma * f_row[j];
      const double delta = (s + neg_sum) / denom_count;
      const double ratio = s / delta;
      out.max_abs_ratio = std::max(out.max_abs_ratio, std::abs(ratio));
      if (ratio > 0.0) out.min_eps_gap = std::min(out.min_eps_gap, std::abs(std::log(ratio / eps)));
      if (!(std::isfinite(ratio) && ratio >= eps)) {
        sum_terms += std::log(eps);
        ++out.clamped;
        continue;
      }
      sum_terms += std::log(ratio);
      // d log(s/delta) = ds/s - d delta/delta
      const double inv_delta_n = 1.0 / (delta * denom_count);
      out.dfunc[i * batch + j] += outer * sigma * (1.0 / s - inv_delta_n);
      neg_coef -= outer * inv_delta_n;
    }
    if (neg_coef != 0.0) {
      for (std::size_t k : neg) out.dfunc[i * batch + k] += neg_coef * gamma_scale * d_row[k];
    }
  }
  out.value = -sum_terms / pairs;
  return out;
}

}  // namespace

ContrastiveResult contrastive_loss(const Matrix& embeddings, const Matrix& labels,
                                   const ContrastiveOptions& options) {
  options.kernel.validate();
  const std::size_t batch = embeddings.rows();
  const std::size_t width = embeddings.cols();
  if (labels.rows() != batch) throw DimensionError("contrastive_loss: embeddings and labels have different row counts");
  if (batch < 2) throw BatchTooSmallError("contrastive_loss: batch of " + std::to_string(batch) + " rows, need >= 2");
  const std::size_t num_c = labels.cols();
  const double num_classes = static_cast<double>(num_c);

  std::vector<double> norms(batch);
  Matrix unit(batch, width);
  for (std::size_t i = 0; i < batch; ++i) {
    norms[i] = norm(embeddings.row(i));
    if (!(norms[i] > 0.0) || !std::isfinite(norms[i])) {
      throw DegenerateInputError("contrastive_loss: embedding row " + std::to_string(i) + " has zero or non-finite norm");
    }
    for (std::size_t h = 0; h < width; ++h) unit(i, h) = embeddings(i, h) / norms[i];
  }

  const bool exp_kernel = options.kernel.kind == SimilarityKernel::Kind::exp_cosine;
  const double inv_temp = 1.0 / options.kernel.temperature;
  PairTables tables{batch, std::vector<double>(batch * batch, 0.0), std::vector<double>(batch * batch, 0.0)};
  std::vector<double> cosine(batch * batch, 1.0);
  std::vector<double> dfunc_dcos(batch * batch, 1.0);
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t k = i; k < batch; ++k) {
      const double cs = (i == k) ? 1.0 : dot(unit.row(i), unit.row(k));
      const double f = exp_kernel ? std::exp(cs * inv_temp) : cs;
      const double df = exp_kernel ? f * inv_temp : 1.0;
      const double d = static_cast<double>(hamming_distance(labels.row(i), labels.row(k)));
      for (auto [a, b] : {std::pair{i, k}, std::pair{k, i}}) {
        cosine[a * batch + b] = cs;
        tables.func[a * batch + b] = f;
        dfunc_dcos[a * batch + b] = df;
        tables.distance[a * batch + b] = d;
      }
    }
  }

  std::vector<ClassTerm> terms(num_c);
  parallel_for(num_c, [&](std::size_t c) { terms[c] = class_term(c, labels, tables, options, num_classes); });

  ContrastiveResult out;
  out.grad = Matrix(batch, width);
  // d (sum of class values) / d f(x_i, x_k), ordered.
  std::vector<double> dfunc(batch * batch, 0.0);
  double total = 0.0;
  for (std::size_t c = 0; c < num_c; ++c) {
    const auto& term = terms[c];
    if (!term.active) continue;
    ++out.active_classes;
    out.clamped_terms += term.clamped;
    out.min_eps_gap = std::min(out.min_eps_gap, term.min_eps_gap);
    out.max_abs_ratio = std::max(out.max_abs_ratio, term.max_abs_ratio);
    total += term.value;
    for (std::size_t a = 0; a < batch * batch; ++a) dfunc[a] += term.dfunc[a];
  }
  if (out.active_classes == 0) {
    out.no_active_class = true;
    return out;
  }
  out.value = total / num_classes;

  for (std::size_t i = 0; i < batch; ++i) {
    auto g = out.grad.row(i);
    const auto ui = unit.row(i);
    for (std::size_t k = 0; k < batch; ++k) {
      if (k == i) continue;
      const double w = (dfunc[i * batch + k] * dfunc_dcos[i * batch + k] +
                        dfunc[k * batch + i] * dfunc_dcos[k * batch + i]) /
                       num_classes;
      if (w == 0.0) continue;
      const auto uk = unit.row(k);
      const double cs = cosine[i * batch + k];
      // d cos(x_i, x_k) / d x_i = (u_k - cos * u_i) / |x_i|
      for (std::size_t h = 0; h < width; ++h) g[h] += w * (uk[h] - cs * ui[h]) / norms[i];
    }
  }
  return out;
}

CombinedResult combined_loss(const Matrix& probs, const Matrix& labels, const Matrix& embeddings,
                             double alpha, const ContrastiveOptions& options) {
  auto bce = bce_loss(probs, labels);
  auto con = contrastive_loss(embeddings, labels, options);
  CombinedResult out;
  out.breakdown.bce = bce.value;
  out.breakdown.contrastive = con.value;
  out.breakdown.alpha = alpha;
  out.breakdown.total = bce.value + alpha * con.value;
  out.grad_probs = std::move(bce.grad);
  out.grad_embeddings = std::move(con.grad);
  for (auto& v : out.grad_embeddings.data()) v *= alpha;
  out.no_active_class = con.no_active_class;
  out.clamped_terms = con.clamped_terms;
  return out;
}

}  // namespace labelcon
