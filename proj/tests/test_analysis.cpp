// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "labelcon/analysis.hpp"
#include "oracles.hpp"

using namespace labelcon;

namespace {

// Lower-triangular Cholesky factor of a symmetric positive definite matrix;
// its rows are vectors whose Gram matrix is `g`.
Matrix cholesky(const Matrix& g) {
  const std::size_t n = g.rows();
  Matrix l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = g(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = i == j ? std::sqrt(s) : s / l(j, j);
    }
  }
  return l;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("labelcon_test_analysis_" + name);
}

}  // namespace

TEST_CASE("thresholding") {
  Matrix probs(2, 2, {0.6, 0.4, 0.0, 1.0});
  const auto half = threshold_predictions(probs, 0.5);
  CHECK(half.bits == Matrix(2, 2, {1, 0, 0, 1}));
  const auto all = threshold_predictions(probs, 0.0);
  for (double b : all.bits.data()) CHECK(b == 1.0);
  const auto none = threshold_predictions(probs, 1.0 + 1e-9);
  for (double b : none.bits.data()) CHECK(b == 0.0);
}

TEST_CASE("predict runs the model in eval mode") {
  SynthConfig cfg;
  cfg.num_samples = 30;
  cfg.embed_dim = 6;
  cfg.seed = 1;
  const auto ds = synth_generate(cfg);
  const auto params = init_model({BodyKind::affine, 6, 6, {}, Activation::relu},
                                 {6, 8, 14, 0.5, Activation::relu}, 2);
  const auto rows = ds.select(Split::train);
  const auto a = predict(params, ds, rows);
  CHECK(a.probs == predict(params, ds, rows).probs);
  CHECK(a.probs == forward(params, ds.embeddings(rows), Mode::eval).probs);
  CHECK(embed(params, ds, rows) == forward(params, ds.embeddings(rows), Mode::eval).embeddings);

  const auto wrong = init_model({BodyKind::affine, 5, 6, {}, Activation::relu}, {6, 8, 14, 0.5, Activation::relu}, 2);
  CHECK_THROWS_AS(predict(wrong, ds, rows), DimensionError);
}

TEST_CASE("f1 examples") {
  Matrix gold(3, 2, {1, 0, 0, 1, 1, 1});
  const auto exact = f1_scores(gold, gold);
  CHECK(exact.micro == 1.0);
  CHECK(exact.macro == 1.0);

  // TP = 2, FP = 1, FN = 1.
  Matrix g1(2, 2, {1, 1, 1, 0});
  Matrix p1(2, 2, {1, 1, 0, 1});
  const auto s1 = f1_scores(p1, g1);
  CHECK(s1.tp == 2);
  CHECK(s1.fp == 1);
  CHECK(s1.fn == 1);
  CHECK(s1.micro == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  // Class 0 perfect, class 1 entirely wrong.
  Matrix g2(2, 2, {1, 1, 0, 0});
  Matrix p2(2, 2, {1, 0, 0, 0});
  CHECK(f1_scores(p2, g2).macro == 0.5);

  // Empty class: counts 0 unless skipped.
  Matrix g3(2, 2, {1, 0, 1, 0});
  CHECK(f1_scores(g3, g3).macro == 0.5);
  CHECK(f1_scores(g3, g3, true).macro == 1.0);

  CHECK_THROWS_AS(f1_scores(Matrix(2, 2), Matrix(2, 3)), DimensionError);
}

TEST_CASE("f1 matches the counting oracle on random instances") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> rows(1, 20), cols(1, 5);
  std::uniform_real_distribution<double> density(0.0, 1.0);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = rows(rng), c = cols(rng);
    const auto gold = oracle::random_labels(n, c, rng, density(rng));
    const auto pred = oracle::random_labels(n, c, rng, density(rng));
    for (bool skip : {false, true}) {
      const auto got = f1_scores(pred, gold, skip);
      const auto want = oracle::f1(pred, gold, skip);
      CHECK(got.micro == doctest::Approx(want.micro).epsilon(1e-15));
      CHECK(got.macro == doctest::Approx(want.macro).epsilon(1e-15));
    }
  }
}

TEST_CASE("similarity report examples") {
  SUBCASE("identical embeddings are degenerate") {
    Matrix x(4, 3, 1.0);
    Matrix y(4, 2, {0, 0, 0, 1, 1, 0, 1, 1});
    const auto r = similarity_by_distance(x, y);
    CHECK(r.degenerate);
    CHECK(r.beta == 0.0);
    CHECK(r.r_squared == 0.0);
    for (const auto& [d, cosines] : r.groups) {
      for (double c : cosines) CHECK(c == doctest::Approx(1.0).epsilon(1e-15));
    }
  }
  SUBCASE("a single pair is degenerate") {
    // cos = 0.2 between unit vectors; labels differ in 3 bits.
    Matrix x(2, 2, {1.0, 0.0, 0.2, std::sqrt(1.0 - 0.04)});
    Matrix y(2, 3, {0, 0, 0, 1, 1, 1});
    const auto r = similarity_by_distance(x, y);
    CHECK(r.n_pairs == 1);
    REQUIRE(r.groups.count(3) == 1);
    CHECK(r.groups.at(3).at(0) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(r.degenerate);
    CHECK(r.beta == 0.0);
    CHECK(r.r_squared == 0.0);
  }
  SUBCASE("exact linear similarity recovers the slope") {
    // Labels 000, 001, 011, 111, 100: Hamming distances 1..3.
    Matrix y(5, 3, {0, 0, 0, 0, 0, 1, 0, 1, 1, 1, 1, 1, 1, 0, 0});
    Matrix gram(5, 5);
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        const double d = oracle::hamming(y, i, j);
        gram(i, j) = i == j ? 1.0 : 0.9 - 0.08 * d;
      }
    }
    const auto x = cholesky(gram);
    const auto r = similarity_by_distance(x, y);
    CHECK_FALSE(r.degenerate);
    CHECK(r.beta == doctest::Approx(-0.08).epsilon(1e-12));
    CHECK(r.intercept == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(r.r_squared == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("zero-norm embedding names the sample") {
    Matrix x(3, 2, {1, 0, 0, 0, 0, 1});
    Matrix y(3, 1, {1, 0, 1});
    const std::vector<std::string> ids{"a", "ghost", "c"};
    CHECK_THROWS_WITH_AS(similarity_by_distance(x, y, ids), doctest::Contains("ghost"), DegenerateInputError);
  }
}

TEST_CASE("similarity report invariants") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 2 + t;
    const auto x = oracle::random_matrix(n, 4, rng);
    const auto y = oracle::random_labels(n, 5, rng);
    const auto r = similarity_by_distance(x, y);
    std::size_t total = 0;
    for (const auto& [d, cosines] : r.groups) {
      CHECK(d <= 5);
      total += cosines.size();
    }
    CHECK(total == n * (n - 1) / 2);
    CHECK(r.n_pairs == total);
    CHECK(r.pairs.size() == total);
    CHECK(r.r_squared >= 0.0);
    CHECK(r.r_squared <= 1.0);

    // Reversing the sample order visits every pair the other way round.
    Matrix xr(n, 4), yr(n, 5);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < 4; ++k) xr(i, k) = x(n - 1 - i, k);
      for (std::size_t k = 0; k < 5; ++k) yr(i, k) = y(n - 1 - i, k);
    }
    const auto rr = similarity_by_distance(xr, yr);
    CHECK(rr.beta == doctest::Approx(r.beta).epsilon(1e-12));
    CHECK(rr.r_squared == doctest::Approx(r.r_squared).epsilon(1e-12));
    for (const auto& [d, cosines] : r.groups) CHECK(rr.groups.at(d).size() == cosines.size());
  }
}

TEST_CASE("report CSV round-trip") {
  std::mt19937_64 rng(9);
  const auto x = oracle::random_matrix(3, 4, rng);
  const auto y = oracle::random_labels(3, 3, rng);
  const auto r = similarity_by_distance(x, y);
  const auto path = temp_file("report.csv");
  export_report(r, path);
  const auto back = read_report_csv(path);
  CHECK(back.rows.size() == 3);
  std::map<std::size_t, std::size_t> counts;
  for (const auto& [d, c] : back.rows) ++counts[d];
  for (const auto& [d, cosines] : r.groups) CHECK(counts[d] == cosines.size());
  CHECK(std::abs(back.beta - r.beta) <= 1e-12);
  CHECK(std::abs(back.r_squared - r.r_squared) <= 1e-12);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_report_csv(path), LoadError);
}

TEST_CASE("toy experiment reproduces the ray structure") {
  ToyConfig cfg;
  cfg.seed = 0;
  const auto r = toy_experiment(cfg);
  REQUIRE(r.group_names.size() == 4);
  for (std::size_t g = 0; g < r.group_names.size(); ++g) {
    CHECK_MESSAGE(r.spread_after_deg[g] < 2.0, r.group_names[g]);
    CHECK(r.spread_before_deg[g] >= 0.0);
  }
  REQUIRE_FALSE(r.mixed_between.empty());
  for (bool between : r.mixed_between) CHECK(between);
  REQUIRE_FALSE(r.disjoint_pairs.empty());
  for (const auto& p : r.disjoint_pairs) CHECK(p.after < p.before);
  for (double v : r.final.data()) CHECK(std::isfinite(v));

  const std::size_t steps = r.loss_history.size() - 1;
  CHECK(static_cast<double>(r.decreasing_steps) >= 0.95 * static_cast<double>(steps));
  CHECK(r.loss_history.back() < r.loss_history.front());
}

TEST_CASE("toy experiment argument checks and export") {
  ToyConfig cfg;
  cfg.embed_dim = 3;
  CHECK_THROWS_AS(toy_experiment(cfg), ArgumentError);
  cfg.embed_dim = 2;
  cfg.label_dim = 5;
  CHECK_THROWS_AS(toy_experiment(cfg), ArgumentError);

  ToyConfig small;
  small.steps = 5;
  const auto r = toy_experiment(small);
  const auto csv = render_toy_csv(r);
  CHECK(csv.rfind("point_id,x0,y0,x1,y1,label_bits\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);
  CHECK(toy_experiment(small).final == r.final);
}

TEST_CASE("angle helper") {
  CHECK(angle_degrees(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == doctest::Approx(90.0));
  CHECK(angle_degrees(std::vector<double>{1, 1}, std::vector<double>{2, 2}) == doctest::Approx(0.0));
}
