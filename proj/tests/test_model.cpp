// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "labelcon/checkpoint.hpp"
#include "labelcon/gradsuite.hpp"
#include "labelcon/loss.hpp"
#include "labelcon/model.hpp"
#include "oracles.hpp"

using namespace labelcon;

namespace {

ModelParams small_model(std::uint64_t seed, BodyKind kind = BodyKind::affine, double dropout = 0.5) {
  BodyConfig body{kind, 6, kind == BodyKind::identity ? 6u : 5u, {}, Activation::relu};
  if (kind == BodyKind::mlp) body.hidden_dims = {7};
  HeadConfig head{body.out_dim, 8, 3, dropout, Activation::relu};
  return init_model(body, head, seed);
}

Gradients random_grads(const ModelParams& params, std::mt19937_64& rng) {
  Gradients g;
  for (const auto& t : params.body_tensors) g.body.push_back(oracle::random_matrix(t.value.rows(), t.value.cols(), rng));
  for (const auto& t : params.head_tensors) g.head.push_back(oracle::random_matrix(t.value.rows(), t.value.cols(), rng));
  return g;
}

}  // namespace

TEST_CASE("init_model is deterministic and Xavier-bounded") {
  const auto a = small_model(3);
  const auto b = small_model(3);
  CHECK(a == b);
  CHECK_FALSE(small_model(4) == a);

  for (const auto* part : {&a.body_tensors, &a.head_tensors}) {
    for (const auto& t : *part) {
      if (t.value.rows() == 1 && t.name.find("bias") != std::string::npos) {
        for (double v : t.value.data()) CHECK(v == 0.0);
        continue;
      }
      const double limit = std::sqrt(6.0 / static_cast<double>(t.value.rows() + t.value.cols()));
      for (double v : t.value.data()) CHECK(std::abs(v) <= limit);
    }
  }
}

TEST_CASE("parameter counts") {
  CHECK(small_model(1, BodyKind::identity).body_param_count() == 0);

  BodyConfig body{BodyKind::identity, 384, 384, {}, Activation::relu};
  HeadConfig head{384, 256, 14, 0.5, Activation::relu};
  const auto params = init_model(body, head, 0);
  CHECK(params.head_param_count() == 384 * 256 + 256 + 256 * 14 + 14);
  CHECK(params.head_param_count() == 102158);
}

TEST_CASE("config validation") {
  BodyConfig bad_identity{BodyKind::identity, 4, 5, {}, Activation::relu};
  CHECK_THROWS_AS(init_model(bad_identity, HeadConfig{5, 8, 3, 0.5, Activation::relu}, 0), ConfigError);
  BodyConfig body{BodyKind::affine, 4, 5, {}, Activation::relu};
  CHECK_THROWS_AS(init_model(body, HeadConfig{6, 8, 3, 0.5, Activation::relu}, 0), ConfigError);
  CHECK_THROWS_AS(init_model(body, HeadConfig{5, 8, 3, 1.0, Activation::relu}, 0), ConfigError);
  CHECK_THROWS_AS(parse_body_kind("transformer"), ConfigError);
  CHECK(parse_activation("gelu") == Activation::gelu);
}

TEST_CASE("forward examples") {
  auto params = small_model(5);
  std::mt19937_64 rng(1);
  const auto x = oracle::random_matrix(4, 6, rng);

  SUBCASE("eval mode is deterministic") {
    const auto r1 = forward(params, x, Mode::eval);
    const auto r2 = forward(params, x, Mode::eval);
    CHECK(r1.probs == r2.probs);
    CHECK(r1.embeddings == r2.embeddings);
    for (double p : r1.probs.data()) CHECK((p > 0.0 && p < 1.0));
  }
  SUBCASE("train mode is deterministic per dropout seed") {
    CHECK(forward(params, x, Mode::train, 9).probs == forward(params, x, Mode::train, 9).probs);
    CHECK_FALSE(forward(params, x, Mode::train, 9).probs == forward(params, x, Mode::train, 10).probs);
  }
  SUBCASE("zero dropout makes train and eval agree") {
    auto p0 = small_model(5, BodyKind::affine, 0.0);
    CHECK(forward(p0, x, Mode::train, 3).probs == forward(p0, x, Mode::eval).probs);
  }
  SUBCASE("zero input through identity body gives 0.5") {
    auto id = small_model(2, BodyKind::identity);
    const auto out = forward(id, Matrix(3, 6), Mode::eval);
    for (double p : out.probs.data()) CHECK(p == 0.5);
  }
  SUBCASE("width mismatch") { CHECK_THROWS_AS(forward(params, Matrix(2, 5), Mode::eval), DimensionError); }
}

TEST_CASE("inverted dropout preserves the hidden expectation") {
  auto params = small_model(7);
  std::mt19937_64 rng(2);
  const auto x = oracle::random_matrix(1, 6, rng, 0.2, 1.0);
  const auto eval = forward(params, x, Mode::eval).cache.head_hidden;
  Matrix mean(eval.rows(), eval.cols());
  const int masks = 20000;
  for (int s = 0; s < masks; ++s) {
    const auto h = forward(params, x, Mode::train, static_cast<std::uint64_t>(s)).cache.head_hidden;
    for (std::size_t k = 0; k < h.size(); ++k) mean.data()[k] += h.data()[k] / masks;
  }
  double scale = 0.0;
  for (double v : eval.data()) scale = std::max(scale, std::abs(v));
  REQUIRE(scale > 0.0);
  for (std::size_t k = 0; k < eval.size(); ++k) {
    // Active units: within 1% relative; dead units are exactly zero both ways.
    if (eval.data()[k] == 0.0) {
      CHECK(mean.data()[k] == 0.0);
    } else {
      CHECK(std::abs(mean.data()[k] - eval.data()[k]) <= 0.01 * std::abs(eval.data()[k]) + 1e-3 * scale);
    }
  }
}

TEST_CASE("backward") {
  auto params = small_model(11, BodyKind::mlp);
  std::mt19937_64 rng(4);
  const auto x = oracle::random_matrix(4, 6, rng);
  auto fwd = forward(params, x, Mode::train, 1);

  SUBCASE("zero upstream gradient gives zero parameter gradients") {
    for (double g : backward(params, fwd.cache, {}, {}).flat()) CHECK(g == 0.0);
  }
  SUBCASE("missing forward cache") { CHECK_THROWS_AS(backward(params, ForwardCache{}, {}, {}), StateError); }
  SUBCASE("frozen part is flagged non-applicable") {
    params.body_frozen = true;
    const auto g = backward(params, fwd.cache, Matrix(4, 3, 1.0), {});
    CHECK_FALSE(g.body_applicable);
    CHECK(g.head_applicable);
  }
}

TEST_CASE("full pipeline gradient matches central differences") {
  std::mt19937_64 rng(6);
  for (BodyKind kind : {BodyKind::identity, BodyKind::affine, BodyKind::mlp}) {
    auto params = small_model(13, kind, 0.0);
    params.body.activation = Activation::tanh;
    const auto x = oracle::random_matrix(5, 6, rng, 0.1, 1.0);
    auto y = oracle::random_labels(5, 3, rng);
    y(0, 0) = y(1, 0) = 1.0;
    ContrastiveOptions opt;
    opt.kernel.kind = SimilarityKernel::Kind::exp_cosine;
    const auto report = finite_diff_check(pipeline_evaluator(params, x, y, 0.01, opt), params.flat_values(), {1e-5});
    CHECK_MESSAGE(report.max_rel_error <= 1e-5, to_string(kind) << " err " << report.max_rel_error);
  }
}

TEST_CASE("gradient suite passes on 10 seeds at both steps and catches injected bugs") {
  for (double step : {1e-5, 1e-6}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      GradSuiteOptions opt;
      opt.seed = seed;
      opt.step = step;
      const auto result = run_gradient_suite(opt);
      CHECK_MESSAGE(result.passed, "seed " << seed << " step " << step << " err " << result.max_rel_error);
    }
  }
  for (GradBug bug : {GradBug::contrastive_sign, GradBug::head_bias}) {
    GradSuiteOptions opt;
    opt.bug = bug;
    CHECK_FALSE(run_gradient_suite(opt).passed);
  }
}

TEST_CASE("adam step matches the scalar oracle") {
  auto params = small_model(17);
  std::mt19937_64 rng(8);
  OptimizerConfig cfg;
  auto opt = OptimizerState::create(cfg, params);
  const auto before = params;
  std::vector<oracle::ScalarAdam> scalars(before.flat_values().size());
  auto expected = before.flat_values();
  const std::size_t body_count = params.body_param_count();

  for (int t = 0; t < 3; ++t) {
    const auto g = random_grads(params, rng);
    const auto flat_g = g.flat();
    step(params, g, opt);
    for (std::size_t k = 0; k < expected.size(); ++k) {
      const double lr = k < body_count ? cfg.lr_body : cfg.lr_head;
      expected[k] = scalars[k].update(expected[k], flat_g[k], lr);
    }
  }
  const auto got = params.flat_values();
  for (std::size_t k = 0; k < got.size(); ++k) CHECK(got[k] == doctest::Approx(expected[k]).epsilon(1e-14));
  CHECK(opt.step_count == 3);
}

TEST_CASE("first adam step moves each parameter by about lr in the gradient's sign") {
  auto params = small_model(19);
  std::mt19937_64 rng(9);
  auto opt = OptimizerState::create({}, params);
  const auto before = params.head_tensors[0].value;
  const auto g = random_grads(params, rng);
  step(params, g, opt);
  for (std::size_t k = 0; k < before.size(); ++k) {
    const double moved = params.head_tensors[0].value.data()[k] - before.data()[k];
    const double gk = g.head[0].data()[k];
    CHECK(moved == doctest::Approx(-1e-3 * (gk > 0 ? 1.0 : -1.0)).epsilon(1e-4));
  }
}

TEST_CASE("step edge cases and freeze contract") {
  auto params = small_model(23);
  std::mt19937_64 rng(10);
  auto opt = OptimizerState::create({}, params);

  SUBCASE("zero gradients leave parameters unchanged") {
    const auto before = params;
    Gradients g;
    for (const auto& t : params.body_tensors) g.body.emplace_back(t.value.rows(), t.value.cols());
    for (const auto& t : params.head_tensors) g.head.emplace_back(t.value.rows(), t.value.cols());
    step(params, g, opt);
    CHECK(params == before);
    CHECK(opt.step_count == 1);
  }
  SUBCASE("frozen head: only the body changes") {
    params.head_frozen = true;
    const auto head_bytes = serialize_tensors(params.head_tensors);
    const auto body_bytes = serialize_tensors(params.body_tensors);
    step(params, random_grads(params, rng), opt);
    CHECK(serialize_tensors(params.head_tensors) == head_bytes);
    CHECK(serialize_tensors(params.body_tensors) != body_bytes);
  }
  SUBCASE("frozen body stays bit-identical") {
    params.body_frozen = true;
    const auto body_bytes = serialize_tensors(params.body_tensors);
    for (int t = 0; t < 5; ++t) step(params, random_grads(params, rng), opt);
    CHECK(serialize_tensors(params.body_tensors) == body_bytes);
    CHECK(opt.body_steps == 0);
    CHECK(opt.head_steps == 5);
  }
  SUBCASE("shape mismatch") {
    auto other = small_model(1, BodyKind::mlp);
    CHECK_THROWS_AS(step(other, random_grads(other, rng), opt), DimensionError);
  }
}

TEST_CASE("reinit_head") {
  auto params = small_model(29);
  const auto body_bytes = serialize_tensors(params.body_tensors);
  reinit_head(params, 100);
  CHECK(serialize_tensors(params.body_tensors) == body_bytes);

  auto again = small_model(29);
  reinit_head(again, 100);
  CHECK(again.head_tensors == params.head_tensors);

  // A reinit draws the same head as a fresh model with that seed.
  CHECK(small_model(100).head_tensors == params.head_tensors);

  for (std::uint64_t s = 101; s < 111; ++s) {
    auto other = params;
    reinit_head(other, s);
    CHECK_FALSE(other.head_tensors == params.head_tensors);
  }
}

TEST_CASE("checkpoint round-trips exactly") {
  auto params = small_model(31, BodyKind::mlp);
  params.body_frozen = true;
  std::mt19937_64 rng(12);
  auto opt = OptimizerState::create({}, params);
  step(params, random_grads(params, rng), opt);
  Checkpoint ck{params, opt, {{"seed", 7}, {"reinit", 0xffffffffffffffffULL}}};

  const auto bytes = encode_checkpoint(ck);
  CHECK(bytes.substr(0, 8) == "LCONCKPT");
  const auto back = decode_checkpoint(bytes);
  CHECK(back == ck);
  CHECK(encode_checkpoint(back) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "labelcon_test_model.ckpt";
  save_checkpoint(ck, path);
  CHECK(load_checkpoint(path) == ck);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(decode_checkpoint("not a checkpoint"), LoadError);
  CHECK_THROWS_AS(decode_checkpoint(std::string_view(bytes).substr(0, bytes.size() - 3)), LoadError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), LoadError);
}
