// SPDX-License-Identifier: Apache-2.0
#include "labelcon/model.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace labelcon {

std::string to_string(BodyKind kind) {
  switch (kind) {
    case BodyKind::identity: return "identity";
    case BodyKind::affine: return "affine";
    case BodyKind::mlp: return "mlp";
  }
  return "affine";
}

BodyKind parse_body_kind(const std::string& text) {
  if (text == "identity") return BodyKind::identity;
  if (text == "affine") return BodyKind::affine;
  if (text == "mlp") return BodyKind::mlp;
  throw ConfigError("unknown body kind '" + text + "'");
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::gelu: return "gelu";
  }
  return "relu";
}

Activation parse_activation(const std::string& text) {
  if (text == "relu") return Activation::relu;
  if (text == "tanh") return Activation::tanh;
  if (text == "gelu") return Activation::gelu;
  throw ConfigError("unknown activation '" + text + "'");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer_kind(const std::string& text) {
  if (text == "adam") return OptimizerKind::adam;
  if (text == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + text + "'");
}

void BodyConfig::validate() const {
  if (in_dim < 1 || out_dim < 1) throw ConfigError("body dims must be >= 1");
  if (kind == BodyKind::identity && in_dim != out_dim) {
    throw ConfigError("identity body requires in_dim == out_dim (" + std::to_string(in_dim) +
                      " vs " + std::to_string(out_dim) + ")");
  }
  for (auto h : hidden_dims) {
    if (h < 1) throw ConfigError("body hidden dims must be >= 1");
  }
  if (kind != BodyKind::mlp && !hidden_dims.empty()) {
    throw ConfigError("hidden_dims only apply to the mlp body");
  }
}

void HeadConfig::validate() const {
  if (in_dim < 1 || hidden < 1 || out_dim < 1) throw ConfigError("head dims must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
}

void OptimizerConfig::validate() const {
  if (!(lr_head > 0.0) || !(lr_body > 0.0)) throw ConfigError("learning rates must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("Adam epsilon must be > 0");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Separate streams so the head can be redrawn without touching the body.
std::uint64_t body_stream(std::uint64_t seed) { return splitmix64(seed ^ 0xb0d1ULL); }
std::uint64_t head_stream(std::uint64_t seed) { return splitmix64(seed ^ 0x4eadULL); }

void add_linear(std::vector<Tensor>& out, const std::string& prefix, std::size_t in, std::size_t outd,
                std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + outd));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(outd, in);
  for (auto& v : w.data()) v = dist(rng);
  out.push_back({prefix + ".weight", std::move(w)});
  out.push_back({prefix + ".bias", Matrix(1, outd)});
}

std::vector<Tensor> make_body(const BodyConfig& cfg, std::uint64_t seed) {
  std::vector<Tensor> out;
  std::mt19937_64 rng(body_stream(seed));
  if (cfg.kind == BodyKind::affine) {
    add_linear(out, "body.0", cfg.in_dim, cfg.out_dim, rng);
  } else if (cfg.kind == BodyKind::mlp) {
    std::size_t prev = cfg.in_dim;
    std::size_t idx = 0;
    for (auto h : cfg.hidden_dims) {
      add_linear(out, "body." + std::to_string(idx++), prev, h, rng);
      prev = h;
    }
    add_linear(out, "body." + std::to_string(idx), prev, cfg.out_dim, rng);
  }
  return out;
}

std::vector<Tensor> make_head(const HeadConfig& cfg, std::uint64_t seed) {
  std::vector<Tensor> out;
  std::mt19937_64 rng(head_stream(seed));
  add_linear(out, "head.hidden", cfg.in_dim, cfg.hidden, rng);
  add_linear(out, "head.out", cfg.hidden, cfg.out_dim, rng);
  return out;
}

std::size_t count_params(const std::vector<Tensor>& tensors) {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.value.size();
  return n;
}

double activate(Activation act, double x) {
  switch (act) {
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
    case Activation::gelu: return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
  }
  return x;
}

double activate_grad(Activation act, double x) {
  switch (act) {
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::gelu: {
      const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
      return cdf + x * pdf;
    }
  }
  return 1.0;
}

// out = in * W^T + b
Matrix linear(const Matrix& in, const Matrix& w, const Matrix& b) {
  Matrix out(in.rows(), w.rows());
  for (std::size_t r = 0; r < in.rows(); ++r) {
    const auto x = in.row(r);
    auto y = out.row(r);
    for (std::size_t o = 0; o < w.rows(); ++o) y[o] = dot(x, w.row(o)) + b(0, o);
  }
  return out;
}

// Given dL/dout, accumulates dL/dW, dL/db and returns dL/din.
Matrix linear_backward(const Matrix& in, const Matrix& w, const Matrix& grad_out, Matrix& grad_w,
                       Matrix& grad_b) {
  grad_w = Matrix(w.rows(), w.cols());
  grad_b = Matrix(1, w.rows());
  Matrix grad_in(in.rows(), w.cols());
  for (std::size_t r = 0; r < in.rows(); ++r) {
    const auto x = in.row(r);
    auto gx = grad_in.row(r);
    for (std::size_t o = 0; o < w.rows(); ++o) {
      const double g = grad_out(r, o);
      if (g == 0.0) continue;
      grad_b(0, o) += g;
      auto gw = grad_w.row(o);
      const auto wr = w.row(o);
      for (std::size_t i = 0; i < w.cols(); ++i) {
        gw[i] += g * x[i];
        gx[i] += g * wr[i];
      }
    }
  }
  return grad_in;
}

Matrix apply_activation(Activation act, const Matrix& pre) {
  Matrix out(pre.rows(), pre.cols());
  for (std::size_t k = 0; k < pre.size(); ++k) out.data()[k] = activate(act, pre.data()[k]);
  return out;
}

}  // namespace

std::size_t ModelParams::body_param_count() const { return count_params(body_tensors); }
std::size_t ModelParams::head_param_count() const { return count_params(head_tensors); }

std::vector<double> ModelParams::flat_values() const {
  std::vector<double> out;
  out.reserve(body_param_count() + head_param_count());
  for (const auto* part : {&body_tensors, &head_tensors}) {
    for (const auto& t : *part) out.insert(out.end(), t.value.data().begin(), t.value.data().end());
  }
  return out;
}

void ModelParams::set_flat_values(std::span<const double> values) {
  if (values.size() != body_param_count() + head_param_count()) {
    throw DimensionError("set_flat_values: expected " + std::to_string(body_param_count() + head_param_count()) +
                         " values, got " + std::to_string(values.size()));
  }
  std::size_t pos = 0;
  for (auto* part : {&body_tensors, &head_tensors}) {
    for (auto& t : *part) {
      std::copy(values.begin() + static_cast<std::ptrdiff_t>(pos),
                values.begin() + static_cast<std::ptrdiff_t>(pos + t.value.size()), t.value.data().begin());
      pos += t.value.size();
    }
  }
}

std::vector<double> Gradients::flat() const {
  std::vector<double> out;
  for (const auto* part : {&body, &head}) {
    for (const auto& m : *part) out.insert(out.end(), m.data().begin(), m.data().end());
  }
  return out;
}

ModelParams init_model(const BodyConfig& body, const HeadConfig& head, std::uint64_t seed) {
  body.validate();
  head.validate();
  if (body.out_dim != head.in_dim) {
    throw ConfigError("body out_dim " + std::to_string(body.out_dim) + " does not match head in_dim " +
                      std::to_string(head.in_dim));
  }
  ModelParams p;
  p.body = body;
  p.head = head;
  p.body_tensors = make_body(body, seed);
  p.head_tensors = make_head(head, seed);
  return p;
}

void reinit_head(ModelParams& params, std::uint64_t seed) { params.head_tensors = make_head(params.head, seed); }

ForwardResult forward(const ModelParams& params, const Matrix& inputs, Mode mode, std::uint64_t dropout_seed) {
  if (inputs.cols() != params.body.in_dim) {
    throw DimensionError("forward: input width " + std::to_string(inputs.cols()) + " does not match body in_dim " +
                         std::to_string(params.body.in_dim));
  }
  ForwardResult out;
  auto& cache = out.cache;
  cache.mode = mode;
  cache.input = inputs;

  Matrix x = inputs;
  const std::size_t body_layers = params.body_tensors.size() / 2;
  for (std::size_t l = 0; l < body_layers; ++l) {
    Matrix pre = linear(x, params.body_tensors[2 * l].value, params.body_tensors[2 * l + 1].value);
    const bool last = l + 1 == body_layers;
    x = last ? pre : apply_activation(params.body.activation, pre);
    cache.body_pre.push_back(std::move(pre));
    cache.body_out.push_back(x);
  }
  cache.embeddings = x;

  cache.head_pre = linear(x, params.head_tensors[0].value, params.head_tensors[1].value);
  Matrix hidden = apply_activation(params.head.activation, cache.head_pre);
  const double rate = params.head.dropout_rate;
  if (mode == Mode::train && rate > 0.0) {
    std::mt19937_64 rng(dropout_seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double keep_scale = 1.0 / (1.0 - rate);
    cache.dropout_scale = Matrix(hidden.rows(), hidden.cols());
    for (std::size_t k = 0; k < hidden.size(); ++k) {
      const double s = unif(rng) < rate ? 0.0 : keep_scale;
      cache.dropout_scale.data()[k] = s;
      hidden.data()[k] *= s;
    }
  }
  cache.head_hidden = hidden;

  Matrix logits = linear(hidden, params.head_tensors[2].value, params.head_tensors[3].value);
  for (auto& v : logits.data()) v = 1.0 / (1.0 + std::exp(-v));
  cache.probs = logits;
  cache.valid = true;

  out.embeddings = cache.embeddings;
  out.probs = cache.probs;
  return out;
}

Gradients backward(const ModelParams& params, const ForwardCache& cache, const Matrix& grad_probs,
                   const Matrix& grad_embeddings) {
  if (!cache.valid) throw StateError("backward called without a forward cache");
  const std::size_t batch = cache.probs.rows();
  if (!grad_probs.empty()) require_same_shape(grad_probs, cache.probs, "backward: grad_probs");
  if (!grad_embeddings.empty()) require_same_shape(grad_embeddings, cache.embeddings, "backward: grad_embeddings");

  Gradients g;
  g.body_applicable = !params.body_frozen;
  g.head_applicable = !params.head_frozen;
  g.head.resize(4);

  // Sigmoid: dp/dz = p (1 - p).
  Matrix grad_logits(batch, params.head.out_dim);
  if (!grad_probs.empty()) {
    for (std::size_t k = 0; k < grad_logits.size(); ++k) {
      const double p = cache.probs.data()[k];
      grad_logits.data()[k] = grad_probs.data()[k] * p * (1.0 - p);
    }
  }
  Matrix grad_hidden =
      linear_backward(cache.head_hidden, params.head_tensors[2].value, grad_logits, g.head[2], g.head[3]);
  for (std::size_t k = 0; k < grad_hidden.size(); ++k) {
    double v = grad_hidden.data()[k];
    if (!cache.dropout_scale.empty()) v *= cache.dropout_scale.data()[k];
    grad_hidden.data()[k] = v * activate_grad(params.head.activation, cache.head_pre.data()[k]);
  }
  Matrix grad_x = linear_backward(cache.embeddings, params.head_tensors[0].value, grad_hidden, g.head[0], g.head[1]);
  if (!grad_embeddings.empty()) {
    for (std::size_t k = 0; k < grad_x.size(); ++k) grad_x.data()[k] += grad_embeddings.data()[k];
  }

  const std::size_t body_layers = params.body_tensors.size() / 2;
  g.body.resize(params.body_tensors.size());
  for (std::size_t l = body_layers; l-- > 0;) {
    const bool last = l + 1 == body_layers;
    if (!last) {
      for (std::size_t k = 0; k < grad_x.size(); ++k) {
        grad_x.data()[k] *= activate_grad(params.body.activation, cache.body_pre[l].data()[k]);
      }
    }
    const Matrix& in = l == 0 ? cache.input : cache.body_out[l - 1];
    grad_x = linear_backward(in, params.body_tensors[2 * l].value, grad_x, g.body[2 * l], g.body[2 * l + 1]);
  }
  return g;
}

namespace {

std::vector<Matrix> zeros_like(const std::vector<Tensor>& tensors) {
  std::vector<Matrix> out;
  for (const auto& t : tensors) out.emplace_back(t.value.rows(), t.value.cols());
  return out;
}

void update_part(std::vector<Tensor>& tensors, const std::vector<Matrix>& grads, std::vector<Matrix>& m,
                 std::vector<Matrix>& v, std::uint64_t t, double lr, const OptimizerConfig& cfg) {
  if (grads.size() != tensors.size()) throw DimensionError("step: gradient/parameter tensor count mismatch");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& p = tensors[i].value.data();
    const auto& gr = grads[i].data();
    if (gr.size() != p.size()) throw DimensionError("step: gradient shape mismatch for " + tensors[i].name);
    if (cfg.kind == OptimizerKind::sgd) {
      for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * gr[k];
      continue;
    }
    auto& mi = m[i].data();
    auto& vi = v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      mi[k] = cfg.beta1 * mi[k] + (1.0 - cfg.beta1) * gr[k];
      vi[k] = cfg.beta2 * vi[k] + (1.0 - cfg.beta2) * gr[k] * gr[k];
      const double mhat = mi[k] / bc1;
      const double vhat = vi[k] / bc2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace

OptimizerState OptimizerState::create(const OptimizerConfig& config, const ModelParams& params) {
  config.validate();
  OptimizerState s;
  s.config = config;
  s.m_body = zeros_like(params.body_tensors);
  s.v_body = zeros_like(params.body_tensors);
  s.m_head = zeros_like(params.head_tensors);
  s.v_head = zeros_like(params.head_tensors);
  return s;
}

void OptimizerState::reset_head(const ModelParams& params) {
  m_head = zeros_like(params.head_tensors);
  v_head = zeros_like(params.head_tensors);
  head_steps = 0;
}

void step(ModelParams& params, const Gradients& grads, OptimizerState& opt) {
  if (opt.m_body.size() != params.body_tensors.size() || opt.m_head.size() != params.head_tensors.size()) {
    throw DimensionError("step: optimizer state does not match model");
  }
  ++opt.step_count;
  if (!params.body_frozen && grads.body_applicable) {
    ++opt.body_steps;
    update_part(params.body_tensors, grads.body, opt.m_body, opt.v_body, opt.body_steps, opt.config.lr_body,
                opt.config);
  }
  if (!params.head_frozen && grads.head_applicable) {
    ++opt.head_steps;
    update_part(params.head_tensors, grads.head, opt.m_head, opt.v_head, opt.head_steps, opt.config.lr_head,
                opt.config);
  }
}

}  // namespace labelcon
