// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "labelcon/matrix.hpp"

namespace labelcon {

enum class BodyKind { identity, affine, mlp };
enum class Activation { relu, tanh, gelu };
enum class Mode { train, eval };

std::string to_string(BodyKind kind);
BodyKind parse_body_kind(const std::string& text);
std::string to_string(Activation act);
Activation parse_activation(const std::string& text);

// The body maps a fixed input embedding (E) to the representation the
// contrastive loss acts on (H). It stands in for a pretrained encoder.
struct BodyConfig {
  BodyKind kind = BodyKind::affine;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<std::size_t> hidden_dims;  // mlp only
  Activation activation = Activation::relu;

  void validate() const;
  friend bool operator==(const BodyConfig&, const BodyConfig&) = default;
};

// Dense head: H -> hidden -> |C| with dropout on the hidden layer and sigmoid
// outputs.
struct HeadConfig {
  std::size_t in_dim = 0;
  std::size_t hidden = 256;
  std::size_t out_dim = 14;
  double dropout_rate = 0.5;
  Activation activation = Activation::relu;

  void validate() const;
  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

struct Tensor {
  std::string name;
  Matrix value;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct ModelParams {
  BodyConfig body;
  HeadConfig head;
  // Linear layers as (weight [out x in], bias [1 x out]) pairs, in order.
  std::vector<Tensor> body_tensors;
  std::vector<Tensor> head_tensors;
  bool body_frozen = false;
  bool head_frozen = false;

  std::size_t body_param_count() const;
  std::size_t head_param_count() const;

  /// Body values followed by head values, tensor by tensor, row-major.
  std::vector<double> flat_values() const;
  void set_flat_values(std::span<const double> values);

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

ModelParams init_model(const BodyConfig& body, const HeadConfig& head, std::uint64_t seed);

/// Redraws the head exactly as init_model(…, seed) would; the body is left
/// untouched.
void reinit_head(ModelParams& params, std::uint64_t seed);

// Activations retained by forward() for backward().
struct ForwardCache {
  bool valid = false;
  Mode mode = Mode::eval;
  Matrix input;
  std::vector<Matrix> body_pre;   // pre-activation of each body layer
  std::vector<Matrix> body_out;   // output of each body layer
  Matrix embeddings;
  Matrix head_pre;
  Matrix dropout_scale;           // 0 or 1/(1-p) per hidden unit; empty in eval
  Matrix head_hidden;             // after activation and dropout
  Matrix probs;
};

struct ForwardResult {
  Matrix embeddings;
  Matrix probs;
  ForwardCache cache;
};

ForwardResult forward(const ModelParams& params, const Matrix& inputs, Mode mode,
                      std::uint64_t dropout_seed = 0);

struct Gradients {
  std::vector<Matrix> body;
  std::vector<Matrix> head;
  // False for a frozen part: its gradient is computed but must not be applied.
  bool body_applicable = true;
  bool head_applicable = true;

  std::vector<double> flat() const;
};

/// Backpropagates d loss / d probs and d loss / d embeddings (either may be
/// empty, meaning zero) through the cached forward pass.
Gradients backward(const ModelParams& params, const ForwardCache& cache, const Matrix& grad_probs,
                   const Matrix& grad_embeddings);

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& text);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr_head = 1e-3;
  double lr_body = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct OptimizerState {
  OptimizerConfig config;
  std::vector<Matrix> m_body, v_body, m_head, v_head;
  std::uint64_t step_count = 0;
  // Adam bias correction runs per part, so a reset head starts fresh.
  std::uint64_t body_steps = 0;
  std::uint64_t head_steps = 0;

  static OptimizerState create(const OptimizerConfig& config, const ModelParams& params);
  void reset_head(const ModelParams& params);

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// One optimizer update. Frozen parts are left bit-identical.
void step(ModelParams& params, const Gradients& grads, OptimizerState& opt);

}  // namespace labelcon
