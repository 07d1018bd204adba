// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "labelcon/data.hpp"
#include "labelcon/loss.hpp"
#include "labelcon/model.hpp"
#include "labelcon/sampler.hpp"

namespace labelcon {

enum class StageName { head_pretrain, contrastive_finetune, head_posttrain };
enum class LossKind { bce_only, combined };
enum class Setting { few_shot, zero_shot };

std::string to_string(StageName s);
std::string to_string(LossKind k);
std::string to_string(Setting s);
Setting parse_setting(const std::string& text);

/// Ablation variants. Components are removed cumulatively: no_lcon also
/// drops multilingual pre-training, and no_e2e additionally keeps the body
/// frozen throughout. plus_cs is the full plan with the contrast sampler.
enum class Variant { full, no_pt, no_lcon, no_e2e, plus_cs };

std::string to_string(Variant v);
Variant parse_variant(const std::string& text);

struct StageConfig {
  StageName name = StageName::head_pretrain;
  std::size_t epochs = 10;
  LossKind loss = LossKind::bce_only;
  bool body_frozen = true;
  bool head_frozen = false;
  SamplerStrategy sampler = SamplerStrategy::random;
  std::vector<std::string> languages;  // empty means every train language
  double alpha = 0.01;

  /// Head stages are BCE-only with a frozen body; contrastive fine-tuning is
  /// combined-loss with a trainable body. `allow_frozen_body` relaxes the
  /// latter for the no_e2e ablation.
  void validate(bool allow_frozen_body = false) const;
  bool all_languages() const { return languages.empty(); }
};

struct StagePlan {
  std::vector<StageConfig> phase1;
  // Few-shot plans discard the phase-1 head before phase 2.
  bool reinit_head = false;
  std::vector<StageConfig> phase2;
  Setting setting = Setting::zero_shot;
  std::string target_language;
  Variant variant = Variant::full;

  void validate() const;
  /// Stage names in execution order.
  std::vector<StageName> sequence() const;
};

struct EpochCounts {
  std::size_t head_pretrain = 10;
  std::size_t contrastive = 50;
  std::size_t few_shot_head_pretrain = 10;
  std::size_t few_shot_contrastive = 50;
  std::size_t few_shot_head_posttrain = 10;
  std::size_t zero_shot_head_posttrain = 10;
};

struct PlanOptions {
  EpochCounts epochs;
  double alpha = 0.01;
  SamplerStrategy contrastive_sampler = SamplerStrategy::contrast;
};

/// The two-phase schedule. Phase 1 always trains on every language:
/// head pre-training, then contrastive fine-tuning. Phase 2 depends on the
/// setting:
///   few_shot:  reinit head, then pre-train / fine-tune / post-train on the
///              target language
///   zero_shot: keep the head and post-train on every language
StagePlan default_plan(Setting setting, const std::string& target_language, const PlanOptions& options = {});

/// Rewrites a default plan into one of the ablation variants.
StagePlan apply_variant(StagePlan plan, Variant variant);

struct TrainOptions {
  std::size_t batch_size = kDefaultBatchSize;
  OptimizerConfig optimizer;
  ContrastiveOptions contrastive;
  // Permit samples with no label bits in training pools.
  bool allow_empty_labels = false;
};

struct ModelOptions {
  BodyKind body_kind = BodyKind::affine;
  std::size_t body_out_dim = 0;  // 0 means "same as the input width"
  std::vector<std::size_t> body_hidden;
  Activation body_activation = Activation::relu;
  std::size_t head_hidden = 256;
  double dropout = 0.5;
  Activation head_activation = Activation::relu;

  BodyConfig body_config(std::size_t in_dim) const;
  HeadConfig head_config(std::size_t in_dim, std::size_t num_classes) const;
};

struct EpochRecord {
  std::string stage;
  std::size_t stage_index = 0;
  std::size_t epoch = 0;
  double loss_total = 0.0;
  double loss_bce = 0.0;
  double loss_con = 0.0;
  double seconds = 0.0;
  std::size_t batches = 0;
  // Batches in which no class had two positives.
  std::size_t inactive_batches = 0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  // Stage names and "reinit_head" markers, in execution order.
  std::vector<std::string> events;
  std::vector<std::string> warnings;
  std::string checkpoint;

  std::vector<std::string> stage_sequence() const;
  std::size_t reinit_count() const;
};

void write_log_csv(const TrainLog& log, const std::filesystem::path& path);
std::string render_log_csv(const TrainLog& log);

/// Deterministic sub-seed derived from a base seed and a path of indices.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path);

/// Runs one stage in place on `params`/`opt`. Each epoch draws a fresh batch
/// plan; dropout masks are seeded per (epoch, batch). Throws ConfigError for
/// an empty language selection and NumericalError on a non-finite loss.
std::vector<EpochRecord> run_stage(ModelParams& params, OptimizerState& opt, const Dataset& dataset,
                                   const StageConfig& stage, const TrainOptions& options, std::uint64_t seed,
                                   std::size_t stage_index = 0, std::vector<std::string>* warnings = nullptr);

struct PlanResult {
  ModelParams params;
  OptimizerState optimizer;
  TrainLog log;
  // Head parameters captured around the reinit marker (few-shot only).
  std::optional<std::vector<Tensor>> head_before_reinit;
  std::optional<std::vector<Tensor>> head_after_reinit;
  std::optional<std::vector<Tensor>> body_at_reinit;
};

PlanResult run_plan(const StagePlan& plan, const Dataset& dataset, const TrainOptions& options, ModelParams initial,
                    std::uint64_t seed);
PlanResult run_plan(const StagePlan& plan, const Dataset& dataset, const TrainOptions& options,
                    const ModelOptions& model, std::uint64_t seed);

struct AblationTable {
  std::vector<std::string> languages;
  // variant -> language -> dev Micro-F1
  std::map<Variant, std::map<std::string, double>> micro_f1;

  double mean(Variant v) const;
};

/// For each language with train and dev rows, runs the few-shot plan with
/// that language as target under every requested variant, and scores
/// Micro-F1 on that language's dev rows.
AblationTable ablation_run(const Dataset& dataset, const std::vector<Variant>& variants, const TrainOptions& options,
                           const ModelOptions& model, const PlanOptions& plan_options, std::uint64_t seed,
                           double threshold = 0.5);

}  // namespace labelcon
