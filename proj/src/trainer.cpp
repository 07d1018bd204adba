// SPDX-License-Identifier: Apache-2.0
#include "labelcon/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "labelcon/analysis.hpp"

namespace labelcon {

std::string to_string(StageName s) {
  switch (s) {
    case StageName::head_pretrain: return "head_pretrain";
    case StageName::contrastive_finetune: return "contrastive_finetune";
    case StageName::head_posttrain: return "head_posttrain";
  }
  return "head_pretrain";
}

std::string to_string(LossKind k) { return k == LossKind::bce_only ? "bce_only" : "combined"; }

std::string to_string(Setting s) { return s == Setting::few_shot ? "few_shot" : "zero_shot"; }

Setting parse_setting(const std::string& text) {
  if (text == "few_shot" || text == "few-shot") return Setting::few_shot;
  if (text == "zero_shot" || text == "zero-shot") return Setting::zero_shot;
  throw ConfigError("unknown setting '" + text + "' (expected few-shot or zero-shot)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_pt: return "no_PT";
    case Variant::no_lcon: return "no_LCON";
    case Variant::no_e2e: return "no_E2E";
    case Variant::plus_cs: return "plus_CS";
  }
  return "full";
}

Variant parse_variant(const std::string& text) {
  for (auto v : {Variant::full, Variant::no_pt, Variant::no_lcon, Variant::no_e2e, Variant::plus_cs}) {
    if (text == to_string(v)) return v;
  }
  throw ConfigError("unknown ablation variant '" + text + "'");
}

void StageConfig::validate(bool allow_frozen_body) const {
  const std::string who = "stage " + to_string(name) + ": ";
  switch (name) {
    case StageName::head_pretrain:
    case StageName::head_posttrain:
      if (loss != LossKind::bce_only) throw ConfigError(who + "head stages use the BCE loss only");
      if (!body_frozen) throw ConfigError(who + "head stages keep the body frozen");
      if (head_frozen) throw ConfigError(who + "head stages must train the head");
      break;
    case StageName::contrastive_finetune:
      if (loss != LossKind::combined) throw ConfigError(who + "contrastive fine-tuning uses the combined loss");
      if (body_frozen && !allow_frozen_body) throw ConfigError(who + "contrastive fine-tuning trains the body");
      break;
  }
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError(who + "alpha must be finite and >= 0");
}

namespace {

bool drops_pretraining(Variant v) { return v == Variant::no_pt || v == Variant::no_lcon || v == Variant::no_e2e; }

void expect_shape(const std::vector<StageConfig>& stages, std::initializer_list<StageName> names,
                  const char* phase) {
  if (stages.size() != names.size()) {
    throw ConfigError(std::string(phase) + " has " + std::to_string(stages.size()) + " stages, expected " +
                      std::to_string(names.size()));
  }
  std::size_t k = 0;
  for (auto n : names) {
    if (stages[k].name != n) {
      throw ConfigError(std::string(phase) + " stage " + std::to_string(k) + " is " + to_string(stages[k].name) +
                        ", expected " + to_string(n));
    }
    ++k;
  }
}

StageConfig make_stage(StageName name, std::size_t epochs, std::vector<std::string> langs, double alpha,
                       SamplerStrategy contrastive_sampler) {
  StageConfig s;
  s.name = name;
  s.epochs = epochs;
  s.languages = std::move(langs);
  s.alpha = alpha;
  if (name == StageName::contrastive_finetune) {
    s.loss = LossKind::combined;
    s.body_frozen = false;
    s.sampler = contrastive_sampler;
  } else {
    s.loss = LossKind::bce_only;
    s.body_frozen = true;
    s.sampler = SamplerStrategy::random;
  }
  return s;
}

}  // namespace

void StagePlan::validate() const {
  const bool allow_frozen = variant == Variant::no_e2e;
  if (drops_pretraining(variant)) {
    if (!phase1.empty()) throw ConfigError("variant " + to_string(variant) + " has no phase-1 stages");
  } else {
    expect_shape(phase1, {StageName::head_pretrain, StageName::contrastive_finetune}, "phase 1");
    for (const auto& s : phase1) {
      if (!s.all_languages()) throw ConfigError("phase 1 trains on all languages");
    }
  }
  if (setting == Setting::few_shot) {
    if (target_language.empty()) throw ConfigError("few-shot plans need a target language");
    if (!reinit_head) throw ConfigError("few-shot plans re-initialize the head before phase 2");
    expect_shape(phase2, {StageName::head_pretrain, StageName::contrastive_finetune, StageName::head_posttrain},
                 "phase 2");
    for (const auto& s : phase2) {
      if (s.languages != std::vector<std::string>{target_language}) {
        throw ConfigError("few-shot phase 2 trains on the target language only");
      }
    }
  } else {
    if (reinit_head) throw ConfigError("zero-shot plans keep the phase-1 head");
    expect_shape(phase2, {StageName::head_posttrain}, "phase 2");
    if (!phase2[0].all_languages()) throw ConfigError("zero-shot post-training runs on all languages");
  }
  for (const auto* phase : {&phase1, &phase2}) {
    for (const auto& s : *phase) s.validate(allow_frozen);
  }
}

std::vector<StageName> StagePlan::sequence() const {
  std::vector<StageName> out;
  for (const auto& s : phase1) out.push_back(s.name);
  for (const auto& s : phase2) out.push_back(s.name);
  return out;
}

StagePlan default_plan(Setting setting, const std::string& target_language, const PlanOptions& options) {
  const auto& e = options.epochs;
  const double alpha = options.alpha;
  const auto cs = options.contrastive_sampler;
  StagePlan plan;
  plan.setting = setting;
  plan.target_language = target_language;
  plan.phase1 = {make_stage(StageName::head_pretrain, e.head_pretrain, {}, alpha, cs),
                 make_stage(StageName::contrastive_finetune, e.contrastive, {}, alpha, cs)};
  if (setting == Setting::few_shot) {
    plan.reinit_head = true;
    const std::vector<std::string> target{target_language};
    plan.phase2 = {make_stage(StageName::head_pretrain, e.few_shot_head_pretrain, target, alpha, cs),
                   make_stage(StageName::contrastive_finetune, e.few_shot_contrastive, target, alpha, cs),
                   make_stage(StageName::head_posttrain, e.few_shot_head_posttrain, target, alpha, cs)};
  } else {
    plan.reinit_head = false;
    plan.phase2 = {make_stage(StageName::head_posttrain, e.zero_shot_head_posttrain, {}, alpha, cs)};
  }
  plan.validate();
  return plan;
}

StagePlan apply_variant(StagePlan plan, Variant variant) {
  plan.variant = variant;
  auto each = [&](auto&& fn) {
    for (auto* phase : {&plan.phase1, &plan.phase2}) {
      for (auto& s : *phase) fn(s);
    }
  };
  switch (variant) {
    case Variant::full:
      each([](StageConfig& s) {
        if (s.name == StageName::contrastive_finetune) s.sampler = SamplerStrategy::random;
      });
      break;
    case Variant::plus_cs:
      each([](StageConfig& s) {
        if (s.name == StageName::contrastive_finetune) s.sampler = SamplerStrategy::contrast;
      });
      break;
    case Variant::no_e2e:
      each([](StageConfig& s) { s.body_frozen = true; });
      [[fallthrough]];
    case Variant::no_lcon:
      each([](StageConfig& s) { s.alpha = 0.0; });
      [[fallthrough]];
    case Variant::no_pt:
      plan.phase1.clear();
      each([](StageConfig& s) {
        if (s.name == StageName::contrastive_finetune) s.sampler = SamplerStrategy::random;
      });
      break;
  }
  plan.validate();
  return plan;
}

BodyConfig ModelOptions::body_config(std::size_t in_dim) const {
  BodyConfig b;
  b.kind = body_kind;
  b.in_dim = in_dim;
  b.out_dim = body_out_dim == 0 ? in_dim : body_out_dim;
  if (body_kind == BodyKind::mlp) b.hidden_dims = body_hidden;
  b.activation = body_activation;
  return b;
}

HeadConfig ModelOptions::head_config(std::size_t in_dim, std::size_t num_classes) const {
  HeadConfig h;
  h.in_dim = in_dim;
  h.hidden = head_hidden;
  h.out_dim = num_classes;
  h.dropout_rate = dropout;
  h.activation = head_activation;
  return h;
}

std::vector<std::string> TrainLog::stage_sequence() const {
  std::vector<std::string> out;
  for (const auto& e : events) {
    if (e != "reinit_head") out.push_back(e);
  }
  return out;
}

std::size_t TrainLog::reinit_count() const {
  return static_cast<std::size_t>(std::count(events.begin(), events.end(), std::string("reinit_head")));
}

std::string render_log_csv(const TrainLog& log) {
  std::string out = "stage,epoch,loss_total,loss_bce,loss_con,seconds\n";
  char buf[256];
  for (const auto& r : log.epochs) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.17g,%.17g,%.17g,%.6f\n", r.stage.c_str(), r.epoch, r.loss_total,
                  r.loss_bce, r.loss_con, r.seconds);
    out += buf;
  }
  return out;
}

void write_log_csv(const TrainLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << render_log_csv(log);
}

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  std::uint64_t h = mix(base);
  for (auto p : path) h = mix(h ^ mix(p + 0x632be59bd9b4e019ULL));
  return h;
}

std::vector<EpochRecord> run_stage(ModelParams& params, OptimizerState& opt, const Dataset& dataset,
                                   const StageConfig& stage, const TrainOptions& options, std::uint64_t seed,
                                   std::size_t stage_index, std::vector<std::string>* warnings) {
  const std::string name = to_string(stage.name);
  const auto pool = dataset.select(Split::train, stage.languages);
  if (pool.empty()) {
    std::string langs;
    for (const auto& l : stage.languages) langs += (langs.empty() ? "" : ",") + l;
    throw ConfigError("stage " + name + ": no training rows for languages [" + (langs.empty() ? "all" : langs) + "]");
  }
  if (!options.allow_empty_labels) {
    for (auto r : pool) {
      if (!dataset[r].labels.any()) {
        throw ConfigError("stage " + name + ": training sample '" + dataset[r].id + "' has no labels");
      }
    }
  }
  if (dataset.embed_dim() != params.body.in_dim || dataset.num_classes() != params.head.out_dim) {
    throw DimensionError("stage " + name + ": dataset shape does not match the model");
  }

  params.body_frozen = stage.body_frozen;
  params.head_frozen = stage.head_frozen;
  const bool combined = stage.loss == LossKind::combined;

  std::vector<EpochRecord> records;
  for (std::size_t epoch = 0; epoch < stage.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const auto plan_seed = derive_seed(seed, {stage_index, epoch, 0});
    BatchPlan plan = stage.sampler == SamplerStrategy::contrast
                         ? contrast_batches(dataset, pool, options.batch_size, plan_seed)
                         : random_batches(pool, options.batch_size, plan_seed);
    if (warnings && epoch == 0) {
      for (const auto& w : plan.warnings) warnings->push_back("stage " + name + ": " + w);
    }
    const auto batches = combined ? plan.pairable() : plan.batches;

    EpochRecord rec;
    rec.stage = name;
    rec.stage_index = stage_index;
    rec.epoch = epoch;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& rows = batches[b];
      const Matrix inputs = dataset.embeddings(rows);
      const Matrix labels = dataset.labels(rows);
      auto fwd = forward(params, inputs, Mode::train, derive_seed(seed, {stage_index, epoch, b + 1}));

      LossBreakdown loss;
      Matrix grad_probs;
      Matrix grad_emb;
      if (combined) {
        auto res = combined_loss(fwd.probs, labels, fwd.embeddings, stage.alpha, options.contrastive);
        loss = res.breakdown;
        grad_probs = std::move(res.grad_probs);
        grad_emb = std::move(res.grad_embeddings);
        if (res.no_active_class) ++rec.inactive_batches;
      } else {
        auto res = bce_loss(fwd.probs, labels);
        loss = {res.value, res.value, 0.0, 0.0};
        grad_probs = std::move(res.grad);
      }
      if (!std::isfinite(loss.total)) {
        throw NumericalError("stage " + name + " (index " + std::to_string(stage_index) + "), epoch " +
                             std::to_string(epoch) + ", batch " + std::to_string(b) + ": non-finite loss");
      }
      const auto grads = backward(params, fwd.cache, grad_probs, grad_emb);
      step(params, grads, opt);

      rec.loss_total += loss.total;
      rec.loss_bce += loss.bce;
      rec.loss_con += loss.contrastive;
      ++rec.batches;
    }
    if (rec.batches > 0) {
      const double n = static_cast<double>(rec.batches);
      rec.loss_total /= n;
      rec.loss_bce /= n;
      rec.loss_con /= n;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    records.push_back(rec);
  }
  return records;
}

PlanResult run_plan(const StagePlan& plan, const Dataset& dataset, const TrainOptions& options, ModelParams initial,
                    std::uint64_t seed) {
  plan.validate();
  PlanResult out;
  out.params = std::move(initial);
  out.optimizer = OptimizerState::create(options.optimizer, out.params);

  std::size_t stage_index = 0;
  auto run = [&](const StageConfig& stage) {
    auto recs = run_stage(out.params, out.optimizer, dataset, stage, options, seed, stage_index, &out.log.warnings);
    out.log.events.push_back(to_string(stage.name));
    out.log.epochs.insert(out.log.epochs.end(), recs.begin(), recs.end());
    ++stage_index;
  };

  for (const auto& stage : plan.phase1) run(stage);
  if (plan.reinit_head) {
    out.head_before_reinit = out.params.head_tensors;
    out.body_at_reinit = out.params.body_tensors;
    reinit_head(out.params, derive_seed(seed, {0x4e1417ULL}));
    out.optimizer.reset_head(out.params);
    out.head_after_reinit = out.params.head_tensors;
    out.log.events.push_back("reinit_head");
  }
  for (const auto& stage : plan.phase2) run(stage);
  return out;
}

PlanResult run_plan(const StagePlan& plan, const Dataset& dataset, const TrainOptions& options,
                    const ModelOptions& model, std::uint64_t seed) {
  const auto body = model.body_config(dataset.embed_dim());
  const auto head = model.head_config(body.out_dim, dataset.num_classes());
  return run_plan(plan, dataset, options, init_model(body, head, seed), seed);
}

double AblationTable::mean(Variant v) const {
  const auto it = micro_f1.find(v);
  if (it == micro_f1.end() || it->second.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [lang, f1] : it->second) sum += f1;
  return sum / static_cast<double>(it->second.size());
}

AblationTable ablation_run(const Dataset& dataset, const std::vector<Variant>& variants, const TrainOptions& options,
                           const ModelOptions& model, const PlanOptions& plan_options, std::uint64_t seed,
                           double threshold) {
  AblationTable table;
  const auto dev_langs = dataset.languages(Split::dev);
  for (const auto& lang : dataset.languages(Split::train)) {
    if (std::find(dev_langs.begin(), dev_langs.end(), lang) != dev_langs.end()) table.languages.push_back(lang);
  }
  if (table.languages.empty()) throw ConfigError("ablation_run: no language has both train and dev rows");

  for (const auto& lang : table.languages) {
    const std::vector<std::string> only{lang};
    const auto dev_rows = dataset.select(Split::dev, only);
    const auto gold = dataset.labels(dev_rows);
    for (auto v : variants) {
      const auto plan = apply_variant(default_plan(Setting::few_shot, lang, plan_options), v);
      const auto result = run_plan(plan, dataset, options, model, seed);
      const auto pred = predict(result.params, dataset, dev_rows, threshold);
      table.micro_f1[v][lang] = f1_scores(pred.bits, gold).micro;
    }
  }
  return table;
}

}  // namespace labelcon
