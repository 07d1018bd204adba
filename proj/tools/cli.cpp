// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "labelcon/analysis.hpp"
#include "labelcon/checkpoint.hpp"
#include "labelcon/gradsuite.hpp"
#include "labelcon/parallel.hpp"
#include "labelcon/trainer.hpp"
#include "manifest.hpp"

namespace labelcon::cli {

namespace {

using nlohmann::json;

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed << v;
  return os.str();
}

// ---- config replay ---------------------------------------------------------

std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_array()) {
    std::string joined;
    for (const auto& e : v) joined += (joined.empty() ? "" : ",") + scalar_text(e);
    return joined;
  }
  return v.dump();
}

// Finds --config in args and splices its key/value pairs in right after the
// subcommand, so flags given explicitly on the command line still win. A run
// manifest is accepted too: its "config" object is used.
std::vector<std::string> expand_config(const std::vector<std::string>& args, std::string& config_path) {
  std::size_t insert_at = args.size();
  for (std::size_t k = 0; k < args.size(); ++k) {
    const auto& a = args[k];
    if ((a == "--config" || a == "--threads") && k + 1 < args.size()) {
      if (a == "--config") config_path = args[k + 1];
      ++k;
    } else if (a.rfind("--config=", 0) == 0) {
      config_path = a.substr(9);
    } else if (insert_at == args.size() && a.rfind("-", 0) != 0) {
      insert_at = k + 1;
    }
  }
  if (config_path.empty()) return args;
  std::ifstream in(config_path);
  if (!in) throw ConfigError("cannot open config file '" + config_path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + config_path + "' is not valid JSON: " + e.what());
  }
  const json& cfg = doc.contains("config") && doc["config"].is_object() ? doc["config"] : doc;
  if (!cfg.is_object()) throw ConfigError("config file '" + config_path + "' must hold a JSON object");
  std::vector<std::string> spliced;
  for (const auto& [key, value] : cfg.items()) {
    if (key == "config") continue;
    spliced.push_back("--" + key + "=" + scalar_text(value));
  }
  std::vector<std::string> out(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(insert_at));
  out.insert(out.end(), spliced.begin(), spliced.end());
  out.insert(out.end(), args.begin() + static_cast<std::ptrdiff_t>(insert_at), args.end());
  return out;
}

// Every long option of `app` with its effective value, defaults included.
std::map<std::string, json> resolved_config(const CLI::App& app, const CLI::App& root) {
  std::map<std::string, json> out;
  for (const auto* owner : {&root, &app}) {
    for (const auto* opt : owner->get_options()) {
      if (opt->get_lnames().empty()) continue;
      const auto& name = opt->get_lnames().front();
      if (name == "help" || name == "config") continue;
      std::string value;
      if (opt->count() > 0) {
        value = opt->results().back();
      } else {
        value = opt->get_default_str();
      }
      // Unset string options stay out; replaying "--x=" is not accepted.
      if (!value.empty()) out[name] = value;
    }
  }
  return out;
}

// ---- commands --------------------------------------------------------------

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::string config_path;
  Manifest manifest;

  void begin(const std::string& command, const CLI::App& app, const CLI::App& root) {
    manifest.command = command;
    manifest.config = resolved_config(app, root);
    manifest.started_at = utc_timestamp();
    if (!config_path.empty()) manifest.add_input(config_path);
  }
  void finish(const std::filesystem::path& primary_output) {
    manifest.finished_at = utc_timestamp();
    write_manifest(manifest, primary_output);
  }
};

struct SynthArgs {
  std::size_t samples = 280;
  std::size_t classes = kDefaultNumClasses;
  std::size_t dim = 32;
  std::string languages = "en";
  double correlation = 0.3;
  double dev_fraction = 0.15;
  double test_fraction = 0.15;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_synth(const SynthArgs& a, Context& ctx) {
  SynthConfig cfg;
  cfg.num_samples = a.samples;
  cfg.num_classes = a.classes;
  cfg.embed_dim = a.dim;
  cfg.languages = split_list(a.languages);
  cfg.label_correlation = a.correlation;
  cfg.dev_fraction = a.dev_fraction;
  cfg.test_fraction = a.test_fraction;
  cfg.seed = a.seed;
  const auto ds = synth_generate(cfg);
  save_dataset(ds, a.out);
  ctx.manifest.seeds["seed"] = a.seed;
  ctx.manifest.add_output(a.out);
  ctx.finish(a.out);
  ctx.out << "wrote " << ds.size() << " samples to " << a.out << '\n';
  return kSuccess;
}

struct TrainArgs {
  std::string data;
  std::string setting = "zero-shot";
  std::string target;
  std::uint64_t seed = 0;
  std::string out = "model.ckpt";
  std::string log;
  std::string initial_checkpoint;
  std::string initial_out;
  std::string variant;
  double alpha = 0.01;
  std::size_t batch_size = kDefaultBatchSize;
  std::string optimizer = "adam";
  double lr_head = 1e-3;
  double lr_body = 2e-5;
  std::string kernel = "raw_cosine";
  double temperature = 1.0;
  bool normalize_gamma = false;
  std::string sampler = "contrast";
  EpochCounts epochs;
  std::string body = "affine";
  std::size_t body_dim = 0;
  std::string body_hidden;
  std::string body_activation = "relu";
  std::size_t head_hidden = 256;
  double dropout = 0.5;
  std::string head_activation = "relu";
  bool allow_empty_labels = false;
};

int cmd_train(const TrainArgs& a, Context& ctx) {
  const auto dataset = load_dataset(a.data);
  ctx.manifest.add_input(a.data);

  PlanOptions plan_options;
  plan_options.epochs = a.epochs;
  plan_options.alpha = a.alpha;
  plan_options.contrastive_sampler = parse_sampler(a.sampler);
  auto plan = default_plan(parse_setting(a.setting), a.target, plan_options);
  if (!a.variant.empty()) plan = apply_variant(plan, parse_variant(a.variant));

  TrainOptions options;
  options.batch_size = a.batch_size;
  options.optimizer.kind = parse_optimizer_kind(a.optimizer);
  options.optimizer.lr_head = a.lr_head;
  options.optimizer.lr_body = a.lr_body;
  options.optimizer.validate();
  options.contrastive.kernel.kind = parse_kernel_kind(a.kernel);
  options.contrastive.kernel.temperature = a.temperature;
  options.contrastive.kernel.validate();
  options.contrastive.normalize_gamma = a.normalize_gamma;
  options.allow_empty_labels = a.allow_empty_labels;

  ModelParams initial;
  if (!a.initial_checkpoint.empty()) {
    initial = load_checkpoint(a.initial_checkpoint).params;
    ctx.manifest.add_input(a.initial_checkpoint);
    if (initial.body.in_dim != dataset.embed_dim() || initial.head.out_dim != dataset.num_classes()) {
      throw DimensionError("initial checkpoint does not match the dataset's embedding width or class count");
    }
  } else {
    ModelOptions model;
    model.body_kind = parse_body_kind(a.body);
    model.body_out_dim = a.body_dim;
    for (const auto& h : split_list(a.body_hidden)) model.body_hidden.push_back(std::stoul(h));
    model.body_activation = parse_activation(a.body_activation);
    model.head_hidden = a.head_hidden;
    model.dropout = a.dropout;
    model.head_activation = parse_activation(a.head_activation);
    initial = init_model(model.body_config(dataset.embed_dim()),
                         model.head_config(dataset.embed_dim(), dataset.num_classes()), a.seed);
  }
  if (!a.initial_out.empty()) {
    save_checkpoint(Checkpoint{initial, OptimizerState::create(options.optimizer, initial), {{"seed", a.seed}}},
                    a.initial_out);
  }

  auto result = run_plan(plan, dataset, options, initial, a.seed);
  const std::string log_path = a.log.empty() ? a.out + ".log.csv" : a.log;
  save_checkpoint(Checkpoint{result.params, result.optimizer, {{"seed", a.seed}}}, a.out);
  result.log.checkpoint = a.out;
  write_log_csv(result.log, log_path);

  for (const auto& w : result.log.warnings) ctx.err << "warning: " << w << '\n';
  ctx.manifest.seeds["seed"] = a.seed;
  ctx.manifest.add_output(a.out);
  ctx.manifest.add_output(log_path);
  if (!a.initial_out.empty()) ctx.manifest.add_output(a.initial_out);
  ctx.finish(a.out);

  const auto& last = result.log.epochs.back();
  ctx.out << "stages: ";
  for (std::size_t k = 0; k < result.log.events.size(); ++k) ctx.out << (k ? " > " : "") << result.log.events[k];
  ctx.out << "\nfinal epoch loss " << fmt(last.loss_total) << " (bce " << fmt(last.loss_bce) << ", contrastive "
          << fmt(last.loss_con) << ")\ncheckpoint " << a.out << "\nlog " << log_path << '\n';
  return kSuccess;
}

std::vector<std::size_t> require_rows(const Dataset& ds, const std::string& split, const std::string& languages) {
  const auto langs = split_list(languages);
  auto rows = ds.select(parse_split(split), langs);
  if (rows.empty()) throw ConfigError("no rows in split '" + split + "'" + (langs.empty() ? "" : " for " + languages));
  return rows;
}

ModelParams load_matching(const std::string& path, const Dataset& ds) {
  auto params = load_checkpoint(path).params;
  if (params.body.in_dim != ds.embed_dim() || params.head.out_dim != ds.num_classes()) {
    throw DimensionError("checkpoint expects E=" + std::to_string(params.body.in_dim) +
                         ", |C|=" + std::to_string(params.head.out_dim) + " but the dataset has E=" +
                         std::to_string(ds.embed_dim()) + ", |C|=" + std::to_string(ds.num_classes()));
  }
  return params;
}

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  std::string split = "dev";
  std::string languages;
  double threshold = 0.5;
  std::string out;
};

int cmd_eval(const EvalArgs& a, Context& ctx) {
  const auto ds = load_dataset(a.data);
  const auto params = load_matching(a.checkpoint, ds);
  const auto rows = require_rows(ds, a.split, a.languages);
  ctx.manifest.add_input(a.data);
  ctx.manifest.add_input(a.checkpoint);

  std::map<std::string, std::vector<std::size_t>> by_lang;
  for (auto r : rows) by_lang[ds[r].lang].push_back(r);
  by_lang["all"] = rows;

  std::ostringstream csv;
  csv << "lang,n,micro_f1,macro_f1\n";
  for (const auto& [lang, lang_rows] : by_lang) {
    if (lang == "all") continue;
    const auto pred = predict(params, ds, lang_rows, a.threshold);
    const auto f1 = f1_scores(pred.bits, ds.labels(lang_rows));
    csv << lang << ',' << lang_rows.size() << ',' << fmt(f1.micro) << ',' << fmt(f1.macro) << '\n';
  }
  const auto pred = predict(params, ds, rows, a.threshold);
  const auto f1 = f1_scores(pred.bits, ds.labels(rows));
  csv << "all," << rows.size() << ',' << fmt(f1.micro) << ',' << fmt(f1.macro) << '\n';
  ctx.out << csv.str();

  if (!a.out.empty()) {
    std::ofstream file(a.out, std::ios::binary | std::ios::trunc);
    if (!(file << csv.str())) throw IoError("cannot write '" + a.out + "'");
    file.close();
    ctx.manifest.add_output(a.out);
    ctx.finish(a.out);
  }
  return kSuccess;
}

struct AnalyzeArgs {
  std::string data;
  std::string checkpoint;
  std::string split = "dev";
  std::string languages;
  std::string out = "similarity.csv";
};

int cmd_analyze(const AnalyzeArgs& a, Context& ctx) {
  const auto ds = load_dataset(a.data);
  const auto params = load_matching(a.checkpoint, ds);
  const auto rows = require_rows(ds, a.split, a.languages);
  ctx.manifest.add_input(a.data);
  ctx.manifest.add_input(a.checkpoint);

  std::vector<std::string> ids;
  for (auto r : rows) ids.push_back(ds[r].id);
  const auto report = similarity_by_distance(embed(params, ds, rows), ds.labels(rows), ids);
  export_report(report, a.out);
  ctx.manifest.add_output(a.out);
  ctx.finish(a.out);

  ctx.out << "pairs " << report.n_pairs << "\nbeta " << fmt(report.beta) << "\nr_squared " << fmt(report.r_squared)
          << (report.degenerate ? "\n(degenerate fit)" : "") << "\n";
  for (const auto& [d, cosines] : report.groups) {
    double mean = 0.0;
    for (double c : cosines) mean += c;
    ctx.out << "  d=" << d << " n=" << cosines.size() << " mean_cos=" << fmt(mean / static_cast<double>(cosines.size()))
            << '\n';
  }
  return kSuccess;
}

struct ToyArgs {
  ToyConfig config;
  std::string kernel = "exp_cosine";
  double temperature = 1.0;
  std::string out = "toy.csv";
};

int cmd_toy(const ToyArgs& a, Context& ctx) {
  ToyConfig cfg = a.config;
  cfg.contrastive.kernel.kind = parse_kernel_kind(a.kernel);
  cfg.contrastive.kernel.temperature = a.temperature;
  const auto report = toy_experiment(cfg);
  export_toy(report, a.out);
  ctx.manifest.seeds["seed"] = cfg.seed;
  ctx.manifest.add_output(a.out);
  ctx.finish(a.out);

  ctx.out << "loss " << fmt(report.loss_history.front()) << " -> " << fmt(report.loss_history.back()) << '\n';
  for (std::size_t g = 0; g < report.group_names.size(); ++g) {
    ctx.out << report.group_names[g] << " spread " << fmt(report.spread_before_deg[g]) << " -> "
            << fmt(report.spread_after_deg[g]) << " deg\n";
  }
  const auto between = std::count(report.mixed_between.begin(), report.mixed_between.end(), true);
  ctx.out << "union points between parents: " << between << "/" << report.mixed_between.size() << '\n';
  for (const auto& p : report.disjoint_pairs) {
    ctx.out << report.group_names[p.group_a] << " vs " << report.group_names[p.group_b] << " cosine " << fmt(p.before)
            << " -> " << fmt(p.after) << '\n';
  }
  return kSuccess;
}

struct GradArgs {
  std::uint64_t seed = 0;
  std::size_t seeds = 10;
  double step = 1e-5;
  double tolerance = 1e-5;
  std::string kernel = "raw_cosine";
  std::string inject_bug = "none";
};

int cmd_gradcheck(const GradArgs& a, Context& ctx) {
  GradBug bug = GradBug::none;
  if (a.inject_bug == "contrastive_sign") {
    bug = GradBug::contrastive_sign;
  } else if (a.inject_bug == "head_bias") {
    bug = GradBug::head_bias;
  } else if (a.inject_bug != "none") {
    throw ConfigError("unknown bug '" + a.inject_bug + "'");
  }
  bool passed = true;
  double worst = 0.0;
  for (std::size_t k = 0; k < a.seeds; ++k) {
    GradSuiteOptions opt;
    opt.seed = a.seed + k;
    opt.step = a.step;
    opt.tolerance = a.tolerance;
    opt.kernel.kind = parse_kernel_kind(a.kernel);
    opt.bug = bug;
    const auto result = run_gradient_suite(opt);
    for (const auto& e : result.entries) {
      ctx.out << "seed " << opt.seed << ' ' << e.name << " max_rel_error " << std::scientific << std::setprecision(3)
              << e.report.max_rel_error << std::defaultfloat << " over " << e.report.num_params_checked << " params "
              << (e.passed ? "ok" : "FAIL") << '\n';
    }
    passed = passed && result.passed;
    worst = std::max(worst, result.max_rel_error);
  }
  ctx.out << "max_rel_error " << std::scientific << std::setprecision(3) << worst << std::defaultfloat
          << " tolerance " << a.tolerance << '\n'
          << (passed ? "PASS" : "FAIL") << '\n';
  return passed ? kSuccess : kFailure;
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"labelcon: label-aware contrastive training for multi-label classification", "labelcon"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::string config_file;
  std::size_t threads = 0;
  app.add_option("--config", config_file, "JSON file of option values (or a run manifest); explicit flags win");
  app.add_option("--threads", threads, "worker thread cap (default: LABELCON_THREADS or 1)");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic multi-label dataset");
  s->add_option("--samples", synth.samples);
  s->add_option("--classes", synth.classes);
  s->add_option("--dim", synth.dim, "embedding width E");
  s->add_option("--languages", synth.languages, "comma-separated language tags");
  s->add_option("--correlation", synth.correlation, "label/embedding correlation in [0, 1]");
  s->add_option("--dev-fraction", synth.dev_fraction);
  s->add_option("--test-fraction", synth.test_fraction);
  s->add_option("--seed", synth.seed);
  s->add_option("--out", synth.out)->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "run the two-phase training plan");
  t->add_option("--data", train.data)->required();
  t->add_option("--setting", train.setting, "few-shot or zero-shot");
  t->add_option("--target", train.target, "target language (required for few-shot)");
  t->add_option("--seed", train.seed);
  t->add_option("--out", train.out, "checkpoint path");
  t->add_option("--log", train.log, "epoch log CSV (default: <out>.log.csv)");
  t->add_option("--initial-checkpoint", train.initial_checkpoint, "start from this model instead of a fresh init");
  t->add_option("--initial-out", train.initial_out, "also save the untrained model here");
  t->add_option("--variant", train.variant, "ablation: full, no_PT, no_LCON, no_E2E, plus_CS");
  t->add_option("--alpha", train.alpha, "weight of the contrastive term");
  t->add_option("--batch-size", train.batch_size);
  t->add_option("--optimizer", train.optimizer, "adam or sgd");
  t->add_option("--lr-head", train.lr_head);
  t->add_option("--lr-body", train.lr_body);
  t->add_option("--kernel", train.kernel, "raw_cosine or exp_cosine");
  t->add_option("--temperature", train.temperature, "exp_cosine temperature");
  t->add_flag("--normalize-gamma", train.normalize_gamma, "divide negative weights by |C|");
  t->add_option("--sampler", train.sampler, "batch sampler for contrastive stages: contrast or random");
  t->add_option("--epochs-head", train.epochs.head_pretrain);
  t->add_option("--epochs-contrastive", train.epochs.contrastive);
  t->add_option("--epochs-fs-head", train.epochs.few_shot_head_pretrain);
  t->add_option("--epochs-fs-contrastive", train.epochs.few_shot_contrastive);
  t->add_option("--epochs-fs-post", train.epochs.few_shot_head_posttrain);
  t->add_option("--epochs-zs-post", train.epochs.zero_shot_head_posttrain);
  t->add_option("--body", train.body, "identity, affine or mlp");
  t->add_option("--body-dim", train.body_dim, "body output width (0: same as input)");
  t->add_option("--body-hidden", train.body_hidden, "comma-separated mlp hidden widths");
  t->add_option("--body-activation", train.body_activation);
  t->add_option("--head-hidden", train.head_hidden);
  t->add_option("--dropout", train.dropout);
  t->add_option("--head-activation", train.head_activation);
  t->add_flag("--allow-empty-labels", train.allow_empty_labels);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "micro/macro F1 per language");
  e->add_option("--data", ev.data)->required();
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--split", ev.split);
  e->add_option("--languages", ev.languages, "comma-separated filter");
  e->add_option("--threshold", ev.threshold);
  e->add_option("--out", ev.out, "also write the metrics CSV here");

  AnalyzeArgs an;
  auto* z = app.add_subcommand("analyze", "cosine similarity by label Hamming distance");
  z->add_option("--data", an.data)->required();
  z->add_option("--checkpoint", an.checkpoint)->required();
  z->add_option("--split", an.split);
  z->add_option("--languages", an.languages, "comma-separated filter");
  z->add_option("--out", an.out);

  ToyArgs toy;
  auto* y = app.add_subcommand("toy", "2-D repositioning experiment under the contrastive loss");
  y->add_option("--points", toy.config.num_points);
  y->add_option("--label-dim", toy.config.label_dim);
  y->add_option("--steps", toy.config.steps);
  y->add_option("--lr", toy.config.lr);
  y->add_option("--seed", toy.config.seed);
  y->add_option("--kernel", toy.kernel);
  y->add_option("--temperature", toy.temperature);
  y->add_option("--out", toy.out);

  GradArgs grad;
  auto* g = app.add_subcommand("gradcheck", "compare analytic gradients with central differences");
  g->add_option("--seed", grad.seed, "first seed");
  g->add_option("--seeds", grad.seeds, "number of seeds");
  g->add_option("--step", grad.step);
  g->add_option("--tolerance", grad.tolerance);
  g->add_option("--kernel", grad.kernel);
  g->add_option("--inject-bug", grad.inject_bug)->group("");

  Context ctx{out, err, {}, {}};
  try {
    auto args = expand_config(raw_args, ctx.config_path);
    std::reverse(args.begin(), args.end());
    app.parse(args);
    if (threads > 0) set_max_threads(threads);

    for (auto* sub : app.get_subcommands()) {
      const std::string name = sub->get_name();
      ctx.begin(name, *sub, app);
      if (name == "synth") return cmd_synth(synth, ctx);
      if (name == "train") return cmd_train(train, ctx);
      if (name == "eval") return cmd_eval(ev, ctx);
      if (name == "analyze") return cmd_analyze(an, ctx);
      if (name == "toy") return cmd_toy(toy, ctx);
      if (name == "gradcheck") return cmd_gradcheck(grad, ctx);
    }
    return kUsage;
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kSuccess : kUsage;
  } catch (const NumericalError& ex) {
    err << "error: " << ex.what() << '\n';
    return kNumerical;
  } catch (const ConfigError& ex) {
    err << "error: " << ex.what() << '\n';
    return kUsage;
  } catch (const ArgumentError& ex) {
    err << "error: " << ex.what() << '\n';
    return kUsage;
  } catch (const LoadError& ex) {
    err << "error: " << ex.what() << '\n';
    return kUsage;
  } catch (const DimensionError& ex) {
    err << "error: " << ex.what() << '\n';
    return kUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kFailure;
  }
}

}  // namespace labelcon::cli
