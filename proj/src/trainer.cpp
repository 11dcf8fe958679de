#include "promptseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "json.hpp"
#include "promptseg/ops.hpp"

namespace promptseg {

using namespace ops;

namespace {

constexpr std::uint64_t kTagModel = 0x6d6f64656c;
constexpr std::uint64_t kTagData = 0x64617461;
constexpr std::uint64_t kTagBatch = 0x6261746368;
constexpr std::uint64_t kTagNovel = 0x6e6f76656c;
constexpr std::uint64_t kTagEpisode = 0x6570697364;
constexpr std::uint64_t kTagHeldout = 0x68656c64;

double value_of(const Tensor& t) { return t.defined() ? t.item() : 0.0; }

void log_record(TrainingLog* log, LogRecord r) {
  if (log) log->add(r);
}

// Cross-entropy-only iterations shared by inductive fine-tuning and the
// first transductive phase.
void ce_phase(PromptModel& model, AdamW& opt, const Episode& episode, std::size_t iters, std::size_t first_iter,
              const std::string& phase, TrainingLog* log) {
  for (std::size_t t = 0; t < iters; ++t) {
    Tensor loss = support_loss(model, episode);
    if (!std::isfinite(loss.item())) {
      throw NumericError(phase + ": non-finite support loss at iteration " + std::to_string(first_iter + t));
    }
    loss.backward();
    opt.step();
    LogRecord r;
    r.phase = phase;
    r.iteration = first_iter + t;
    r.support_ce = loss.item();
    r.w_ce = 1.0;
    r.total = loss.item();
    r.lr = opt.config().lr;
    log_record(log, r);
  }
}

struct QueryAnchor {
  Tensor old_base;  // frozen base model's probabilities on the query
  std::vector<int> gt_channels;
};

QueryAnchor anchor_for(const PromptModel& base, const PromptModel& model, const Scene& query) {
  return {base.forward(query.pyramid).probs.detach(), channel_labels(query.labels, model)};
}

TransductiveRun full_phase(PromptModel model, AdamW opt, const PromptModel& base, const Episode& episode,
                           std::size_t q, const RunConfig& cfg, TrainingLog* log) {
  const Scene& query = episode.queries.at(q);
  const QueryAnchor anchor = anchor_for(base, model, query);
  const std::size_t nb = model.base_count();
  TransductiveRun run;
  // Prior snapshot at the start of transduction, held fixed afterwards.
  run.prior = cfg.trans.prior_mode == PriorMode::oracle
                  ? oracle_prior(anchor.gt_channels, model.class_count())
                  : estimate_prior(model.forward(query.pyramid).probs);
  const std::size_t start = cfg.trans.ce_only_iters;
  for (std::size_t t = 0; t < cfg.trans.full_iters; ++t) {
    SegOutput out = model.forward(query.pyramid);
    TransductiveTerms terms{support_loss(model, episode), pixel_entropy(out.probs),
                            marginal_kl(out.probs, run.prior), kd_loss(renormalize_base(out.probs, nb), anchor.old_base)};
    Tensor loss = transductive_loss(terms, cfg.trans);
    if (!std::isfinite(loss.item())) {
      throw NumericError("transductive: non-finite loss at iteration " + std::to_string(start + t));
    }
    loss.backward();
    opt.step();
    LogRecord r;
    r.phase = "transductive";
    r.query = static_cast<long>(q);
    r.iteration = start + t;
    r.support_ce = value_of(terms.support_ce);
    r.query_entropy = value_of(terms.query_entropy);
    r.marginal = value_of(terms.marginal);
    r.kd = value_of(terms.kd);
    r.w_ce = r.w_entropy = cfg.trans.alpha;
    r.w_marginal = 1.0;
    r.w_kd = cfg.trans.gamma;
    r.total = loss.item();
    r.lr = opt.config().lr;
    r.alpha = cfg.trans.alpha;
    r.gamma = cfg.trans.gamma;
    log_record(log, r);
  }
  run.output = model.forward(query.pyramid);
  run.model = std::move(model);
  return run;
}

AdamW finetune_optimizer(const PromptModel& model, const RunConfig& cfg) {
  AdamWConfig oc;
  oc.lr = cfg.finetune_lr;
  oc.weight_decay = cfg.weight_decay;
  return AdamW(model.trainable_parameters(), oc);
}

LabelMap to_label_map(const SegOutput& out, const PromptModel& model) {
  LabelMap m(out.height, out.width);
  for (std::size_t i = 0; i < m.size(); ++i) m.ids[i] = model.class_id(static_cast<std::size_t>(out.argmax[i]));
  return m;
}

std::string fmt(double v, const char* spec = "%.4f") {
  char buf[48];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

void TrainingLog::add(const LogRecord& r) {
  records_.push_back(r);
  if (stream_) *stream_ << to_json(r) << '\n';
}

std::string TrainingLog::to_json(const LogRecord& r) {
  nlohmann::ordered_json j;
  j["phase"] = r.phase;
  if (r.query >= 0) j["query"] = r.query;
  j["iteration"] = r.iteration;
  j["support_ce"] = r.support_ce;
  j["query_entropy"] = r.query_entropy;
  j["marginal"] = r.marginal;
  j["kd"] = r.kd;
  j["w_ce"] = r.w_ce;
  j["w_entropy"] = r.w_entropy;
  j["w_marginal"] = r.w_marginal;
  j["w_kd"] = r.w_kd;
  j["total"] = r.total;
  j["lr"] = r.lr;
  j["alpha"] = r.alpha;
  j["gamma"] = r.gamma;
  return j.dump();
}

LogRecord TrainingLog::from_json(const std::string& line) {
  auto j = nlohmann::json::parse(line);
  LogRecord r;
  r.phase = j.at("phase").get<std::string>();
  r.query = j.value("query", -1L);
  r.iteration = j.at("iteration").get<std::size_t>();
  r.support_ce = j.at("support_ce").get<double>();
  r.query_entropy = j.at("query_entropy").get<double>();
  r.marginal = j.at("marginal").get<double>();
  r.kd = j.at("kd").get<double>();
  r.w_ce = j.at("w_ce").get<double>();
  r.w_entropy = j.at("w_entropy").get<double>();
  r.w_marginal = j.at("w_marginal").get<double>();
  r.w_kd = j.at("w_kd").get<double>();
  r.total = j.at("total").get<double>();
  r.lr = j.at("lr").get<double>();
  r.alpha = j.at("alpha").get<double>();
  r.gamma = j.at("gamma").get<double>();
  return r;
}

RunConfig seeded(const RunConfig& cfg, std::uint64_t seed_index) {
  RunConfig c = cfg;
  c.seed = cfg.seed + seed_index;
  c.split = static_cast<int>((static_cast<std::uint64_t>(cfg.split) + seed_index) % cfg.world.num_splits);
  return c;
}

BaseRun train_base(const SyntheticWorld& world, const RunConfig& cfg, TrainingLog* log) {
  cfg.validate();
  const Split split = make_split(world.config, cfg.split);
  Rng rng(mix_seed({cfg.seed, kTagModel}));
  BaseRun run;
  run.model = PromptModel::init_base(cfg.model, split.base_ids, rng);
  const auto items = build_base_trainset(world, split, cfg.base_train_size, mix_seed({cfg.seed, kTagData}));
  std::vector<std::vector<int>> labels;
  for (const auto& it : items) labels.push_back(channel_labels(it.labels, run.model));

  AdamWConfig oc;
  oc.lr = cfg.base_lr;
  oc.weight_decay = cfg.weight_decay;
  AdamW opt(run.model.trainable_parameters(), oc);
  Rng batch_rng(mix_seed({cfg.seed, kTagBatch}));
  std::uniform_int_distribution<std::size_t> pick(0, items.size() - 1);
  const std::vector<double> weights(cfg.base_batch, 1.0 / static_cast<double>(cfg.base_batch));
  for (std::size_t t = 0; t < cfg.base_iters; ++t) {
    PromptModel last_good = run.model.clone();
    std::vector<Tensor> losses;
    for (std::size_t b = 0; b < cfg.base_batch; ++b) {
      const std::size_t i = pick(batch_rng);
      losses.push_back(pixel_ce(run.model.forward(items[i].pyramid).probs, labels[i]));
    }
    Tensor loss = weighted_sum(losses, weights);
    if (!std::isfinite(loss.item())) {
      throw DivergenceError("base training diverged at iteration " + std::to_string(t), std::move(last_good), t);
    }
    loss.backward();
    try {
      opt.step();
    } catch (const NumericError& e) {
      throw DivergenceError(std::string("base training: ") + e.what(), std::move(last_good), t);
    }
    run.losses.push_back(loss.item());
    LogRecord r;
    r.phase = "base";
    r.iteration = t;
    r.support_ce = loss.item();
    r.w_ce = 1.0;
    r.total = loss.item();
    r.lr = cfg.base_lr;
    log_record(log, r);
  }
  return run;
}

Episode episode_for(const SyntheticWorld& world, const RunConfig& cfg) {
  return make_episode(world, cfg.split, cfg.shots, mix_seed({cfg.seed, kTagEpisode}), cfg.num_queries);
}

std::vector<int> channel_labels(const LabelMap& labels, const PromptModel& model) {
  std::vector<int> out(labels.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int id = labels.ids[i];
    for (std::size_t c = 0; c < model.class_count(); ++c) {
      if (model.class_id(c) == id) {
        out[i] = static_cast<int>(c);
        break;
      }
    }
  }
  return out;
}

LabelMap predict(const PromptModel& model, const FeaturePyramid& pyramid) {
  return to_label_map(model.forward(pyramid), model);
}

std::vector<LabelMap> predict_all(const PromptModel& model, const std::vector<Scene>& scenes) {
  std::vector<LabelMap> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(predict(model, s.pyramid));
  return out;
}

std::function<bool(const std::string&)> finetune_trainable(const RunConfig& cfg) {
  const bool base_prompts = cfg.train_base_prompts;
  return [base_prompts](const std::string& name) {
    if (name == "prompts.novel" || name == "head.w_novel") return true;
    if (name.rfind("causal.", 0) == 0) return true;
    return base_prompts && name == "prompts.base";
  };
}

PromptModel prepare_novel(const PromptModel& base, const Episode& episode, const RunConfig& cfg) {
  if (episode.support.empty()) throw ConfigError("fine-tuning needs a non-empty support set");
  for (int id : episode.novel_ids) {
    if (std::find(base.base_class_ids.begin(), base.base_class_ids.end(), id) != base.base_class_ids.end()) {
      throw ConfigError("novel class " + std::to_string(id) + " was a base class of the checkpoint");
    }
  }
  PromptModel m = base.clone();
  Rng rng(mix_seed({cfg.seed, kTagNovel}));
  const std::size_t dim = m.config.embed_dim;
  m.config.causal = cfg.model.causal;
  m.config.causal_residual = cfg.model.causal_residual;
  m.params.causal_residual = cfg.model.causal_residual;
  m.params.add_causal(cfg.model.causal, dim, rng);
  Tensor init = cfg.prompt_init == PromptInit::masked_pooling
                    ? masked_average_pool(episode.support)
                    : random_normal({episode.support.size(), dim}, cfg.random_init_sigma, rng);
  m.prompts.novel = init.clone(true);
  m.params.w_novel = init.clone(true);
  m.novel_class_ids = episode.novel_ids;
  m.set_trainable(finetune_trainable(cfg));
  return m;
}

Tensor support_loss(const PromptModel& model, const Episode& episode) {
  const std::size_t nb = model.base_count();
  std::vector<Tensor> losses;
  for (std::size_t n = 0; n < episode.support.size(); ++n) {
    for (const auto& shot : episode.support[n].shots) {
      std::vector<int> labels(shot.mask.size(), 0);
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (shot.mask.ids[i]) labels[i] = static_cast<int>(nb + n);
      losses.push_back(pixel_ce(model.forward(shot.pyramid).probs, labels));
    }
  }
  if (losses.empty()) throw ConfigError("support set has no shots");
  return weighted_sum(losses, std::vector<double>(losses.size(), 1.0 / static_cast<double>(losses.size())));
}

std::vector<std::string> frozen_audit(const PromptModel& before, const PromptModel& after,
                                      const std::function<bool(const std::string&)>& trainable) {
  std::vector<std::string> changed;
  const auto a = before.named_parameters();
  const auto b = after.named_parameters();
  for (const auto& [name, t] : a) {
    if (trainable(name)) continue;
    auto it = std::find_if(b.begin(), b.end(), [&](const auto& p) { return p.first == name; });
    if (it == b.end() || !bitwise_equal(t, it->second)) changed.push_back(name);
  }
  return changed;
}

FinetuneRun finetune_inductive(const PromptModel& base, const Episode& episode, const RunConfig& cfg,
                               TrainingLog* log) {
  FinetuneRun run;
  run.model = prepare_novel(base, episode, cfg);
  const PromptModel before = run.model.clone();
  AdamW opt = finetune_optimizer(run.model, cfg);
  ce_phase(run.model, opt, episode, cfg.finetune_iters, 0, "finetune", log);
  run.audit_violations = frozen_audit(before, run.model, finetune_trainable(cfg));
  return run;
}

TransductiveRun tune_transductive(const PromptModel& base, const Episode& episode, std::size_t query,
                                  const RunConfig& cfg, TrainingLog* log) {
  if (query >= episode.queries.size()) throw ConfigError("query index out of range");
  PromptModel model = prepare_novel(base, episode, cfg);
  const PromptModel before = model.clone();
  AdamW opt = finetune_optimizer(model, cfg);
  ce_phase(model, opt, episode, cfg.trans.ce_only_iters, 0, "transductive", log);
  auto run = full_phase(std::move(model), std::move(opt), base, episode, query, cfg, log);
  run.audit_violations = frozen_audit(before, run.model, finetune_trainable(cfg));
  return run;
}

std::vector<TransductiveRun> transduce_all(const PromptModel& base, const Episode& episode, const RunConfig& cfg,
                                           TrainingLog* log) {
  PromptModel model = prepare_novel(base, episode, cfg);
  const PromptModel before = model.clone();
  AdamW opt = finetune_optimizer(model, cfg);
  ce_phase(model, opt, episode, cfg.trans.ce_only_iters, 0, "transductive", log);
  std::vector<TransductiveRun> runs;
  for (std::size_t q = 0; q < episode.queries.size(); ++q) {
    PromptModel copy = model.clone();
    AdamW copy_opt = opt.rebind(copy.trainable_parameters());
    runs.push_back(full_phase(std::move(copy), std::move(copy_opt), base, episode, q, cfg, log));
    runs.back().audit_violations = frozen_audit(before, runs.back().model, finetune_trainable(cfg));
  }
  return runs;
}

EvalReport evaluate_model(const PromptModel& model, const Episode& episode, const EvalOptions& opts) {
  return evaluate(predict_all(model, episode.queries), episode.queries, episode.base_ids, episode.novel_ids, opts);
}

EvalReport evaluate_runs(const std::vector<TransductiveRun>& runs, const Episode& episode, const EvalOptions& opts) {
  std::vector<LabelMap> preds;
  for (const auto& r : runs) preds.push_back(to_label_map(r.output, r.model));
  return evaluate(preds, episode.queries, episode.base_ids, episode.novel_ids, opts);
}

EvalReport evaluate_base_heldout(const PromptModel& base, const SyntheticWorld& world, const RunConfig& cfg,
                                 std::size_t count) {
  const Split split = make_split(world.config, cfg.split);
  std::vector<Scene> scenes;
  for (auto& item : build_base_trainset(world, split, count, mix_seed({cfg.seed, kTagHeldout})))
    scenes.push_back({std::move(item.pyramid), std::move(item.labels), {}});
  return evaluate(predict_all(base, scenes), scenes, split.base_ids, {}, cfg.eval);
}

SeedContext prepare_seed(const RunConfig& cfg, std::uint64_t seed_index) {
  SeedContext ctx;
  ctx.cfg = seeded(cfg, seed_index);
  ctx.world = generate_world(ctx.cfg.world);
  ctx.base = train_base(ctx.world, ctx.cfg).model;
  ctx.episode = episode_for(ctx.world, ctx.cfg);
  ctx.base_report = evaluate_model(ctx.base, ctx.episode, ctx.cfg.eval);
  return ctx;
}

const std::vector<AblationRow>& ablation_rows() {
  static const std::vector<AblationRow> rows{
      {1, CausalMode::none, PromptInit::random, false},
      {2, CausalMode::none, PromptInit::masked_pooling, false},
      {3, CausalMode::first_layer, PromptInit::masked_pooling, false},
      {4, CausalMode::separate, PromptInit::masked_pooling, false},
      {5, CausalMode::shared, PromptInit::random, false},
      {6, CausalMode::shared, PromptInit::masked_pooling, false},
      {7, CausalMode::shared, PromptInit::masked_pooling, true},
  };
  return rows;
}

void RunSummary::add(const EvalReport& r, const EvalReport& base_ckpt) {
  per_seed.push_back(r);
  base_drop.push_back(base_ckpt.base_miou - r.base_miou);
}

void RunSummary::finish() {
  base = novel = mean = 0.0;
  for (const auto& r : per_seed) {
    base += r.base_miou;
    novel += r.novel_miou;
    mean += r.mean_miou;
  }
  const double n = per_seed.empty() ? 1.0 : static_cast<double>(per_seed.size());
  base /= n;
  novel /= n;
  mean /= n;
}

EvalReport run_config_on_seed(const SeedContext& ctx, const RunConfig& cfg, bool transduction,
                              std::size_t* audit_violations) {
  const Episode episode = cfg.shots == ctx.cfg.shots ? ctx.episode : episode_for(ctx.world, cfg);
  if (transduction) {
    auto runs = transduce_all(ctx.base, episode, cfg);
    if (audit_violations)
      for (const auto& r : runs) *audit_violations += r.audit_violations.size();
    return evaluate_runs(runs, episode, cfg.eval);
  }
  auto run = finetune_inductive(ctx.base, episode, cfg);
  if (audit_violations) *audit_violations += run.audit_violations.size();
  return evaluate_model(run.model, episode, cfg.eval);
}

std::vector<std::pair<AblationRow, RunSummary>> run_ablation_suite(const RunConfig& cfg, std::size_t seeds,
                                                                   const Progress& progress) {
  std::vector<std::pair<AblationRow, RunSummary>> out;
  for (const auto& row : ablation_rows()) out.emplace_back(row, RunSummary{});
  for (std::size_t s = 0; s < seeds; ++s) {
    const SeedContext ctx = prepare_seed(cfg, s);
    if (progress) progress("seed " + std::to_string(s) + ": base mIoU " + percent(ctx.base_report.base_miou));
    for (auto& [row, summary] : out) {
      RunConfig rc = ctx.cfg;
      rc.model.causal = row.causal;
      rc.prompt_init = row.init;
      EvalReport r = run_config_on_seed(ctx, rc, row.transduction, &summary.audit_violations);
      summary.add(r, ctx.base_report);
      if (progress) {
        progress("seed " + std::to_string(s) + " row " + std::to_string(row.id) + ": base " + percent(r.base_miou) +
                 " novel " + percent(r.novel_miou) + " mean " + percent(r.mean_miou));
      }
    }
  }
  for (auto& [row, summary] : out) summary.finish();
  return out;
}

CsvTable ablation_csv(const std::vector<std::pair<AblationRow, RunSummary>>& rows) {
  CsvTable t{{"row", "causal_attention", "prompt_init", "transduction", "base", "novel", "mean",
              "novel_to_base_confusion", "max_base_drop", "seeds"},
             {}};
  for (const auto& [row, s] : rows) {
    double confusion = 0.0;
    for (const auto& r : s.per_seed) confusion += r.novel_to_base_confusion();
    if (!s.per_seed.empty()) confusion /= static_cast<double>(s.per_seed.size());
    double worst = 0.0;
    for (double d : s.base_drop) worst = std::max(worst, d);
    t.rows.push_back({"(" + std::to_string(row.id) + ")", to_string(row.causal), to_string(row.init),
                      row.transduction ? "yes" : "no", percent(s.base), percent(s.novel), percent(s.mean),
                      fmt(confusion), percent(worst), std::to_string(s.per_seed.size())});
  }
  return t;
}

std::vector<SweepPoint> sweep_shots(const RunConfig& cfg, const std::vector<std::size_t>& shots, std::size_t seeds,
                                    bool transduction, const Progress& progress) {
  std::vector<SweepPoint> points;
  for (auto k : shots) points.push_back({static_cast<double>(k), {}});
  for (std::size_t s = 0; s < seeds; ++s) {
    const SeedContext ctx = prepare_seed(cfg, s);
    for (auto& p : points) {
      RunConfig rc = ctx.cfg;
      rc.shots = static_cast<std::size_t>(p.x);
      EvalReport r = run_config_on_seed(ctx, rc, transduction, &p.summary.audit_violations);
      p.summary.add(r, ctx.base_report);
      if (progress) {
        progress("seed " + std::to_string(s) + " shots " + std::to_string(rc.shots) + ": novel " +
                 percent(r.novel_miou) + " base " + percent(r.base_miou));
      }
    }
  }
  for (auto& p : points) p.summary.finish();
  return points;
}

std::vector<SweepPoint> sweep_start(const RunConfig& cfg, const std::vector<std::size_t>& starts,
                                    std::size_t total_iters, std::size_t seeds, const Progress& progress) {
  std::vector<SweepPoint> points;
  for (auto st : starts) {
    if (st > total_iters) throw ConfigError("transduction start beyond the iteration budget");
    points.push_back({static_cast<double>(st), {}});
  }
  for (std::size_t s = 0; s < seeds; ++s) {
    const SeedContext ctx = prepare_seed(cfg, s);
    for (auto& p : points) {
      RunConfig rc = ctx.cfg;
      rc.trans.ce_only_iters = static_cast<std::size_t>(p.x);
      rc.trans.full_iters = total_iters - rc.trans.ce_only_iters;
      EvalReport r = run_config_on_seed(ctx, rc, true, &p.summary.audit_violations);
      p.summary.add(r, ctx.base_report);
      if (progress) {
        progress("seed " + std::to_string(s) + " start " + std::to_string(rc.trans.ce_only_iters) + ": mean " +
                 percent(r.mean_miou));
      }
    }
  }
  for (auto& p : points) p.summary.finish();
  return points;
}

std::vector<SweepPoint> sweep_iters(const RunConfig& cfg, const std::vector<std::size_t>& iters, std::size_t seeds,
                                    const Progress& progress) {
  std::vector<SweepPoint> points;
  for (auto n : iters) points.push_back({static_cast<double>(n), {}});
  for (std::size_t s = 0; s < seeds; ++s) {
    const SeedContext ctx = prepare_seed(cfg, s);
    for (auto& p : points) {
      RunConfig rc = ctx.cfg;
      rc.finetune_iters = static_cast<std::size_t>(p.x);
      EvalReport r = run_config_on_seed(ctx, rc, false, &p.summary.audit_violations);
      p.summary.add(r, ctx.base_report);
      if (progress) {
        progress("seed " + std::to_string(s) + " iters " + std::to_string(rc.finetune_iters) + ": novel " +
                 percent(r.novel_miou));
      }
    }
  }
  for (auto& p : points) p.summary.finish();
  return points;
}

CsvTable sweep_csv(const std::string& x_name, const std::vector<SweepPoint>& points) {
  CsvTable t{{x_name, "base", "novel", "mean", "max_base_drop", "seeds"}, {}};
  for (const auto& p : points) {
    double worst = 0.0;
    for (double d : p.summary.base_drop) worst = std::max(worst, d);
    t.rows.push_back({fmt(p.x, "%g"), percent(p.summary.base), percent(p.summary.novel), percent(p.summary.mean),
                      percent(worst), std::to_string(p.summary.per_seed.size())});
  }
  return t;
}

TensorArchive checkpoint_archive(const PromptModel& model, const RunConfig& cfg, std::size_t iteration,
                                 const std::vector<std::pair<std::string, double>>& metrics) {
  TensorArchive ar = model.to_archive();
  ar.set("run_digest", config_digest(cfg));
  ar.set("iteration", std::to_string(iteration));
  for (const auto& [k, v] : metrics) ar.set("metric." + k, fmt(v, "%.17g"));
  return ar;
}

GradientSuiteResult gradient_suite(std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg;
  cfg.world.num_classes = 5;
  cfg.world.embed_dim = 8;
  cfg.world.height = 6;
  cfg.world.width = 6;
  cfg.world.pyramid_levels = 2;
  cfg.world.num_splits = 2;
  cfg.world.seed = seed;
  cfg.model.embed_dim = 8;
  cfg.model.layers = 2;
  cfg.model.heads = 2;
  cfg.seed = seed;
  cfg.num_queries = 1;
  const SyntheticWorld world = generate_world(cfg.world);
  const Episode ep = episode_for(world, cfg);
  const Split split = make_split(world.config, cfg.split);
  Rng rng(mix_seed({seed, kTagModel}));
  PromptModel base = PromptModel::init_base(cfg.model, split.base_ids, rng);
  const Scene& query = ep.queries.front();

  GradientSuiteResult out;
  const auto base_labels = channel_labels(query.labels, base);
  out.base = finite_diff_check([&] { return pixel_ce(base.forward(query.pyramid).probs, base_labels); },
                               base.trainable_parameters());

  PromptModel model = prepare_novel(base, ep, cfg);
  const Tensor old = base.forward(query.pyramid).probs.detach();
  const RegionPrior prior = estimate_prior(model.forward(query.pyramid).probs);
  out.transductive = finite_diff_check(
      [&] {
        SegOutput o = model.forward(query.pyramid);
        TransductiveTerms terms{support_loss(model, ep), pixel_entropy(o.probs), marginal_kl(o.probs, prior),
                                kd_loss(renormalize_base(o.probs, model.base_count()), old)};
        return transductive_loss(terms, cfg.trans);
      },
      model.trainable_parameters());
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace promptseg
