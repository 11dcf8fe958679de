// Command-line driver: training, fine-tuning, transduction, sweeps and audits.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "promptseg/trainer.hpp"

using namespace promptseg;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "key=value config file");
  cmd->add_option("-s,--set", c.overrides, "override, key=value (repeatable)");
  cmd->add_flag("-q,--quiet", c.quiet, "no progress on stderr");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config_file(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

Progress progress_for(const Common& c) {
  if (c.quiet) return {};
  return [](const std::string& msg) { std::cerr << msg << std::endl; };
}

// Owns the JSONL stream when --log is given.
struct LogSink {
  std::ofstream file;
  TrainingLog log;

  TrainingLog* open(const std::string& path) {
    if (path.empty()) return nullptr;
    file.open(path);
    if (!file) throw ConfigError("cannot write log " + path);
    log.set_stream(&file);
    return &log;
  }
};

void emit(const CsvTable& t, const std::string& path) {
  if (path.empty()) {
    std::cout << t.str();
    return;
  }
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path);
  os << t.str();
}

CsvTable summary_csv(const EvalReport& r) {
  return {{"base", "novel", "mean", "novel_to_base_confusion"},
          {{percent(r.base_miou), percent(r.novel_miou), percent(r.mean_miou),
            std::to_string(r.novel_to_base_confusion())}}};
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<std::size_t>(std::stoul(item)));
  if (out.empty()) throw ConfigError("empty list '" + s + "'");
  return out;
}

PromptModel load_model(const std::string& path) { return PromptModel::from_archive(TensorArchive::load(path)); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot segmentation with visual prompts on synthetic feature worlds"};
  app.require_subcommand(1);

  Common common;
  std::string out_path, log_path, base_path, model_path, csv_path, episode_path;
  std::size_t seeds = 5, total_iters = 100, query = 0;
  std::string shots_list = "1,5", starts_list = "0,20,40,60,80,100", iters_list = "0,25,50,100";
  bool transductive = false, all_queries = true;

  auto* train_base_cmd = app.add_subcommand("train-base", "train the base model and save a checkpoint");
  add_common(train_base_cmd, common);
  train_base_cmd->add_option("-o,--out", out_path, "checkpoint path")->required();
  train_base_cmd->add_option("--log", log_path, "JSONL loss log");

  auto* finetune_cmd = app.add_subcommand("finetune", "inductive novel-class fine-tuning");
  add_common(finetune_cmd, common);
  finetune_cmd->add_option("-b,--base", base_path, "base checkpoint")->required();
  finetune_cmd->add_option("-o,--out", out_path, "fine-tuned checkpoint path");
  finetune_cmd->add_option("--log", log_path, "JSONL loss log");
  finetune_cmd->add_option("--csv", csv_path, "summary CSV path (stdout by default)");

  auto* transduce_cmd = app.add_subcommand("transduce", "per-query transductive fine-tuning");
  add_common(transduce_cmd, common);
  transduce_cmd->add_option("-b,--base", base_path, "base checkpoint")->required();
  transduce_cmd->add_option("--query", query, "single query index")->excludes(
      transduce_cmd->add_flag("--all", all_queries, "every query (default)"));
  transduce_cmd->add_option("--log", log_path, "JSONL loss log");
  transduce_cmd->add_option("--csv", csv_path, "summary CSV path (stdout by default)");

  auto* ablate_cmd = app.add_subcommand("ablate", "seven-row ablation over seeds");
  add_common(ablate_cmd, common);
  ablate_cmd->add_option("--seeds", seeds, "number of seeds");
  ablate_cmd->add_option("--csv", csv_path, "output CSV");

  auto* shots_cmd = app.add_subcommand("sweep-shots", "novel and base mIoU against the shot count");
  add_common(shots_cmd, common);
  shots_cmd->add_option("--shots", shots_list, "comma-separated shot counts");
  shots_cmd->add_option("--seeds", seeds, "number of seeds");
  shots_cmd->add_flag("--transductive", transductive, "use transductive fine-tuning");
  shots_cmd->add_option("--csv", csv_path, "output CSV");

  auto* start_cmd = app.add_subcommand("sweep-start", "mean mIoU against the transduction start iteration");
  add_common(start_cmd, common);
  start_cmd->add_option("--starts", starts_list, "comma-separated start iterations");
  start_cmd->add_option("--total", total_iters, "total fine-tuning iterations");
  start_cmd->add_option("--seeds", seeds, "number of seeds");
  start_cmd->add_option("--csv", csv_path, "output CSV");

  auto* iters_cmd = app.add_subcommand("sweep-iters", "novel mIoU against the inductive fine-tuning length");
  add_common(iters_cmd, common);
  iters_cmd->add_option("--iters", iters_list, "comma-separated iteration counts");
  iters_cmd->add_option("--seeds", seeds, "number of seeds");
  iters_cmd->add_option("--csv", csv_path, "output CSV");

  std::uint64_t grad_seed = 0;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference audit of the base and transductive paths");
  grad_cmd->add_option("--seed", grad_seed, "fixture seed");

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on the configured episode");
  add_common(eval_cmd, common);
  eval_cmd->add_option("-m,--model", model_path, "checkpoint")->required();
  std::string table = "summary";
  eval_cmd->add_option("--table", table, "summary, classes, confusion or buckets")
      ->check(CLI::IsMember({"summary", "classes", "confusion", "buckets"}));
  eval_cmd->add_option("--csv", csv_path, "output CSV");

  auto* dump_cmd = app.add_subcommand("dump-episode", "write the configured episode as an archive");
  add_common(dump_cmd, common);
  dump_cmd->add_option("-o,--out", episode_path, "episode archive path")->required();

  auto* describe_cmd = app.add_subcommand("describe-episode", "print a summary of an episode archive");
  describe_cmd->add_option("episode", episode_path, "episode archive")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_base_cmd) {
      RunConfig cfg = resolve(common);
      LogSink sink;
      const SyntheticWorld world = generate_world(cfg.world);
      BaseRun run = train_base(world, cfg, sink.open(log_path));
      const EvalReport r = evaluate_model(run.model, episode_for(world, cfg), cfg.eval);
      checkpoint_archive(run.model, cfg, cfg.base_iters, {{"base_miou", r.base_miou}}).save(out_path);
      if (!common.quiet) std::cerr << "final loss " << run.losses.back() << ", base mIoU " << percent(r.base_miou) << '\n';
    } else if (*finetune_cmd) {
      RunConfig cfg = resolve(common);
      LogSink sink;
      const SyntheticWorld world = generate_world(cfg.world);
      const Episode ep = episode_for(world, cfg);
      FinetuneRun run = finetune_inductive(load_model(base_path), ep, cfg, sink.open(log_path));
      for (const auto& name : run.audit_violations) std::cerr << "frozen parameter changed: " << name << '\n';
      const EvalReport r = evaluate_model(run.model, ep, cfg.eval);
      if (!out_path.empty()) {
        checkpoint_archive(run.model, cfg, cfg.finetune_iters,
                           {{"base_miou", r.base_miou}, {"novel_miou", r.novel_miou}, {"mean_miou", r.mean_miou}})
            .save(out_path);
      }
      emit(summary_csv(r), csv_path);
      return run.audit_violations.empty() ? 0 : 2;
    } else if (*transduce_cmd) {
      RunConfig cfg = resolve(common);
      LogSink sink;
      const SyntheticWorld world = generate_world(cfg.world);
      Episode ep = episode_for(world, cfg);
      const PromptModel base = load_model(base_path);
      std::vector<TransductiveRun> runs;
      if (transduce_cmd->count("--query")) {
        runs.push_back(tune_transductive(base, ep, query, cfg, sink.open(log_path)));
        ep.queries = {ep.queries.at(query)};
      } else {
        runs = transduce_all(base, ep, cfg, sink.open(log_path));
      }
      emit(summary_csv(evaluate_runs(runs, ep, cfg.eval)), csv_path);
    } else if (*ablate_cmd) {
      emit(ablation_csv(run_ablation_suite(resolve(common), seeds, progress_for(common))), csv_path);
    } else if (*shots_cmd) {
      emit(sweep_csv("shots", sweep_shots(resolve(common), parse_list(shots_list), seeds, transductive,
                                          progress_for(common))),
           csv_path);
    } else if (*start_cmd) {
      emit(sweep_csv("start", sweep_start(resolve(common), parse_list(starts_list), total_iters, seeds,
                                          progress_for(common))),
           csv_path);
    } else if (*iters_cmd) {
      emit(sweep_csv("iters", sweep_iters(resolve(common), parse_list(iters_list), seeds, progress_for(common))),
           csv_path);
    } else if (*grad_cmd) {
      const GradientSuiteResult g = gradient_suite(grad_seed);
      CsvTable t{{"path", "max_rel_error", "worst_parameter", "entries", "seconds"}, {}};
      for (const auto& [name, res] : {std::pair{"base", g.base}, std::pair{"transductive", g.transductive}}) {
        char err[32];
        std::snprintf(err, sizeof err, "%.3e", res.max_rel_error);
        t.rows.push_back({name, err, res.worst_param, std::to_string(res.entries_checked), std::to_string(g.seconds)});
      }
      std::cout << t.str();
      return g.base.max_rel_error < 1e-4 && g.transductive.max_rel_error < 1e-4 ? 0 : 1;
    } else if (*eval_cmd) {
      RunConfig cfg = resolve(common);
      const SyntheticWorld world = generate_world(cfg.world);
      const Episode ep = episode_for(world, cfg);
      const PromptModel model = load_model(model_path);
      const EvalReport r = evaluate_model(model, ep, cfg.eval);
      if (table == "classes") emit(class_iou_csv(r), csv_path);
      else if (table == "confusion") emit(confusion_csv(r.confusion, true), csv_path);
      else if (table == "buckets") emit(size_bucket_csv({{model_path, r}}), csv_path);
      else emit(summary_csv(r), csv_path);
    } else if (*dump_cmd) {
      RunConfig cfg = resolve(common);
      episode_to_archive(episode_for(generate_world(cfg.world), cfg)).save(episode_path);
    } else if (*describe_cmd) {
      std::cout << describe_episode(episode_from_archive(TensorArchive::load(episode_path)));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
