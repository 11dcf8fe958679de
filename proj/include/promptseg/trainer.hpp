#pragma once

// Base training, novel fine-tuning, per-image transductive tuning and the
// ablation/sweep drivers built on them.
//
// Benchmark seed s runs split (cfg.split + s) mod splits with run seed
// cfg.seed + s; the world itself is fixed by world.seed.

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "promptseg/config.hpp"
#include "promptseg/decoder.hpp"
#include "promptseg/episodes.hpp"
#include "promptseg/evaluation.hpp"
#include "promptseg/gradcheck.hpp"
#include "promptseg/objectives.hpp"

namespace promptseg {

// One optimizer iteration. Term values are losses before weighting; a term
// that is not part of the objective at that iteration has weight 0 and value 0.
struct LogRecord {
  std::string phase;  // base | finetune | transductive
  long query = -1;    // query index for per-image tuning
  std::size_t iteration = 0;
  double support_ce = 0.0, query_entropy = 0.0, marginal = 0.0, kd = 0.0;
  double w_ce = 0.0, w_entropy = 0.0, w_marginal = 0.0, w_kd = 0.0;
  double total = 0.0;
  double lr = 0.0;
  double alpha = 0.0, gamma = 0.0;
};

class TrainingLog {
 public:
  // Records are also appended to `stream` as JSON lines when one is set.
  void set_stream(std::ostream* stream) { stream_ = stream; }
  void add(const LogRecord& r);
  const std::vector<LogRecord>& records() const { return records_; }

  static std::string to_json(const LogRecord& r);
  static LogRecord from_json(const std::string& line);

 private:
  std::vector<LogRecord> records_;
  std::ostream* stream_ = nullptr;
};

struct DivergenceError : NumericError {
  DivergenceError(const std::string& what, PromptModel last_good, std::size_t iteration)
      : NumericError(what), last_good(std::move(last_good)), iteration(iteration) {}
  PromptModel last_good;
  std::size_t iteration;
};

RunConfig seeded(const RunConfig& cfg, std::uint64_t seed_index);

struct BaseRun {
  PromptModel model;
  std::vector<double> losses;
};

BaseRun train_base(const SyntheticWorld& world, const RunConfig& cfg, TrainingLog* log = nullptr);

Episode episode_for(const SyntheticWorld& world, const RunConfig& cfg);

// World ids -> model channels; unknown ids map to background.
std::vector<int> channel_labels(const LabelMap& labels, const PromptModel& model);
LabelMap predict(const PromptModel& model, const FeaturePyramid& pyramid);
std::vector<LabelMap> predict_all(const PromptModel& model, const std::vector<Scene>& scenes);

// Base model plus novel prompts, residual head weights and causal attention,
// with only the fine-tuning set trainable.
PromptModel prepare_novel(const PromptModel& base, const Episode& episode, const RunConfig& cfg);
std::function<bool(const std::string&)> finetune_trainable(const RunConfig& cfg);

// Cross-entropy over all support shots: masked pixels are the shot's novel
// channel, everything else background.
Tensor support_loss(const PromptModel& model, const Episode& episode);

// Names of parameters outside the trainable set whose bits changed.
std::vector<std::string> frozen_audit(const PromptModel& before, const PromptModel& after,
                                      const std::function<bool(const std::string&)>& trainable);

struct FinetuneRun {
  PromptModel model;
  std::vector<std::string> audit_violations;
};

FinetuneRun finetune_inductive(const PromptModel& base, const Episode& episode, const RunConfig& cfg,
                               TrainingLog* log = nullptr);

struct TransductiveRun {
  PromptModel model;
  SegOutput output;
  RegionPrior prior;
  std::vector<std::string> audit_violations;
};

TransductiveRun tune_transductive(const PromptModel& base, const Episode& episode, std::size_t query,
                                  const RunConfig& cfg, TrainingLog* log = nullptr);

// Every query tuned independently; the cross-entropy-only prefix is shared
// because it does not depend on the query.
std::vector<TransductiveRun> transduce_all(const PromptModel& base, const Episode& episode, const RunConfig& cfg,
                                           TrainingLog* log = nullptr);

EvalReport evaluate_model(const PromptModel& model, const Episode& episode, const EvalOptions& opts);
EvalReport evaluate_runs(const std::vector<TransductiveRun>& runs, const Episode& episode, const EvalOptions& opts);

// Base checkpoint, episode and base-checkpoint score for one benchmark seed.
struct SeedContext {
  RunConfig cfg;
  SyntheticWorld world;
  PromptModel base;
  Episode episode;
  EvalReport base_report;
};

SeedContext prepare_seed(const RunConfig& cfg, std::uint64_t seed_index);

struct AblationRow {
  int id;
  CausalMode causal;
  PromptInit init;
  bool transduction;
};

const std::vector<AblationRow>& ablation_rows();

struct RunSummary {
  double base = 0.0, novel = 0.0, mean = 0.0;
  std::vector<EvalReport> per_seed;
  std::vector<double> base_drop;  // base-checkpoint base mIoU minus this run's, per seed
  std::size_t audit_violations = 0;

  void add(const EvalReport& r, const EvalReport& base_ckpt);
  void finish();
};

// Runs one configuration on a prepared seed.
EvalReport run_config_on_seed(const SeedContext& ctx, const RunConfig& cfg, bool transduction,
                              std::size_t* audit_violations = nullptr);

using Progress = std::function<void(const std::string&)>;

std::vector<std::pair<AblationRow, RunSummary>> run_ablation_suite(const RunConfig& cfg, std::size_t seeds,
                                                                   const Progress& progress = {});
CsvTable ablation_csv(const std::vector<std::pair<AblationRow, RunSummary>>& rows);

struct SweepPoint {
  double x = 0.0;
  RunSummary summary;
};

std::vector<SweepPoint> sweep_shots(const RunConfig& cfg, const std::vector<std::size_t>& shots, std::size_t seeds,
                                    bool transduction, const Progress& progress = {});
// Transduction starting at each iteration of a fixed total budget.
std::vector<SweepPoint> sweep_start(const RunConfig& cfg, const std::vector<std::size_t>& starts,
                                    std::size_t total_iters, std::size_t seeds, const Progress& progress = {});
std::vector<SweepPoint> sweep_iters(const RunConfig& cfg, const std::vector<std::size_t>& iters, std::size_t seeds,
                                    const Progress& progress = {});
CsvTable sweep_csv(const std::string& x_name, const std::vector<SweepPoint>& points);

// Checkpoint archive with run digest, iteration and metric snapshot.
TensorArchive checkpoint_archive(const PromptModel& model, const RunConfig& cfg, std::size_t iteration,
                                 const std::vector<std::pair<std::string, double>>& metrics);

// Base-only scoring on fresh base-split scenes (novel pixels relabelled
// background), the distribution the base model was trained on.
EvalReport evaluate_base_heldout(const PromptModel& base, const SyntheticWorld& world, const RunConfig& cfg,
                                 std::size_t count = 64);

// Finite-difference audit on a B=3, N=2, C=8, L=2, 6x6 fixture: the base
// cross-entropy path over every base parameter and the transductive
// objective over the fine-tuning set.
struct GradientSuiteResult {
  GradCheckResult base;
  GradCheckResult transductive;
  double seconds = 0.0;
};

GradientSuiteResult gradient_suite(std::uint64_t seed = 0);

}  // namespace promptseg
