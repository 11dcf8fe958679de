#pragma once

// GFSS metrics. mIoU is computed from one dataset-global confusion matrix,
// not averaged per image. A class absent from both prediction and ground
// truth has no IoU and is left out of every average.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "promptseg/episodes.hpp"

namespace promptseg {

// Counts indexed [ground truth][prediction] over a fixed list of class ids.
class Confusion {
 public:
  explicit Confusion(std::vector<int> class_ids);

  void add(const LabelMap& pred, const LabelMap& gt);
  std::uint64_t at(int gt_id, int pred_id) const;
  std::uint64_t total() const;
  std::uint64_t row_sum(int gt_id) const;
  std::uint64_t col_sum(int pred_id) const;
  // Each row divided by its ground-truth count; empty rows stay zero.
  std::vector<std::vector<double>> row_normalized() const;
  std::optional<double> iou(int class_id) const;

  const std::vector<int>& class_ids() const { return ids_; }
  std::size_t index_of(int class_id) const;

 private:
  std::vector<int> ids_;
  std::vector<std::uint64_t> counts_;
};

// IoU of one class on one image pair; nullopt when the class is in neither.
std::optional<double> iou(const LabelMap& pred, const LabelMap& gt, int class_id);

double gfss_mean(double base_miou, double novel_miou);

struct EvalOptions {
  bool background_in_base = true;
};

struct BucketScore {
  double miou = 0.0;
  std::size_t objects = 0;
};

struct EvalReport {
  std::vector<int> base_ids;
  std::vector<int> novel_ids;
  std::vector<std::pair<int, std::optional<double>>> per_class_iou;
  double base_miou = 0.0;
  double novel_miou = 0.0;
  double mean_miou = 0.0;
  Confusion confusion{{}};
  BucketScore small, medium, large;

  std::optional<double> class_iou(int id) const;
  const BucketScore& bucket(SizeBucket b) const;
  // Confusion mass with a novel ground truth predicted as a base class, as a
  // fraction of novel ground-truth pixels.
  double novel_to_base_confusion() const;
};

// Mean of the defined IoUs among `ids`; 0 when none is defined.
double mean_iou(const Confusion& c, const std::vector<int>& ids);

// Per-object IoU |P_c & O| / |O u (P_c \ G_c)| pooled by class within each
// size bucket, then averaged over classes.
void score_size_buckets(EvalReport& report, const std::vector<LabelMap>& preds, const std::vector<Scene>& scenes);

EvalReport evaluate(const std::vector<LabelMap>& preds, const std::vector<Scene>& queries,
                    const std::vector<int>& base_ids, const std::vector<int>& novel_ids,
                    const EvalOptions& options = {});

// Percent with two decimals, e.g. 0.3478 -> "34.78".
std::string percent(double fraction);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string str() const;
};

CsvTable confusion_csv(const Confusion& c, bool normalized);
CsvTable class_iou_csv(const EvalReport& r);
CsvTable size_bucket_csv(const std::vector<std::pair<std::string, EvalReport>>& runs);

}  // namespace promptseg
