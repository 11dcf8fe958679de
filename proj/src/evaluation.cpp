#include "promptseg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace promptseg {

Confusion::Confusion(std::vector<int> class_ids) : ids_(std::move(class_ids)), counts_(ids_.size() * ids_.size(), 0) {}

std::size_t Confusion::index_of(int class_id) const {
  auto it = std::find(ids_.begin(), ids_.end(), class_id);
  if (it == ids_.end()) throw DimensionError("class id " + std::to_string(class_id) + " is not tracked");
  return static_cast<std::size_t>(it - ids_.begin());
}

void Confusion::add(const LabelMap& pred, const LabelMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw DimensionError("prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                         " vs ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  const std::size_t k = ids_.size();
  for (std::size_t i = 0; i < gt.size(); ++i) counts_[index_of(gt.ids[i]) * k + index_of(pred.ids[i])]++;
}

std::uint64_t Confusion::at(int gt_id, int pred_id) const {
  return counts_[index_of(gt_id) * ids_.size() + index_of(pred_id)];
}

std::uint64_t Confusion::total() const {
  std::uint64_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

std::uint64_t Confusion::row_sum(int gt_id) const {
  const std::size_t r = index_of(gt_id), k = ids_.size();
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < k; ++j) s += counts_[r * k + j];
  return s;
}

std::uint64_t Confusion::col_sum(int pred_id) const {
  const std::size_t c = index_of(pred_id), k = ids_.size();
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < k; ++i) s += counts_[i * k + c];
  return s;
}

std::vector<std::vector<double>> Confusion::row_normalized() const {
  const std::size_t k = ids_.size();
  std::vector<std::vector<double>> out(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < k; ++i) {
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < k; ++j) s += counts_[i * k + j];
    if (s == 0) continue;
    for (std::size_t j = 0; j < k; ++j) out[i][j] = static_cast<double>(counts_[i * k + j]) / static_cast<double>(s);
  }
  return out;
}

std::optional<double> Confusion::iou(int class_id) const {
  const std::uint64_t tp = at(class_id, class_id);
  const std::uint64_t uni = row_sum(class_id) + col_sum(class_id) - tp;
  if (uni == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(uni);
}

std::optional<double> iou(const LabelMap& pred, const LabelMap& gt, int class_id) {
  if (pred.size() != gt.size()) throw DimensionError("iou: label maps differ in size");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = pred.ids[i] == class_id, g = gt.ids[i] == class_id;
    inter += p && g;
    uni += p || g;
  }
  if (uni == 0) return std::nullopt;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double gfss_mean(double base_miou, double novel_miou) { return (base_miou + novel_miou) / 2.0; }

double mean_iou(const Confusion& c, const std::vector<int>& ids) {
  double s = 0.0;
  std::size_t n = 0;
  for (int id : ids) {
    if (auto v = c.iou(id)) {
      s += *v;
      ++n;
    }
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

std::optional<double> EvalReport::class_iou(int id) const {
  for (const auto& [cid, v] : per_class_iou)
    if (cid == id) return v;
  throw DimensionError("class " + std::to_string(id) + " not in report");
}

const BucketScore& EvalReport::bucket(SizeBucket b) const {
  return b == SizeBucket::small ? small : b == SizeBucket::medium ? medium : large;
}

double EvalReport::novel_to_base_confusion() const {
  std::uint64_t mass = 0, total = 0;
  for (int n : novel_ids) {
    total += confusion.row_sum(n);
    for (int b : base_ids)
      if (b != 0) mass += confusion.at(n, b);
  }
  return total ? static_cast<double>(mass) / static_cast<double>(total) : 0.0;
}

void score_size_buckets(EvalReport& report, const std::vector<LabelMap>& preds, const std::vector<Scene>& scenes) {
  // bucket -> class -> (intersection, union)
  std::map<SizeBucket, std::map<int, std::pair<double, double>>> pooled;
  std::map<SizeBucket, std::size_t> counts;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& gt = scenes[i].labels;
    const auto& pred = preds[i];
    const double total = static_cast<double>(gt.size());
    for (const auto& o : scenes[i].objects) {
      const int c = o.class_id;
      std::size_t inter = 0, area = 0, false_pos = 0;
      for (std::size_t y = 0; y < gt.height; ++y)
        for (std::size_t x = 0; x < gt.width; ++x) {
          const bool inside = y >= o.top && y < o.top + o.height && x >= o.left && x < o.left + o.width;
          const bool p = pred.at(y, x) == c;
          if (inside) {
            ++area;
            inter += p;
          } else if (p && gt.at(y, x) != c) {
            ++false_pos;
          }
        }
      const SizeBucket b = size_bucket_of(static_cast<double>(area) / total);
      auto& cell = pooled[b][c];
      cell.first += static_cast<double>(inter);
      cell.second += static_cast<double>(area + false_pos);
      counts[b]++;
    }
  }
  for (SizeBucket b : {SizeBucket::small, SizeBucket::medium, SizeBucket::large}) {
    BucketScore s;
    s.objects = counts[b];
    double sum = 0.0;
    for (const auto& [c, iu] : pooled[b]) sum += iu.first / iu.second;
    if (!pooled[b].empty()) s.miou = sum / static_cast<double>(pooled[b].size());
    (b == SizeBucket::small ? report.small : b == SizeBucket::medium ? report.medium : report.large) = s;
  }
}

EvalReport evaluate(const std::vector<LabelMap>& preds, const std::vector<Scene>& queries,
                    const std::vector<int>& base_ids, const std::vector<int>& novel_ids,
                    const EvalOptions& options) {
  if (preds.size() != queries.size()) throw DimensionError("evaluate: prediction and query counts differ");
  std::vector<int> all = base_ids;
  all.insert(all.end(), novel_ids.begin(), novel_ids.end());
  EvalReport r;
  r.base_ids = base_ids;
  r.novel_ids = novel_ids;
  r.confusion = Confusion(all);
  for (std::size_t i = 0; i < preds.size(); ++i) r.confusion.add(preds[i], queries[i].labels);
  for (int id : all) r.per_class_iou.emplace_back(id, r.confusion.iou(id));
  std::vector<int> scored_base;
  for (int id : base_ids)
    if (options.background_in_base || id != 0) scored_base.push_back(id);
  r.base_miou = mean_iou(r.confusion, scored_base);
  r.novel_miou = mean_iou(r.confusion, novel_ids);
  r.mean_miou = gfss_mean(r.base_miou, r.novel_miou);
  score_size_buckets(r, preds, queries);
  return r;
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
  return buf;
}

std::string CsvTable::str() const {
  auto line = [](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) s += ',';
      const bool quote = cells[i].find_first_of(",\"\n") != std::string::npos;
      if (!quote) {
        s += cells[i];
        continue;
      }
      s += '"';
      for (char ch : cells[i]) s += ch == '"' ? std::string("\"\"") : std::string(1, ch);
      s += '"';
    }
    return s + "\n";
  };
  std::string out = line(header);
  for (const auto& r : rows) out += line(r);
  return out;
}

CsvTable confusion_csv(const Confusion& c, bool normalized) {
  CsvTable t;
  t.header.push_back("gt\\pred");
  for (int id : c.class_ids()) t.header.push_back(std::to_string(id));
  const auto norm = c.row_normalized();
  for (std::size_t i = 0; i < c.class_ids().size(); ++i) {
    std::vector<std::string> row{std::to_string(c.class_ids()[i])};
    for (std::size_t j = 0; j < c.class_ids().size(); ++j) {
      if (normalized) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", norm[i][j]);
        row.push_back(buf);
      } else {
        row.push_back(std::to_string(c.at(c.class_ids()[i], c.class_ids()[j])));
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable class_iou_csv(const EvalReport& r) {
  CsvTable t{{"class", "group", "iou"}, {}};
  for (const auto& [id, v] : r.per_class_iou) {
    const bool base = std::find(r.base_ids.begin(), r.base_ids.end(), id) != r.base_ids.end();
    t.rows.push_back({std::to_string(id), base ? "base" : "novel", v ? percent(*v) : "n/a"});
  }
  return t;
}

CsvTable size_bucket_csv(const std::vector<std::pair<std::string, EvalReport>>& runs) {
  CsvTable t{{"run", "small", "medium", "large", "small_objects", "medium_objects", "large_objects"}, {}};
  for (const auto& [name, r] : runs) {
    t.rows.push_back({name, percent(r.small.miou), percent(r.medium.miou), percent(r.large.miou),
                      std::to_string(r.small.objects), std::to_string(r.medium.objects),
                      std::to_string(r.large.objects)});
  }
  return t;
}

}  // namespace promptseg
