#pragma once

// Synthetic generalized few-shot segmentation data.
//
// A world owns one unit-norm prototype per class (id 0 is background). A
// scene places non-overlapping rectangles of foreground classes on a
// background grid; each pixel feature is its class prototype plus isotropic
// Gaussian noise, and coarser pyramid levels are 2x2 average pools of the
// finest one. Splits rotate which foreground ids are novel.

#include <cstdint>
#include <string>
#include <vector>

#include "promptseg/archive.hpp"
#include "promptseg/decoder.hpp"

namespace promptseg {

struct EmptyMaskError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

struct WorldConfig {
  std::size_t num_classes = 8;  // including background
  std::size_t embed_dim = 32;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t pyramid_levels = 3;
  double noise_sigma = 0.2;
  double cos_ceiling = 0.6;
  std::size_t novel_per_split = 2;
  std::size_t num_splits = 4;
  // Support scenes hold the target plus 0..support_max_extras other foreground objects.
  std::size_t support_max_extras = 2;
  std::uint64_t seed = 0;
};

struct SyntheticWorld {
  WorldConfig config;
  Tensor prototypes;  // [num_classes x C], unit rows

  double max_abs_cosine() const;
};

SyntheticWorld generate_world(const WorldConfig& cfg);

struct Split {
  int id = 0;
  std::vector<int> base_ids;   // sorted, starts with background 0
  std::vector<int> novel_ids;  // sorted
};

Split make_split(const WorldConfig& cfg, int split_id);

enum class SizeBucket { small, medium, large };

// small < 10%, medium in [10%, 30%], large > 30% of the image.
SizeBucket size_bucket_of(double area_fraction);
std::string to_string(SizeBucket b);

struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<int> ids;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, int fill = 0) : height(h), width(w), ids(h * w, fill) {}
  int at(std::size_t y, std::size_t x) const { return ids[y * width + x]; }
  int& at(std::size_t y, std::size_t x) { return ids[y * width + x]; }
  std::size_t size() const { return ids.size(); }
  std::size_t count(int id) const;
};

struct SceneObject {
  int class_id = 0;
  std::size_t top = 0, left = 0, height = 0, width = 0;

  std::size_t area() const { return height * width; }
};

struct Scene {
  FeaturePyramid pyramid;
  LabelMap labels;
  std::vector<SceneObject> objects;
};

struct ObjectRequest {
  int class_id = 0;
  SizeBucket bucket = SizeBucket::medium;
};

// Features for a label map; the noise stream is seeded by `noise_seed`.
FeaturePyramid render_features(const SyntheticWorld& world, const LabelMap& labels, std::uint64_t noise_seed);
FeaturePyramid build_pyramid(const Tensor& finest, std::size_t height, std::size_t width, std::size_t levels);

// Places the requested objects without overlap; requests that cannot be placed are dropped
// (the first request is always placed).
Scene render_scene(const SyntheticWorld& world, const std::vector<ObjectRequest>& requests, std::uint64_t seed);
// 1-4 random objects drawn from `class_pool`.
Scene render_random_scene(const SyntheticWorld& world, const std::vector<int>& class_pool, std::uint64_t seed);

struct TrainItem {
  FeaturePyramid pyramid;
  LabelMap labels;  // novel ids rewritten to background
};

std::vector<TrainItem> build_base_trainset(const SyntheticWorld& world, const Split& split, std::size_t count,
                                           std::uint64_t seed);

struct SupportShot {
  FeaturePyramid pyramid;
  LabelMap mask;    // 1 on the novel object, 0 elsewhere
  LabelMap labels;  // full world ids, for audits
};

struct SupportSet {
  int class_id = 0;
  std::vector<SupportShot> shots;
};

struct SupportResult {
  std::vector<SupportSet> per_class;  // ordered like split.novel_ids
  std::size_t rejected = 0;           // candidates dropped for holding a second novel class
};

SupportResult build_support(const SyntheticWorld& world, const Split& split, std::size_t shots, std::uint64_t seed);

// Masked average pooling at the finest level, one row per support class:
// V_n = 1/K sum_k (sum_xy M F) / (sum_xy M).
Tensor masked_average_pool(const std::vector<SupportSet>& support);

struct Episode {
  int split_id = 0;
  std::vector<int> base_ids;
  std::vector<int> novel_ids;
  std::size_t shots = 0;
  std::uint64_t world_seed = 0;
  std::uint64_t episode_seed = 0;
  std::size_t rejected_candidates = 0;
  std::vector<SupportSet> support;
  std::vector<Scene> queries;
};

Episode make_episode(const SyntheticWorld& world, int split_id, std::size_t shots, std::uint64_t episode_seed,
                     std::size_t num_queries);

TensorArchive episode_to_archive(const Episode& ep);
Episode episode_from_archive(const TensorArchive& ar);
std::string describe_episode(const Episode& ep);

}  // namespace promptseg
