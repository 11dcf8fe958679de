#include "promptseg/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace promptseg {

namespace {

constexpr std::uint64_t kTagTrain = 0x7261696e;
constexpr std::uint64_t kTagSupport = 0x73757070;
constexpr std::uint64_t kTagQuery = 0x71756572;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::vector<double> unit_normal(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> dist;
  std::vector<double> v(dim);
  for (auto& x : v) x = dist(rng);
  return v;
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

bool normalize(std::vector<double>& v) {
  const double n = std::sqrt(dot(v.data(), v.data(), v.size()));
  if (n < 1e-8) return false;
  for (auto& x : v) x /= n;
  return true;
}

// Rectangle extents for a bucket, rejection-sampled with aspect ratio <= 4.
bool sample_extent(SizeBucket bucket, std::size_t grid_h, std::size_t grid_w, Rng& rng, std::size_t& h,
                   std::size_t& w) {
  const double total = static_cast<double>(grid_h * grid_w);
  std::uniform_int_distribution<std::size_t> dh(1, grid_h), dw(1, grid_w);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    h = dh(rng);
    w = dw(rng);
    if (std::max(h, w) > 4 * std::min(h, w)) continue;
    const double frac = static_cast<double>(h * w) / total;
    if (size_bucket_of(frac) != bucket) continue;
    if (bucket == SizeBucket::large && frac > 0.45) continue;
    if (bucket == SizeBucket::small && frac < 0.02 && h * w < 2) continue;
    return true;
  }
  return false;
}

bool place(const std::vector<SceneObject>& placed, SceneObject& obj, std::size_t grid_h, std::size_t grid_w,
           Rng& rng) {
  if (obj.height > grid_h || obj.width > grid_w) return false;
  std::uniform_int_distribution<std::size_t> dy(0, grid_h - obj.height), dx(0, grid_w - obj.width);
  for (int attempt = 0; attempt < 100; ++attempt) {
    obj.top = dy(rng);
    obj.left = dx(rng);
    bool clash = std::any_of(placed.begin(), placed.end(), [&](const SceneObject& o) {
      return obj.top < o.top + o.height && o.top < obj.top + obj.height && obj.left < o.left + o.width &&
             o.left < obj.left + obj.width;
    });
    if (!clash) return true;
  }
  return false;
}

SizeBucket random_bucket(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng);
  if (r < 0.35) return SizeBucket::small;
  if (r < 0.80) return SizeBucket::medium;
  return SizeBucket::large;
}

std::string join_ids(const std::vector<int>& ids) {
  std::ostringstream os;
  for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? "," : "") << ids[i];
  return os.str();
}

std::vector<int> split_ids(const std::string& text) {
  std::vector<int> ids;
  std::istringstream is(text);
  for (std::string tok; std::getline(is, tok, ',');)
    if (!tok.empty()) ids.push_back(std::stoi(tok));
  return ids;
}

Tensor label_tensor(const LabelMap& m) {
  std::vector<double> v(m.ids.begin(), m.ids.end());
  return Tensor::from({m.height, m.width}, std::move(v));
}

LabelMap label_from_tensor(const Tensor& t) {
  LabelMap m(t.shape()[0], t.shape()[1]);
  for (std::size_t i = 0; i < m.size(); ++i) m.ids[i] = static_cast<int>(std::lround(t[i]));
  return m;
}

void put_pyramid(TensorArchive& ar, const std::string& prefix, const FeaturePyramid& p) {
  for (std::size_t l = 0; l < p.size(); ++l) ar.put(prefix + ".level" + std::to_string(l), p.levels[l]);
}

FeaturePyramid get_pyramid(const TensorArchive& ar, const std::string& prefix, const std::vector<int>& heights,
                           const std::vector<int>& widths) {
  FeaturePyramid p;
  for (std::size_t l = 0; l < heights.size(); ++l) {
    p.levels.push_back(ar.tensor(prefix + ".level" + std::to_string(l)));
    p.heights.push_back(static_cast<std::size_t>(heights[l]));
    p.widths.push_back(static_cast<std::size_t>(widths[l]));
  }
  p.validate();
  return p;
}

}  // namespace

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x243f6a8885a308d3ull;
  for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

double SyntheticWorld::max_abs_cosine() const {
  const std::size_t k = prototypes.rows(), c = prototypes.cols();
  const double* p = prototypes.data().data();
  double worst = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) worst = std::max(worst, std::abs(dot(p + i * c, p + j * c, c)));
  return worst;
}

SyntheticWorld generate_world(const WorldConfig& cfg) {
  const std::size_t k = cfg.num_classes, c = cfg.embed_dim;
  if (k < 2) throw ConfigError("a world needs background and at least one foreground class");
  if (cfg.cos_ceiling < 0.0 || cfg.cos_ceiling >= 1.0) throw ConfigError("cosine ceiling must lie in [0, 1)");
  if (cfg.cos_ceiling == 0.0 && k > c) {
    throw ConfigError("cannot place " + std::to_string(k) + " mutually orthogonal prototypes in dimension " +
                      std::to_string(c));
  }
  if (cfg.novel_per_split == 0 || cfg.novel_per_split >= k - 1) {
    throw ConfigError("novel classes per split must leave at least one base foreground class");
  }
  Rng rng(mix_seed({cfg.seed, 0x70726f74}));
  const double target = cfg.cos_ceiling * 0.9;
  const double tol = 1e-13;
  std::vector<double> protos;
  protos.reserve(k * c);
  for (std::size_t i = 0; i < k; ++i) {
    bool accepted = false;
    for (int attempt = 0; attempt < 64 && !accepted; ++attempt) {
      auto u = unit_normal(c, rng);
      if (!normalize(u)) continue;
      // Push the candidate towards the ceiling against each earlier prototype until none is violated.
      for (int sweep = 0; sweep < 200; ++sweep) {
        bool violated = false;
        for (std::size_t j = 0; j < i; ++j) {
          const double* pj = protos.data() + j * c;
          const double cs = dot(u.data(), pj, c);
          if (std::abs(cs) > cfg.cos_ceiling + tol || (cfg.cos_ceiling == 0.0 && std::abs(cs) > tol)) {
            const double keep = cfg.cos_ceiling == 0.0 ? 0.0 : std::copysign(target, cs);
            for (std::size_t d = 0; d < c; ++d) u[d] -= (cs - keep) * pj[d];
            violated = true;
          }
        }
        if (!normalize(u)) break;
        if (!violated) {
          accepted = true;
          break;
        }
      }
      if (accepted) protos.insert(protos.end(), u.begin(), u.end());
    }
    if (!accepted) {
      throw ConfigError("cosine ceiling " + std::to_string(cfg.cos_ceiling) + " is infeasible for " +
                        std::to_string(k) + " prototypes in dimension " + std::to_string(c));
    }
  }
  SyntheticWorld w;
  w.config = cfg;
  w.prototypes = Tensor::from({k, c}, std::move(protos));
  return w;
}

Split make_split(const WorldConfig& cfg, int split_id) {
  if (split_id < 0 || static_cast<std::size_t>(split_id) >= cfg.num_splits) {
    throw ConfigError("split " + std::to_string(split_id) + " out of range");
  }
  const std::size_t fg = cfg.num_classes - 1;
  Split s;
  s.id = split_id;
  for (std::size_t j = 0; j < cfg.novel_per_split; ++j) {
    s.novel_ids.push_back(1 + static_cast<int>((split_id * cfg.novel_per_split + j) % fg));
  }
  std::sort(s.novel_ids.begin(), s.novel_ids.end());
  s.novel_ids.erase(std::unique(s.novel_ids.begin(), s.novel_ids.end()), s.novel_ids.end());
  for (int id = 0; id < static_cast<int>(cfg.num_classes); ++id) {
    if (!std::binary_search(s.novel_ids.begin(), s.novel_ids.end(), id)) s.base_ids.push_back(id);
  }
  return s;
}

SizeBucket size_bucket_of(double area_fraction) {
  if (area_fraction > 0.30) return SizeBucket::large;
  if (area_fraction >= 0.10) return SizeBucket::medium;
  return SizeBucket::small;
}

std::string to_string(SizeBucket b) {
  switch (b) {
    case SizeBucket::small: return "small";
    case SizeBucket::medium: return "medium";
    case SizeBucket::large: return "large";
  }
  return "?";
}

std::size_t LabelMap::count(int id) const { return static_cast<std::size_t>(std::count(ids.begin(), ids.end(), id)); }

FeaturePyramid build_pyramid(const Tensor& finest, std::size_t height, std::size_t width, std::size_t levels) {
  if (levels == 0) throw ConfigError("pyramid needs at least one level");
  if (finest.rows() != height * width) throw DimensionError("finest level does not match its grid");
  const std::size_t factor = std::size_t{1} << (levels - 1);
  if (height % factor || width % factor) {
    throw ConfigError("grid " + std::to_string(height) + "x" + std::to_string(width) + " cannot be pooled " +
                      std::to_string(levels - 1) + " times");
  }
  const std::size_t c = finest.cols();
  std::vector<Tensor> fine_to_coarse{finest};
  std::vector<std::size_t> hs{height}, ws{width};
  for (std::size_t l = 1; l < levels; ++l) {
    const Tensor& src = fine_to_coarse.back();
    const std::size_t sh = hs.back(), sw = ws.back();
    const std::size_t h = sh / 2, w = sw / 2;
    std::vector<double> out(h * w * c, 0.0);
    auto d = src.data();
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const double* child = d.data() + ((2 * y + dy) * sw + (2 * x + dx)) * c;
            double* dst = out.data() + (y * w + x) * c;
            for (std::size_t k = 0; k < c; ++k) dst[k] += 0.25 * child[k];
          }
    fine_to_coarse.push_back(Tensor::from({h * w, c}, std::move(out)));
    hs.push_back(h);
    ws.push_back(w);
  }
  FeaturePyramid p;
  for (std::size_t l = levels; l-- > 0;) {
    p.levels.push_back(fine_to_coarse[l]);
    p.heights.push_back(hs[l]);
    p.widths.push_back(ws[l]);
  }
  return p;
}

FeaturePyramid render_features(const SyntheticWorld& world, const LabelMap& labels, std::uint64_t noise_seed) {
  const std::size_t c = world.config.embed_dim;
  Rng rng(mix_seed({world.config.seed, noise_seed, 0x6e6f6973}));
  std::normal_distribution<double> noise(0.0, 1.0);
  const double sigma = world.config.noise_sigma;
  std::vector<double> fine(labels.size() * c);
  auto protos = world.prototypes.data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int id = labels.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= world.config.num_classes) {
      throw ConfigError("label id " + std::to_string(id) + " is not a world class");
    }
    for (std::size_t k = 0; k < c; ++k) {
      const double n = sigma > 0.0 ? sigma * noise(rng) : 0.0;
      fine[i * c + k] = protos[static_cast<std::size_t>(id) * c + k] + n;
    }
  }
  return build_pyramid(Tensor::from({labels.size(), c}, std::move(fine)), labels.height, labels.width,
                       world.config.pyramid_levels);
}

Scene render_scene(const SyntheticWorld& world, const std::vector<ObjectRequest>& requests, std::uint64_t seed) {
  const auto& cfg = world.config;
  Rng rng(mix_seed({cfg.seed, seed, 0x6c61796f}));
  Scene scene;
  for (std::size_t r = 0; r < requests.size(); ++r) {
    SceneObject obj;
    obj.class_id = requests[r].class_id;
    bool placed = false;
    for (int tries = 0; tries < 10 && !placed; ++tries) {
      if (!sample_extent(requests[r].bucket, cfg.height, cfg.width, rng, obj.height, obj.width)) break;
      placed = place(scene.objects, obj, cfg.height, cfg.width, rng);
    }
    if (placed) {
      scene.objects.push_back(obj);
    } else if (r == 0) {
      throw ConfigError("cannot place a " + to_string(requests[r].bucket) + " object on the grid");
    }
  }
  scene.labels = LabelMap(cfg.height, cfg.width, 0);
  for (const auto& o : scene.objects)
    for (std::size_t y = o.top; y < o.top + o.height; ++y)
      for (std::size_t x = o.left; x < o.left + o.width; ++x) scene.labels.at(y, x) = o.class_id;
  scene.pyramid = render_features(world, scene.labels, rng());
  return scene;
}

Scene render_random_scene(const SyntheticWorld& world, const std::vector<int>& class_pool, std::uint64_t seed) {
  if (class_pool.empty()) throw ConfigError("empty class pool");
  Rng rng(mix_seed({world.config.seed, seed, 0x72616e64}));
  std::uniform_int_distribution<std::size_t> count(1, 4), pick(0, class_pool.size() - 1);
  std::vector<ObjectRequest> req(count(rng));
  for (auto& r : req) {
    r.class_id = class_pool[pick(rng)];
    r.bucket = random_bucket(rng);
  }
  return render_scene(world, req, rng());
}

std::vector<TrainItem> build_base_trainset(const SyntheticWorld& world, const Split& split, std::size_t count,
                                           std::uint64_t seed) {
  std::vector<int> pool;
  for (int id = 1; id < static_cast<int>(world.config.num_classes); ++id) pool.push_back(id);
  std::vector<TrainItem> items;
  items.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Scene s = render_random_scene(world, pool, mix_seed({kTagTrain, static_cast<std::uint64_t>(split.id), seed, i}));
    for (auto& id : s.labels.ids) {
      if (std::binary_search(split.novel_ids.begin(), split.novel_ids.end(), id)) id = 0;
    }
    items.push_back({std::move(s.pyramid), std::move(s.labels)});
  }
  return items;
}

SupportResult build_support(const SyntheticWorld& world, const Split& split, std::size_t shots, std::uint64_t seed) {
  if (shots == 0) throw ConfigError("support needs at least one shot");
  std::vector<int> pool;
  for (int id = 1; id < static_cast<int>(world.config.num_classes); ++id) pool.push_back(id);
  SupportResult res;
  for (std::size_t n = 0; n < split.novel_ids.size(); ++n) {
    const int cls = split.novel_ids[n];
    SupportSet set;
    set.class_id = cls;
    for (std::size_t k = 0; k < shots; ++k) {
      for (std::uint64_t attempt = 0;; ++attempt) {
        Rng rng(mix_seed({kTagSupport, static_cast<std::uint64_t>(split.id), seed, static_cast<std::uint64_t>(cls),
                          k, attempt}));
        std::uniform_int_distribution<std::size_t> extra(0, world.config.support_max_extras), pick(0, pool.size() - 1);
        std::vector<ObjectRequest> req{{cls, random_bucket(rng)}};
        for (std::size_t e = extra(rng); e > 0; --e) req.push_back({pool[pick(rng)], random_bucket(rng)});
        Scene s = render_scene(world, req, rng());
        const bool mixed = std::any_of(s.objects.begin(), s.objects.end(), [&](const SceneObject& o) {
          return o.class_id != cls && std::binary_search(split.novel_ids.begin(), split.novel_ids.end(), o.class_id);
        });
        if (mixed) {
          ++res.rejected;
          continue;
        }
        SupportShot shot;
        shot.mask = LabelMap(s.labels.height, s.labels.width, 0);
        for (std::size_t i = 0; i < s.labels.size(); ++i) shot.mask.ids[i] = s.labels.ids[i] == cls ? 1 : 0;
        shot.labels = std::move(s.labels);
        shot.pyramid = std::move(s.pyramid);
        set.shots.push_back(std::move(shot));
        break;
      }
    }
    res.per_class.push_back(std::move(set));
  }
  return res;
}

Tensor masked_average_pool(const std::vector<SupportSet>& support) {
  if (support.empty()) throw ConfigError("masked pooling needs at least one support class");
  const std::size_t c = support.front().shots.at(0).pyramid.dim();
  std::vector<double> out(support.size() * c, 0.0);
  for (std::size_t n = 0; n < support.size(); ++n) {
    const auto& set = support[n];
    if (set.shots.empty()) throw ConfigError("class " + std::to_string(set.class_id) + " has no support shots");
    std::vector<double> acc(c, 0.0);
    for (std::size_t k = 0; k < set.shots.size(); ++k) {
      const auto& shot = set.shots[k];
      const Tensor& f = shot.pyramid.top();
      if (f.rows() != shot.mask.size()) throw DimensionError("support mask does not match the finest level");
      double area = 0.0;
      std::vector<double> pooled(c, 0.0);
      for (std::size_t i = 0; i < shot.mask.size(); ++i) {
        const double m = shot.mask.ids[i];
        if (m == 0.0) continue;
        area += m;
        for (std::size_t d = 0; d < c; ++d) pooled[d] += m * f.at(i, d);
      }
      if (area == 0.0) {
        throw EmptyMaskError("empty support mask for class " + std::to_string(set.class_id) + ", shot " +
                             std::to_string(k));
      }
      for (std::size_t d = 0; d < c; ++d) acc[d] += pooled[d] / area;
    }
    for (std::size_t d = 0; d < c; ++d) out[n * c + d] = acc[d] / static_cast<double>(set.shots.size());
  }
  return Tensor::from({support.size(), c}, std::move(out));
}

Episode make_episode(const SyntheticWorld& world, int split_id, std::size_t shots, std::uint64_t episode_seed,
                     std::size_t num_queries) {
  Split split = make_split(world.config, split_id);
  Episode ep;
  ep.split_id = split_id;
  ep.base_ids = split.base_ids;
  ep.novel_ids = split.novel_ids;
  ep.shots = shots;
  ep.world_seed = world.config.seed;
  ep.episode_seed = episode_seed;
  auto support = build_support(world, split, shots, episode_seed);
  ep.support = std::move(support.per_class);
  ep.rejected_candidates = support.rejected;
  std::vector<int> pool;
  for (int id = 1; id < static_cast<int>(world.config.num_classes); ++id) pool.push_back(id);
  for (std::size_t q = 0; q < num_queries; ++q) {
    ep.queries.push_back(
        render_random_scene(world, pool, mix_seed({kTagQuery, static_cast<std::uint64_t>(split_id), episode_seed, q})));
  }
  return ep;
}

TensorArchive episode_to_archive(const Episode& ep) {
  TensorArchive ar;
  ar.set("format", "promptseg-episode");
  ar.set("split", std::to_string(ep.split_id));
  ar.set("base_ids", join_ids(ep.base_ids));
  ar.set("novel_ids", join_ids(ep.novel_ids));
  ar.set("shots", std::to_string(ep.shots));
  ar.set("world_seed", std::to_string(ep.world_seed));
  ar.set("episode_seed", std::to_string(ep.episode_seed));
  ar.set("rejected_candidates", std::to_string(ep.rejected_candidates));
  ar.set("queries", std::to_string(ep.queries.size()));
  const FeaturePyramid& ref = !ep.queries.empty() ? ep.queries.front().pyramid : ep.support.at(0).shots.at(0).pyramid;
  std::vector<int> hs, ws;
  for (std::size_t l = 0; l < ref.size(); ++l) {
    hs.push_back(static_cast<int>(ref.heights[l]));
    ws.push_back(static_cast<int>(ref.widths[l]));
  }
  ar.set("level_heights", join_ids(hs));
  ar.set("level_widths", join_ids(ws));
  for (std::size_t n = 0; n < ep.support.size(); ++n) {
    for (std::size_t k = 0; k < ep.support[n].shots.size(); ++k) {
      const auto& shot = ep.support[n].shots[k];
      const std::string prefix = "support." + std::to_string(n) + "." + std::to_string(k);
      put_pyramid(ar, prefix, shot.pyramid);
      ar.put(prefix + ".mask", label_tensor(shot.mask));
      ar.put(prefix + ".labels", label_tensor(shot.labels));
    }
  }
  for (std::size_t q = 0; q < ep.queries.size(); ++q) {
    const auto& s = ep.queries[q];
    const std::string prefix = "query." + std::to_string(q);
    put_pyramid(ar, prefix, s.pyramid);
    ar.put(prefix + ".labels", label_tensor(s.labels));
    if (!s.objects.empty()) {
      std::vector<double> rows;
      for (const auto& o : s.objects) {
        rows.insert(rows.end(), {static_cast<double>(o.class_id), static_cast<double>(o.top),
                                 static_cast<double>(o.left), static_cast<double>(o.height),
                                 static_cast<double>(o.width)});
      }
      ar.put(prefix + ".objects", Tensor::from({s.objects.size(), 5}, std::move(rows)));
    }
  }
  return ar;
}

Episode episode_from_archive(const TensorArchive& ar) {
  if (ar.get_or("format", "") != "promptseg-episode") throw FormatError("archive is not an episode");
  Episode ep;
  ep.split_id = std::stoi(ar.get("split"));
  ep.base_ids = split_ids(ar.get("base_ids"));
  ep.novel_ids = split_ids(ar.get("novel_ids"));
  ep.shots = std::stoul(ar.get("shots"));
  ep.world_seed = std::stoull(ar.get("world_seed"));
  ep.episode_seed = std::stoull(ar.get("episode_seed"));
  ep.rejected_candidates = std::stoul(ar.get("rejected_candidates"));
  const auto hs = split_ids(ar.get("level_heights"));
  const auto ws = split_ids(ar.get("level_widths"));
  for (std::size_t n = 0; n < ep.novel_ids.size(); ++n) {
    SupportSet set;
    set.class_id = ep.novel_ids[n];
    for (std::size_t k = 0; k < ep.shots; ++k) {
      const std::string prefix = "support." + std::to_string(n) + "." + std::to_string(k);
      SupportShot shot;
      shot.pyramid = get_pyramid(ar, prefix, hs, ws);
      shot.mask = label_from_tensor(ar.tensor(prefix + ".mask"));
      shot.labels = label_from_tensor(ar.tensor(prefix + ".labels"));
      set.shots.push_back(std::move(shot));
    }
    ep.support.push_back(std::move(set));
  }
  const std::size_t nq = std::stoul(ar.get("queries"));
  for (std::size_t q = 0; q < nq; ++q) {
    const std::string prefix = "query." + std::to_string(q);
    Scene s;
    s.pyramid = get_pyramid(ar, prefix, hs, ws);
    s.labels = label_from_tensor(ar.tensor(prefix + ".labels"));
    if (ar.has_tensor(prefix + ".objects")) {
      const Tensor& t = ar.tensor(prefix + ".objects");
      for (std::size_t i = 0; i < t.rows(); ++i) {
        SceneObject o;
        o.class_id = static_cast<int>(t.at(i, 0));
        o.top = static_cast<std::size_t>(t.at(i, 1));
        o.left = static_cast<std::size_t>(t.at(i, 2));
        o.height = static_cast<std::size_t>(t.at(i, 3));
        o.width = static_cast<std::size_t>(t.at(i, 4));
        s.objects.push_back(o);
      }
    }
    ep.queries.push_back(std::move(s));
  }
  return ep;
}

std::string describe_episode(const Episode& ep) {
  std::ostringstream os;
  os << "episode: split " << ep.split_id << ", " << ep.shots << "-shot, world seed " << ep.world_seed
     << ", episode seed " << ep.episode_seed << "\n";
  os << "  base classes:  " << join_ids(ep.base_ids) << " (0 = background)\n";
  os << "  novel classes: " << join_ids(ep.novel_ids) << "\n";
  os << "  support candidates rejected (multiple novel classes): " << ep.rejected_candidates << "\n";
  for (const auto& set : ep.support) {
    os << "  support class " << set.class_id << ":";
    for (const auto& shot : set.shots) os << " " << shot.mask.count(1) << "px";
    os << "\n";
  }
  os << "  queries: " << ep.queries.size();
  if (!ep.queries.empty()) {
    const auto& p = ep.queries.front().pyramid;
    os << ", pyramid";
    for (std::size_t l = 0; l < p.size(); ++l) os << " " << p.heights[l] << "x" << p.widths[l];
    os << ", dim " << p.dim();
  }
  os << "\n";
  std::vector<std::size_t> pixels(1 + *std::max_element(ep.base_ids.begin(), ep.base_ids.end()), 0);
  for (int id : ep.novel_ids) pixels.resize(std::max<std::size_t>(pixels.size(), id + 1), 0);
  for (const auto& q : ep.queries)
    for (int id : q.labels.ids) pixels.at(static_cast<std::size_t>(id))++;
  os << "  query pixels per class:";
  for (std::size_t id = 0; id < pixels.size(); ++id) os << " " << id << ":" << pixels[id];
  os << "\n";
  return os.str();
}

}  // namespace promptseg
