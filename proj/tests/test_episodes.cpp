#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "promptseg/episodes.hpp"

using namespace promptseg;

namespace {

WorldConfig small_world(std::uint64_t seed = 3) {
  WorldConfig cfg;
  cfg.seed = seed;
  return cfg;
}

std::string bytes(const TensorArchive& ar) {
  std::ostringstream os;
  ar.write(os);
  return os.str();
}

bool in_set(const std::vector<int>& ids, int id) { return std::find(ids.begin(), ids.end(), id) != ids.end(); }

SupportShot hand_shot(const std::vector<double>& feats, const std::vector<int>& mask) {
  SupportShot s;
  s.pyramid.levels = {Tensor::from({4, 2}, feats)};
  s.pyramid.heights = {2};
  s.pyramid.widths = {2};
  s.mask = LabelMap(2, 2);
  s.mask.ids = mask;
  s.labels = s.mask;
  return s;
}

}  // namespace

TEST_CASE("world generation is deterministic per seed") {
  auto a = generate_world(small_world(11));
  auto b = generate_world(small_world(11));
  auto c = generate_world(small_world(12));
  CHECK(bitwise_equal(a.prototypes, b.prototypes));
  CHECK_FALSE(bitwise_equal(a.prototypes, c.prototypes));
}

TEST_CASE("prototypes are unit norm and respect the cosine ceiling") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto w = generate_world(small_world(seed));
    for (std::size_t i = 0; i < w.prototypes.rows(); ++i) {
      double n = 0.0;
      for (std::size_t d = 0; d < w.prototypes.cols(); ++d) n += w.prototypes.at(i, d) * w.prototypes.at(i, d);
      CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-12));
    }
    // exhaustive pair scan, independent of max_abs_cosine
    const auto& p = w.prototypes;
    for (std::size_t i = 0; i < p.rows(); ++i)
      for (std::size_t j = i + 1; j < p.rows(); ++j) {
        double dot = 0.0;
        for (std::size_t d = 0; d < p.cols(); ++d) dot += p.at(i, d) * p.at(j, d);
        CHECK(std::abs(dot) <= 0.6 + 1e-12);
      }
  }
}

TEST_CASE("zero ceiling gives orthogonal prototypes") {
  auto cfg = small_world();
  cfg.cos_ceiling = 0.0;
  auto w = generate_world(cfg);
  CHECK(w.max_abs_cosine() < 1e-12);

  cfg.embed_dim = 8;
  cfg.num_classes = 8;
  CHECK(generate_world(cfg).max_abs_cosine() < 1e-12);
}

TEST_CASE("infeasible ceilings are configuration errors") {
  auto cfg = small_world();
  cfg.cos_ceiling = 0.0;
  cfg.embed_dim = 4;
  CHECK_THROWS_AS(generate_world(cfg), ConfigError);
  cfg.cos_ceiling = 0.01;
  cfg.num_classes = 8;
  cfg.embed_dim = 2;
  CHECK_THROWS_AS(generate_world(cfg), ConfigError);
}

TEST_CASE("splits rotate novel ids and stay disjoint") {
  auto cfg = small_world();
  std::set<int> seen_novel;
  for (int s = 0; s < 4; ++s) {
    auto sp = make_split(cfg, s);
    CHECK(sp.base_ids.front() == 0);
    CHECK(sp.base_ids.size() == 6);
    CHECK(sp.novel_ids.size() == 2);
    for (int n : sp.novel_ids) {
      CHECK_FALSE(in_set(sp.base_ids, n));
      seen_novel.insert(n);
    }
    CHECK(sp.base_ids.size() + sp.novel_ids.size() == cfg.num_classes);
  }
  CHECK(seen_novel.size() == 7);
  CHECK_THROWS_AS(make_split(cfg, 4), ConfigError);
}

TEST_CASE("size bucket thresholds") {
  CHECK(size_bucket_of(0.31) == SizeBucket::large);
  CHECK(size_bucket_of(0.10) == SizeBucket::medium);
  CHECK(size_bucket_of(0.30) == SizeBucket::medium);
  CHECK(size_bucket_of(0.0999) == SizeBucket::small);
}

TEST_CASE("noise-free full-frame scene reproduces the prototype") {
  auto cfg = small_world();
  cfg.noise_sigma = 0.0;
  auto w = generate_world(cfg);
  LabelMap labels(16, 16, 5);
  auto p = render_features(w, labels, 1);
  REQUIRE(p.size() == 3);
  for (std::size_t i = 0; i < p.top().rows(); ++i)
    for (std::size_t d = 0; d < p.dim(); ++d) CHECK(p.top().at(i, d) == w.prototypes.at(5, d));
}

TEST_CASE("pyramid levels are 2x2 means of their children") {
  auto w = generate_world(small_world());
  LabelMap labels(16, 16, 0);
  for (std::size_t i = 0; i < 40; ++i) labels.ids[i * 3] = 2;
  auto p = render_features(w, labels, 9);
  CHECK(p.heights == std::vector<std::size_t>{4, 8, 16});
  p.validate();
  for (std::size_t l = 0; l + 1 < p.size(); ++l) {
    const auto& coarse = p.levels[l];
    const auto& fine = p.levels[l + 1];
    const std::size_t w_c = p.widths[l], w_f = p.widths[l + 1];
    for (std::size_t y = 0; y < p.heights[l]; ++y)
      for (std::size_t x = 0; x < w_c; ++x)
        for (std::size_t d = 0; d < p.dim(); ++d) {
          double m = 0.0;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) m += fine.at((2 * y + dy) * w_f + 2 * x + dx, d);
          CHECK(coarse.at(y * w_c + x, d) == doctest::Approx(m / 4).epsilon(1e-14));
        }
  }
}

TEST_CASE("object areas match requested buckets") {
  auto w = generate_world(small_world());
  const double total = 256.0;
  std::size_t placed = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    std::vector<ObjectRequest> req{{1, SizeBucket::small}, {2, SizeBucket::medium}, {3, SizeBucket::large}};
    std::rotate(req.begin(), req.begin() + seed % 3, req.end());
    auto s = render_scene(w, req, seed);
    REQUIRE(!s.objects.empty());
    CHECK(s.objects.front().class_id == req.front().class_id);
    for (const auto& o : s.objects) {
      auto want = std::find_if(req.begin(), req.end(), [&](auto& r) { return r.class_id == o.class_id; })->bucket;
      CHECK(size_bucket_of(o.area() / total) == want);
      // non-overlap: every object pixel keeps its label
      CHECK(s.labels.count(o.class_id) == o.area());
      ++placed;
    }
  }
  CHECK(placed > 400);
}

TEST_CASE("base trainset relabels novel pixels as background") {
  auto w = generate_world(small_world());
  auto split = make_split(w.config, 1);
  auto items = build_base_trainset(w, split, 100, 7);
  REQUIRE(items.size() == 100);
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (int id : items[i].labels.ids) CHECK_FALSE(in_set(split.novel_ids, id));
  }

  // one novel object only -> all background
  auto only_novel = render_scene(w, {{split.novel_ids[0], SizeBucket::large}}, 5);
  LabelMap relabeled = only_novel.labels;
  for (auto& id : relabeled.ids)
    if (in_set(split.novel_ids, id)) id = 0;
  CHECK(relabeled.count(0) == relabeled.size());
}

TEST_CASE("base trainset preserves base pixels and features") {
  auto cfg = small_world();
  cfg.noise_sigma = 0.0;
  auto w = generate_world(cfg);
  auto split = make_split(w.config, 0);
  auto items = build_base_trainset(w, split, 30, 2);
  std::size_t novel_seen = 0, base_seen = 0;
  for (const auto& it : items) {
    // features are still rendered from true classes, so novel pixels look novel but carry label 0
    for (std::size_t i = 0; i < it.labels.size(); ++i) {
      double best = -1e9;
      int arg = -1;
      for (std::size_t c = 0; c < w.prototypes.rows(); ++c) {
        double d = 0.0;
        for (std::size_t k = 0; k < w.prototypes.cols(); ++k) d += it.pyramid.top().at(i, k) * w.prototypes.at(c, k);
        if (d > best) best = d, arg = static_cast<int>(c);
      }
      if (in_set(split.novel_ids, arg)) {
        ++novel_seen;
        CHECK(it.labels.ids[i] == 0);
      } else if (arg != 0) {
        ++base_seen;
        CHECK(it.labels.ids[i] == arg);
      }
    }
  }
  CHECK(novel_seen > 0);
  CHECK(base_seen > 0);
}

TEST_CASE("support sets hold one novel class per image") {
  auto w = generate_world(small_world());
  auto split = make_split(w.config, 2);
  auto one = build_support(w, split, 1, 4);
  REQUIRE(one.per_class.size() == split.novel_ids.size());
  for (const auto& set : one.per_class) CHECK(set.shots.size() == 1);

  std::size_t rejected = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto sup = build_support(w, split, 5, seed);
    rejected += sup.rejected;
    for (std::size_t n = 0; n < sup.per_class.size(); ++n) {
      const auto& set = sup.per_class[n];
      CHECK(set.class_id == split.novel_ids[n]);
      for (const auto& shot : set.shots) {
        std::size_t fg = 0;
        for (std::size_t i = 0; i < shot.mask.size(); ++i) {
          const int m = shot.mask.ids[i], id = shot.labels.ids[i];
          CHECK((m == 0 || m == 1));
          CHECK(m == (id == set.class_id ? 1 : 0));
          if (id != set.class_id) CHECK_FALSE(in_set(split.novel_ids, id));
          fg += static_cast<std::size_t>(m);
        }
        CHECK(fg > 0);
      }
    }
  }
  CHECK(rejected > 0);
}

TEST_CASE("support pools with more shots extend fewer shots") {
  auto w = generate_world(small_world());
  auto split = make_split(w.config, 0);
  auto one = build_support(w, split, 1, 8);
  auto five = build_support(w, split, 5, 8);
  for (std::size_t n = 0; n < split.novel_ids.size(); ++n)
    CHECK(bitwise_equal(one.per_class[n].shots[0].pyramid.top(), five.per_class[n].shots[0].pyramid.top()));
}

TEST_CASE("masked pooling closed forms") {
  SupportSet all_ones{1, {hand_shot({1, 2, 3, 4, 5, 6, 7, 8}, {1, 1, 1, 1})}};
  auto v = masked_average_pool({all_ones});
  CHECK(v.at(0, 0) == 4.0);
  CHECK(v.at(0, 1) == 5.0);

  SupportSet one_px{1, {hand_shot({1, 2, 3, 4, 5, 6, 7, 8}, {0, 0, 1, 0})}};
  v = masked_average_pool({one_px});
  CHECK(v.at(0, 0) == 5.0);
  CHECK(v.at(0, 1) == 6.0);

  // K=2: shot a pools pixels {0,3} -> (0.5*(1+7), 0.5*(2+8)) = (4, 5)
  //      shot b pools pixels {1,2,3} -> ((-1+0.5+2)/3, (3+1-4)/3) = (0.5, 0); mean (2.25, 2.5)
  SupportSet two{1,
                 {hand_shot({1, 2, 3, 4, 5, 6, 7, 8}, {1, 0, 0, 1}),
                  hand_shot({9, 9, -1, 3, 0.5, 1, 2, -4}, {0, 1, 1, 1})}};
  v = masked_average_pool({two});
  CHECK(std::abs(v.at(0, 0) - 2.25) < 1e-15);
  CHECK(std::abs(v.at(0, 1) - 2.5) < 1e-15);
}

TEST_CASE("masked pooling is linear in features and rejects empty masks") {
  auto w = generate_world(small_world());
  auto split = make_split(w.config, 3);
  auto sup = build_support(w, split, 2, 1).per_class;
  auto v = masked_average_pool(sup);
  CHECK(v.rows() == 2);
  auto scaled = sup;
  for (auto& set : scaled)
    for (auto& shot : set.shots) {
      auto& t = shot.pyramid.levels.back();
      t = ops::scale(t, 2.5);
    }
  auto vs = masked_average_pool(scaled);
  for (std::size_t i = 0; i < v.numel(); ++i) CHECK(vs[i] == doctest::Approx(2.5 * v[i]).epsilon(1e-13));

  auto broken = sup;
  std::fill(broken[1].shots[1].mask.ids.begin(), broken[1].shots[1].mask.ids.end(), 0);
  try {
    masked_average_pool(broken);
    FAIL("expected EmptyMaskError");
  } catch (const EmptyMaskError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("class " + std::to_string(broken[1].class_id)) != std::string::npos);
    CHECK(msg.find("shot 1") != std::string::npos);
  }
}

TEST_CASE("episodes are deterministic and round-trip through archives") {
  auto w = generate_world(small_world());
  auto a = make_episode(w, 1, 2, 42, 3);
  auto b = make_episode(w, 1, 2, 42, 3);
  auto bytes_a = bytes(episode_to_archive(a));
  CHECK(bytes_a == bytes(episode_to_archive(b)));
  CHECK(bytes_a != bytes(episode_to_archive(make_episode(w, 1, 2, 43, 3))));

  std::istringstream is(bytes_a);
  auto back = episode_from_archive(TensorArchive::read(is));
  CHECK(back.split_id == 1);
  CHECK(back.shots == 2);
  CHECK(back.novel_ids == a.novel_ids);
  CHECK(back.rejected_candidates == a.rejected_candidates);
  REQUIRE(back.queries.size() == 3);
  CHECK(back.queries[2].labels.ids == a.queries[2].labels.ids);
  CHECK(back.queries[0].objects.size() == a.queries[0].objects.size());
  CHECK(bytes(episode_to_archive(back)) == bytes_a);

  auto text = describe_episode(a);
  CHECK(text.find("novel classes") != std::string::npos);
}
