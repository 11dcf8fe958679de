#include <sstream>

#include "doctest.h"
#include "naive.hpp"
#include "promptseg/decoder.hpp"
#include "promptseg/gradcheck.hpp"

using namespace promptseg;
using namespace promptseg::ops;

namespace {

FeaturePyramid random_pyramid(Rng& rng, std::size_t dim, std::vector<std::size_t> sides) {
  FeaturePyramid p;
  for (auto s : sides) {
    p.levels.push_back(random_normal({s * s, dim}, 1.0, rng));
    p.heights.push_back(s);
    p.widths.push_back(s);
  }
  return p;
}

ModelConfig tiny(std::size_t dim, std::size_t layers, std::size_t heads = 2) {
  ModelConfig cfg;
  cfg.embed_dim = dim;
  cfg.layers = layers;
  cfg.heads = heads;
  return cfg;
}

MlpParams identity_mlp(std::size_t dim) {
  MlpParams m;
  std::vector<double> eye(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) eye[i * dim + i] = 1.0;
  m.w1 = m.w2 = m.w3 = Tensor::from({dim, dim}, eye);
  m.b1 = m.b2 = m.b3 = Tensor::zeros({1, dim});
  m.activation = Activation::identity;
  return m;
}

Tensor unit(std::size_t dim, std::size_t axis, double scale = 1.0) {
  std::vector<double> v(dim, 0.0);
  v[axis] = scale;
  return Tensor::from({1, dim}, v);
}

naive::Mat refine_oracle(const naive::Mat& v, const Tensor& feats, const DecoderLayerParams& layer, bool norm) {
  using naive::of;
  const auto& s = layer.self_attn;
  const auto& c = layer.cross_attn;
  auto out = naive::add(naive::multi_head(v, v, of(s.wq), of(s.wk), of(s.wv), of(s.wo), s.heads),
                        naive::multi_head(v, of(feats), of(c.wq), of(c.wk), of(c.wv), of(c.wo), c.heads));
  return norm ? naive::layer_norm(out, of(layer.norm.gamma), of(layer.norm.beta)) : out;
}

// Mean of -log softmax(logits)[label] over pixels.
Tensor ce(const Tensor& logits, const std::vector<int>& labels) {
  std::vector<double> onehot(logits.numel(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) onehot[i * logits.cols() + labels[i]] = 1.0;
  Tensor y = Tensor::from(logits.shape(), onehot);
  return scale(sum(mul(y, log_floor(softmax_rows(logits)))), -1.0 / static_cast<double>(labels.size()));
}

std::string bytes(const TensorArchive& ar) {
  std::ostringstream os;
  ar.write(os);
  return os.str();
}

PromptModel novel_model(std::uint64_t seed, CausalMode mode, std::size_t layers = 2) {
  Rng rng(seed);
  auto m = PromptModel::init_base(tiny(8, layers), {0, 1, 2}, rng);
  m.params.add_causal(mode, 8, rng);
  m.prompts.novel = random_normal({2, 8}, 1.0, rng, true);
  m.params.w_novel = random_normal({2, 8}, 0.3, rng, true);
  m.novel_class_ids = {3, 4};
  return m;
}

}  // namespace

TEST_CASE("pyramid validation and level mapping") {
  Rng rng(1);
  auto p = random_pyramid(rng, 8, {2, 4, 6});
  p.validate();
  CHECK(&level_for_layer(p, 0, true) == &p.levels[0]);
  CHECK(&level_for_layer(p, 4, true) == &p.levels[1]);
  CHECK_THROWS_AS(level_for_layer(p, 3, false), ConfigError);

  auto flat = random_pyramid(rng, 8, {4, 4});
  CHECK_THROWS_AS(flat.validate(), ConfigError);
  auto mixed = p;
  mixed.levels[1] = random_normal({16, 4}, 1.0, rng);
  CHECK_THROWS_AS(mixed.validate(), DimensionError);
}

TEST_CASE("decode_base: zero layers return the prompts unchanged") {
  Rng rng(2);
  auto params = DecoderParams::init(tiny(8, 0), rng);
  Tensor v = random_normal({3, 8}, 1.0, rng);
  CHECK(bitwise_equal(decode_base(v, random_pyramid(rng, 8, {2, 4}), params), v));
}

TEST_CASE("decode_base: one layer over a single token composes the blocks") {
  Rng rng(3);
  for (bool norm : {false, true}) {
    auto cfg = tiny(8, 1);
    cfg.layer_norm = norm;
    auto params = DecoderParams::init(cfg, rng);
    params.layers[0].norm.gamma = random_normal({1, 8}, 1.0, rng);
    params.layers[0].norm.beta = random_normal({1, 8}, 1.0, rng);
    Tensor v = random_normal({3, 8}, 1.0, rng);
    FeaturePyramid p;
    p.levels = {random_normal({1, 8}, 1.0, rng)};
    p.heights = p.widths = {1};
    const auto& layer = params.layers[0];
    naive::Mat self = naive::multi_head(naive::of(v), naive::of(v), naive::of(layer.self_attn.wq),
                                        naive::of(layer.self_attn.wk), naive::of(layer.self_attn.wv),
                                        naive::of(layer.self_attn.wo), 2);
    naive::Mat token = naive::matmul(naive::matmul(naive::of(p.levels[0]), naive::of(layer.cross_attn.wv)),
                                     naive::of(layer.cross_attn.wo));
    for (auto& row : self)
      for (std::size_t d = 0; d < 8; ++d) row[d] += token[0][d];
    if (norm) self = naive::layer_norm(self, naive::of(layer.norm.gamma), naive::of(layer.norm.beta));
    CHECK(naive::max_abs_diff(decode_base(v, p, params), self) < 1e-12);
  }
}

TEST_CASE("decode_base: cross-entropy gradient reaches the initial prompts") {
  Rng rng(4);
  auto params = DecoderParams::init(tiny(8, 2), rng);
  auto pyr = random_pyramid(rng, 8, {2, 3});
  Tensor v = random_normal({3, 8}, 1.0, rng, true);
  std::vector<int> labels(9);
  for (std::size_t i = 0; i < 9; ++i) labels[i] = static_cast<int>(i % 3);
  auto res = finite_diff_check(
      [&] { return ce(base_head_logits(decode_base(v, pyr, params), pyr.top(), params.mlp), labels); }, {{"v", v}});
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("decode_joint: without causal attention equals decode_base on the concatenation") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto params = DecoderParams::init(tiny(8, 3), rng);
    auto pyr = random_pyramid(rng, 8, {2, 4});
    Tensor vb = random_normal({3, 8}, 1.0, rng);
    Tensor vn = random_normal({2, 8}, 1.0, rng);
    auto joint = decode_joint(vb, vn, pyr, params);
    Tensor ref = decode_base(concat_rows({vb, vn}), pyr, params);
    CHECK(bitwise_equal(concat_rows({joint.base, joint.novel}), ref));
  }
}

TEST_CASE("decode_joint: B=2, N=1, L=1, C=4 matches a hand-expanded forward pass") {
  for (bool residual : {false, true}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(50 + seed);
      auto cfg = tiny(4, 1);
      cfg.causal_residual = residual;
      auto params = DecoderParams::init(cfg, rng);
      params.add_causal(CausalMode::shared, 4, rng);
      auto pyr = random_pyramid(rng, 4, {2});
      Tensor vb = random_normal({2, 4}, 1.0, rng);
      Tensor vn = random_normal({1, 4}, 1.0, rng);
      const auto& ca = params.causal[0];
      naive::Mat vn1 = naive::causal(naive::of(vb), naive::of(vn), naive::of(ca.wq), naive::of(ca.wk), naive::of(ca.wv));
      if (residual) vn1 = naive::add(vn1, naive::of(vn));
      naive::Mat va = naive::of(vb);
      va.push_back(vn1[0]);
      naive::Mat out = refine_oracle(va, pyr.levels[0], params.layers[0], true);
      auto joint = decode_joint(vb, vn, pyr, params);
      CHECK(naive::max_abs_diff(joint.base, naive::Mat(out.begin(), out.begin() + 2)) < 1e-12);
      CHECK(naive::max_abs_diff(joint.novel, naive::Mat(out.begin() + 2, out.end())) < 1e-12);
    }
  }
}

TEST_CASE("decode_joint: base rows keep their class order") {
  Rng rng(6);
  auto params = DecoderParams::init(tiny(8, 2), rng);
  params.add_causal(CausalMode::shared, 8, rng);
  auto pyr = random_pyramid(rng, 8, {2, 4});
  Tensor vb = random_normal({3, 8}, 1.0, rng);
  Tensor vn = random_normal({2, 8}, 1.0, rng);
  auto a = decode_joint(vb, vn, pyr, params);
  Tensor permuted = concat_rows({slice_rows(vb, 2, 3), slice_rows(vb, 0, 2)});
  auto b = decode_joint(permuted, vn, pyr, params);
  const std::size_t perm[] = {2, 0, 1};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t d = 0; d < 8; ++d) CHECK(std::abs(b.base.at(i, d) - a.base.at(perm[i], d)) < 1e-12);
  for (std::size_t i = 0; i < a.novel.numel(); ++i) CHECK(std::abs(a.novel[i] - b.novel[i]) < 1e-12);
}

TEST_CASE("decode_joint: no novel prompts is misuse") {
  Rng rng(7);
  auto params = DecoderParams::init(tiny(8, 1), rng);
  auto pyr = random_pyramid(rng, 8, {2});
  CHECK_THROWS_AS(decode_joint(random_normal({2, 8}, 1.0, rng), Tensor::from({0, 8}, {}), pyr, params),
                  ContractError);
}

TEST_CASE("first-layer causal attention only touches layer one") {
  Rng rng(8);
  auto params = DecoderParams::init(tiny(8, 3), rng);
  params.add_causal(CausalMode::first_layer, 8, rng);
  auto pyr = random_pyramid(rng, 8, {2, 4});
  Tensor vb = random_normal({3, 8}, 1.0, rng);
  Tensor vn = random_normal({2, 8}, 1.0, rng);
  Tensor vn1 = causal_attend(vb, vn, params.causal[0]);
  Tensor manual = concat_rows({vb, vn1});
  for (std::size_t l = 0; l < 3; ++l) manual = refine_prompts(manual, level_for_layer(pyr, l, true), params.layers[l], true);
  auto joint = decode_joint(vb, vn, pyr, params);
  CHECK(bitwise_equal(concat_rows({joint.base, joint.novel}), manual));
}

TEST_CASE("base head: orthogonal embeddings give uniform probabilities") {
  auto mlp = identity_mlp(4);
  Tensor vb = concat_rows({unit(4, 0), unit(4, 1), unit(4, 0, -2.0)});
  Tensor feats = Tensor::matrix({{0, 0, 1, 0}, {0, 0, 0, 3}, {0, 0, -2, 1}, {0, 0, 0.5, 0.5}});
  auto out = base_head(vb, feats, mlp, 2, 2);
  for (double p : out.probs.data()) CHECK(std::abs(p - 1.0 / 3.0) < 1e-15);
  for (int a : out.argmax) CHECK(a == 0);
}

TEST_CASE("base head: a matching prototype wins the pixel") {
  auto mlp = identity_mlp(4);
  Tensor vb = concat_rows({unit(4, 0), unit(4, 1), unit(4, 2)});
  Tensor feats = concat_rows({unit(4, 1), unit(4, 2), unit(4, 0), unit(4, 1)});
  auto out = base_head(vb, feats, mlp, 2, 2);
  CHECK(out.argmax == std::vector<int>{1, 2, 0, 1});
}

TEST_CASE("base head: logits match a class-by-pixel loop") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(300 + seed);
    auto mlp = MlpParams::init(8, Activation::gelu, rng);
    mlp.visit("m", [&](const std::string&, Tensor& t) { t = random_normal(t.shape(), 0.4, rng); });
    Tensor vb = random_normal({3, 8}, 1.0, rng);
    Tensor feats = random_normal({16, 8}, 1.0, rng);
    using naive::of;
    auto emb = naive::mlp(of(vb), of(mlp.w1), of(mlp.b1), of(mlp.w2), of(mlp.b2), of(mlp.w3), of(mlp.b3),
                          naive::Act::gelu);
    auto out = base_head(vb, feats, mlp, 4, 4);
    CHECK(naive::max_abs_diff(out.logits, naive::pixel_logits(emb, of(feats))) < 1e-12);
    CHECK(out.logit(2, 1, 3) == out.logits.at(7, 2));
  }
}

TEST_CASE("novel head: residual weights and frozen projector") {
  Rng rng(9);
  auto mlp = MlpParams::init(8, Activation::gelu, rng);
  mlp.visit("m", [&](const std::string&, Tensor& t) { t = random_normal(t.shape(), 0.4, rng); });
  Tensor vn = random_normal({2, 8}, 1.0, rng);
  Tensor feats = random_normal({9, 8}, 1.0, rng);

  // w_n = 0 -> plain frozen projection
  Tensor zero_w = Tensor::zeros({2, 8});
  CHECK(bitwise_equal(novel_head_logits(vn, feats, mlp, zero_w), base_head_logits(vn, feats, mlp)));

  // v_n = 0 and MLP(0) = 0 -> w_n . f^T
  auto lin = identity_mlp(8);
  Tensor wn = random_normal({2, 8}, 1.0, rng);
  auto got = novel_head_logits(Tensor::zeros({2, 8}), feats, lin, wn);
  CHECK(naive::max_abs_diff(got, naive::pixel_logits(naive::of(wn), naive::of(feats))) == 0.0);

  // gradient reaches v_n and w_n, never the frozen projector
  Tensor vn_t = vn.clone(true);
  Tensor wn_t = wn.clone(true);
  sum(novel_head_logits(vn_t, feats, mlp, wn_t)).backward();
  CHECK(vn_t.has_grad());
  CHECK(wn_t.has_grad());
  mlp.visit("m", [](const std::string&, Tensor& t) { CHECK_FALSE(t.has_grad()); });

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(400 + seed);
    Tensor v = random_normal({2, 8}, 1.0, r);
    Tensor w = random_normal({2, 8}, 1.0, r);
    using naive::of;
    auto emb = naive::add(naive::mlp(of(v), of(mlp.w1), of(mlp.b1), of(mlp.w2), of(mlp.b2), of(mlp.w3), of(mlp.b3),
                                     naive::Act::gelu),
                          of(w));
    CHECK(naive::max_abs_diff(novel_head_logits(v, feats, mlp, w), naive::pixel_logits(emb, of(feats))) < 1e-12);
  }
  CHECK_THROWS_AS(novel_head_logits(vn, feats, mlp, Tensor::zeros({3, 8})), DimensionError);
}

TEST_CASE("full_forward: no novel prompts equals the base head") {
  Rng rng(10);
  auto m = PromptModel::init_base(tiny(8, 2), {0, 1, 2}, rng);
  auto pyr = random_pyramid(rng, 8, {2, 4});
  auto out = m.forward(pyr);
  auto ref = base_head(decode_base(m.prompts.base, pyr, m.params), pyr.top(), m.params.mlp, 4, 4);
  CHECK(bitwise_equal(out.logits, ref.logits));
  CHECK(bitwise_equal(out.probs, ref.probs));
  CHECK(out.argmax == ref.argmax);
}

TEST_CASE("full_forward: shape law and per-pixel probability sums") {
  for (auto mode : {CausalMode::none, CausalMode::first_layer, CausalMode::separate, CausalMode::shared}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto m = novel_model(seed, mode);
      Rng rng(seed + 1000);
      auto out = m.forward(random_pyramid(rng, 8, {2, 4}));
      CHECK(out.classes() == 5);
      CHECK(out.pixels() == 16);
      for (std::size_t i = 0; i < 16; ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < 5; ++c) s += out.probs.at(i, c);
        CHECK(std::abs(s - 1.0) < 1e-12);
        CHECK(out.argmax[i] >= 0);
        CHECK(out.argmax[i] < 5);
      }
    }
  }
}

TEST_CASE("full_forward: a dominant novel prototype claims its region") {
  const std::size_t dim = 8;
  DecoderParams params;
  params.mlp = identity_mlp(dim);
  params.w_novel = unit(dim, 2, 3.0);
  PromptSet prompts;
  prompts.base = concat_rows({unit(dim, 0), unit(dim, 1)});
  prompts.novel = Tensor::zeros({1, dim});
  FeaturePyramid pyr;
  std::vector<Tensor> rows;
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) rows.push_back(x >= 2 ? unit(dim, 2) : unit(dim, y % 2));
  pyr.levels = {concat_rows(rows)};
  pyr.heights = pyr.widths = {4};
  auto out = full_forward(prompts, pyr, params);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) CHECK(out.argmax[y * 4 + x] == (x >= 2 ? 2 : static_cast<int>(y % 2)));
}

TEST_CASE("argmax ties go to the lowest index") {
  auto out = make_output(Tensor::matrix({{1, 1, 0}, {0, 2, 2}, {5, 5, 5}}), 1, 3);
  CHECK(out.argmax == std::vector<int>{0, 1, 0});
}

TEST_CASE("full decoder: finite-difference gradient of the segmentation loss") {
  auto m = novel_model(11, CausalMode::shared);
  Rng rng(12);
  auto pyr = random_pyramid(rng, 8, {2, 3});
  std::vector<int> labels(9);
  for (std::size_t i = 0; i < 9; ++i) labels[i] = static_cast<int>((i * 2) % 5);
  auto res = finite_diff_check([&] { return ce(m.forward(pyr).logits, labels); }, m.trainable_parameters());
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("model: determinism, deep clone and checkpoint round trip") {
  auto a = novel_model(13, CausalMode::separate, 3);
  auto b = novel_model(13, CausalMode::separate, 3);
  Rng rng(14);
  auto pyr = random_pyramid(rng, 8, {2, 4});
  CHECK(bitwise_equal(a.forward(pyr).probs, b.forward(pyr).probs));
  CHECK(bytes(a.to_archive()) == bytes(b.to_archive()));

  auto c = a.clone();
  c.prompts.novel.mutable_data()[0] += 1.0;
  c.params.layers[0].self_attn.wq.mutable_data()[0] += 1.0;
  CHECK(bytes(a.to_archive()) == bytes(b.to_archive()));

  a.set_trainable([](const std::string& n) { return n.rfind("prompts.", 0) == 0 || n == "head.w_novel"; });
  std::stringstream ss;
  a.to_archive().write(ss);
  auto back = PromptModel::from_archive(TensorArchive::read(ss));
  CHECK(bytes(back.to_archive()) == bytes(a.to_archive()));
  CHECK(back.params.causal_mode == CausalMode::separate);
  CHECK(back.params.causal.size() == 3);
  CHECK(back.novel_class_ids == std::vector<int>{3, 4});
  CHECK(back.prompts.novel.requires_grad());
  CHECK_FALSE(back.params.mlp.w1.requires_grad());
  CHECK(bitwise_equal(back.forward(pyr).probs, a.forward(pyr).probs));
  CHECK(back.class_id(0) == 0);
  CHECK(back.class_id(4) == 4);
  CHECK_THROWS_AS(back.class_id(5), DimensionError);
}

TEST_CASE("parameter names are stable and hierarchical") {
  auto m = novel_model(15, CausalMode::shared, 1);
  std::vector<std::string> names;
  for (auto& [n, t] : m.named_parameters()) names.push_back(n);
  CHECK(names.front() == "prompts.base");
  CHECK(names[1] == "prompts.novel");
  CHECK(std::find(names.begin(), names.end(), "decoder.layer0.cross_attn.wv") != names.end());
  CHECK(std::find(names.begin(), names.end(), "causal.0.wk") != names.end());
  CHECK(std::find(names.begin(), names.end(), "head.mlp.b3") != names.end());
  CHECK(names.back() == "head.w_novel");
}
