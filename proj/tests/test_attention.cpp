#include "doctest.h"
#include "naive.hpp"
#include "promptseg/attention.hpp"
#include "promptseg/decoder.hpp"
#include "promptseg/gradcheck.hpp"

using namespace promptseg;
using namespace promptseg::ops;

namespace {

naive::Mat mha_oracle(const Tensor& q, const Tensor& ctx, const AttentionParams& p) {
  return naive::multi_head(naive::of(q), naive::of(ctx), naive::of(p.wq), naive::of(p.wk), naive::of(p.wv),
                           naive::of(p.wo), p.heads);
}

naive::Mat mlp_oracle(const Tensor& x, const MlpParams& p, naive::Act a) {
  using naive::of;
  return naive::mlp(of(x), of(p.w1), of(p.b1), of(p.w2), of(p.b2), of(p.w3), of(p.b3), a);
}

}  // namespace

TEST_CASE("self_attend: single prompt returns its value projection") {
  Rng rng(1);
  auto p = AttentionParams::init(8, 2, rng);
  Tensor v = random_normal({1, 8}, 1.0, rng);
  Tensor expected = matmul(matmul(v, p.wv), p.wo);
  CHECK(naive::max_abs_diff(self_attend(v, p), naive::of(expected)) < 1e-14);
}

TEST_CASE("self_attend: identical prompts give identical rows") {
  Rng rng(2);
  auto p = AttentionParams::init(8, 4, rng);
  Tensor row = random_normal({1, 8}, 1.0, rng);
  Tensor out = self_attend(concat_rows({row, row}), p);
  for (std::size_t d = 0; d < 8; ++d) CHECK(out.at(0, d) == out.at(1, d));
}

TEST_CASE("self_attend: matches a per-head loop") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto p = AttentionParams::init(8, 2, rng);
    Tensor v = random_normal({3, 8}, 1.0, rng);
    CHECK(naive::max_abs_diff(self_attend(v, p), mha_oracle(v, v, p)) < 1e-12);
  }
}

TEST_CASE("self_attend: head count must divide the dimension") {
  Rng rng(3);
  CHECK_THROWS_AS(AttentionParams::init(8, 3, rng), ConfigError);
  auto p = AttentionParams::init(8, 2, rng);
  p.heads = 3;
  CHECK_THROWS_AS(self_attend(Tensor::zeros({2, 8}), p), ConfigError);
}

TEST_CASE("cross_attend: one feature token broadcasts its value projection") {
  Rng rng(4);
  auto p = AttentionParams::init(8, 4, rng);
  Tensor prompts = random_normal({3, 8}, 1.0, rng);
  Tensor token = random_normal({1, 8}, 1.0, rng);
  Tensor expected = matmul(matmul(token, p.wv), p.wo);
  Tensor out = cross_attend(prompts, token, p);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t d = 0; d < 8; ++d) CHECK(std::abs(out.at(i, d) - expected.at(0, d)) < 1e-14);
}

TEST_CASE("cross_attend: identical features make the logits irrelevant") {
  Rng rng(5);
  auto p = AttentionParams::init(8, 2, rng);
  Tensor token = random_normal({1, 8}, 1.0, rng);
  Tensor feats = concat_rows({token, token, token, token, token});
  Tensor a = cross_attend(random_normal({2, 8}, 1.0, rng), feats, p);
  Tensor b = cross_attend(random_normal({2, 8}, 5.0, rng), feats, p);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-13);
}

TEST_CASE("cross_attend: matches a per-head loop and checks feature dims") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    auto p = AttentionParams::init(8, 4, rng);
    Tensor prompts = random_normal({2, 8}, 1.0, rng);
    Tensor feats = random_normal({6, 8}, 1.0, rng);
    CHECK(naive::max_abs_diff(cross_attend(prompts, feats, p), mha_oracle(prompts, feats, p)) < 1e-12);
  }
  Rng rng(0);
  auto p = AttentionParams::init(8, 4, rng);
  CHECK_THROWS_AS(cross_attend(Tensor::zeros({2, 8}), Tensor::zeros({6, 4}), p), DimensionError);
  CHECK_THROWS_AS(cross_attend(Tensor::zeros({2, 8}), Tensor::zeros({0, 8}), p), DimensionError);
}

TEST_CASE("causal_attend: no novel prompts leaves base untouched") {
  Rng rng(6);
  auto p = CausalAttentionParams::init(8, rng);
  Tensor vb = random_normal({3, 8}, 1.0, rng);
  Tensor before = vb.clone();
  Tensor out = causal_attend(vb, Tensor::from({0, 8}, {}), p);
  CHECK(out.rows() == 0);
  CHECK(out.cols() == 8);
  CHECK(bitwise_equal(vb, before));
}

TEST_CASE("causal_attend: one base prompt gives its value projection") {
  Rng rng(7);
  auto p = CausalAttentionParams::init(8, rng);
  Tensor vb = random_normal({1, 8}, 1.0, rng);
  Tensor vn = random_normal({3, 8}, 1.0, rng);
  Tensor expected = matmul(vb, p.wv);
  Tensor out = causal_attend(vb, vn, p);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t d = 0; d < 8; ++d) CHECK(out.at(n, d) == expected.at(0, d));
}

TEST_CASE("causal_attend: matches the displayed formula") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(200 + seed);
    auto p = CausalAttentionParams::init(8, rng);
    Tensor vb = random_normal({3, 8}, 1.0, rng);
    Tensor vn = random_normal({2, 8}, 1.0, rng);
    Tensor before = vb.clone();
    auto oracle = naive::causal(naive::of(vb), naive::of(vn), naive::of(p.wq), naive::of(p.wk), naive::of(p.wv));
    CHECK(naive::max_abs_diff(causal_attend(vb, vn, p), oracle) < 1e-12);
    CHECK(bitwise_equal(vb, before));
    Tensor w = causal_attention_weights(vb, vn, p);
    for (std::size_t n = 0; n < 2; ++n) CHECK(std::abs(w.at(n, 0) + w.at(n, 1) + w.at(n, 2) - 1.0) < 1e-12);
  }
}

TEST_CASE("causal_attend: base prompts get gradient only when trainable") {
  Rng rng(8);
  auto p = CausalAttentionParams::init(8, rng);
  Tensor vb = random_normal({3, 8}, 1.0, rng, true);
  Tensor vn = random_normal({2, 8}, 1.0, rng, true);
  sum(causal_attend(vb, vn, p)).backward();
  CHECK(vb.has_grad());
  double mass = 0.0;
  for (double g : vb.grad()) mass += std::abs(g);
  CHECK(mass > 0.0);

  Tensor frozen = random_normal({3, 8}, 1.0, rng, false);
  Tensor vn2 = random_normal({2, 8}, 1.0, rng, true);
  sum(causal_attend(frozen, vn2, p)).backward();
  CHECK_FALSE(frozen.has_grad());
  CHECK(vn2.has_grad());
}

TEST_CASE("causal parameters: shared count is independent of depth") {
  for (std::size_t layers : {1u, 3u, 6u}) {
    ModelConfig cfg;
    cfg.layers = layers;
    Rng rng(9);
    auto shared = DecoderParams::init(cfg, rng);
    shared.add_causal(CausalMode::shared, cfg.embed_dim, rng);
    CHECK(shared.causal.size() == 1);
    CHECK(shared.causal_parameter_count() == 3 * 32 * 32);

    auto first = DecoderParams::init(cfg, rng);
    first.add_causal(CausalMode::first_layer, cfg.embed_dim, rng);
    CHECK(first.causal_parameter_count() == 3 * 32 * 32);

    auto separate = DecoderParams::init(cfg, rng);
    separate.add_causal(CausalMode::separate, cfg.embed_dim, rng);
    CHECK(separate.causal_parameter_count() == layers * 3 * 32 * 32);

    auto none = DecoderParams::init(cfg, rng);
    none.add_causal(CausalMode::none, cfg.embed_dim, rng);
    CHECK(none.causal_parameter_count() == 0);
  }
}

TEST_CASE("causal_for_layer routes each mode") {
  ModelConfig cfg;
  Rng rng(10);
  auto p = DecoderParams::init(cfg, rng);
  p.add_causal(CausalMode::first_layer, 32, rng);
  CHECK(p.causal_for_layer(0) == &p.causal[0]);
  CHECK(p.causal_for_layer(1) == nullptr);
  p.add_causal(CausalMode::shared, 32, rng);
  CHECK(p.causal_for_layer(2) == &p.causal[0]);
  p.add_causal(CausalMode::separate, 32, rng);
  CHECK(p.causal_for_layer(1) == &p.causal[1]);
  p.add_causal(CausalMode::none, 32, rng);
  CHECK(p.causal_for_layer(0) == nullptr);
}

TEST_CASE("mlp: zero parameters give zero output") {
  Rng rng(11);
  auto p = MlpParams::init(8, Activation::gelu, rng);
  p.visit("mlp", [](const std::string&, Tensor& t) { t = Tensor::zeros(t.shape()); });
  Tensor out = mlp_forward(random_normal({4, 8}, 1.0, rng), p);
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("mlp: identity layers with relu pass positive input through") {
  Rng rng(12);
  auto p = MlpParams::init(4, Activation::relu, rng);
  Tensor eye = Tensor::matrix({{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}});
  p.w1 = p.w2 = p.w3 = eye;
  p.b1 = p.b2 = p.b3 = Tensor::zeros({1, 4});
  Tensor x = Tensor::matrix({{0.5, 1, 2, 3}, {4, 0.25, 7, 1e-3}});
  CHECK(bitwise_equal(mlp_forward(x, p), x));
}

TEST_CASE("mlp: matches the loop oracle and the gradient check") {
  for (auto act : {Activation::gelu, Activation::relu, Activation::identity}) {
    Rng rng(13);
    auto p = MlpParams::init(6, act, rng);
    p.visit("mlp", [&](const std::string&, Tensor& t) { t = random_normal(t.shape(), 0.5, rng, true); });
    Tensor x = random_normal({3, 6}, 1.0, rng, true);
    naive::Act na = act == Activation::gelu ? naive::Act::gelu
                    : act == Activation::relu ? naive::Act::relu
                                              : naive::Act::identity;
    CHECK(naive::max_abs_diff(mlp_forward(x, p), mlp_oracle(x, p, na)) < 1e-12);

    Tensor w = random_normal({3, 6}, 1.0, rng);
    std::vector<NamedTensor> params{{"x", x}};
    p.visit("mlp", [&](const std::string& n, Tensor& t) { params.emplace_back(n, t); });
    auto res = finite_diff_check([&] { return sum(mul(mlp_forward(x, p), w)); }, params);
    CHECK(res.max_rel_error < 1e-6);
  }
}

TEST_CASE("attention blocks: finite-difference gradients") {
  Rng rng(14);
  auto p = AttentionParams::init(8, 2, rng);
  Tensor prompts = random_normal({3, 8}, 1.0, rng, true);
  Tensor feats = random_normal({5, 8}, 1.0, rng, true);
  auto c = CausalAttentionParams::init(8, rng);
  Tensor vn = random_normal({2, 8}, 1.0, rng, true);
  Tensor w = random_normal({3, 8}, 1.0, rng);
  Tensor wn = random_normal({2, 8}, 1.0, rng);
  std::vector<NamedTensor> params{{"prompts", prompts}, {"feats", feats}, {"vn", vn}};
  p.visit("attn", [&](const std::string& n, Tensor& t) { params.emplace_back(n, t); });
  c.visit("causal", [&](const std::string& n, Tensor& t) { params.emplace_back(n, t); });
  auto res = finite_diff_check(
      [&] {
        Tensor a = add(self_attend(prompts, p), cross_attend(prompts, feats, p));
        return add(sum(mul(a, w)), sum(mul(causal_attend(prompts, vn, c), wn)));
      },
      params);
  CHECK(res.max_rel_error < 1e-5);
}
