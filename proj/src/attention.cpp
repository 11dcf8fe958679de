#include "promptseg/attention.hpp"

#include <cmath>

namespace promptseg {

using namespace ops;

namespace {

Tensor projection(std::size_t dim, Rng& rng) {
  return random_normal({dim, dim}, 1.0 / std::sqrt(static_cast<double>(dim)), rng, true);
}

void check_square(const Tensor& w, std::size_t dim, const char* what) {
  if (w.shape() != Shape{dim, dim}) {
    throw DimensionError(std::string(what) + ": expected " + shape_str({dim, dim}) + ", got " + shape_str(w.shape()));
  }
}

}  // namespace

AttentionParams AttentionParams::init(std::size_t dim, std::size_t heads, Rng& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("embedding dim " + std::to_string(dim) + " is not divisible by head count " +
                      std::to_string(heads));
  }
  AttentionParams p;
  p.wq = projection(dim, rng);
  p.wk = projection(dim, rng);
  p.wv = projection(dim, rng);
  p.wo = projection(dim, rng);
  p.heads = heads;
  return p;
}

CausalAttentionParams CausalAttentionParams::init(std::size_t dim, Rng& rng) {
  CausalAttentionParams p;
  p.wq = projection(dim, rng);
  p.wk = projection(dim, rng);
  p.wv = projection(dim, rng);
  return p;
}

MlpParams MlpParams::init(std::size_t dim, ops::Activation act, Rng& rng) {
  const double sigma = std::sqrt(2.0 / static_cast<double>(dim));
  MlpParams p;
  p.w1 = random_normal({dim, dim}, sigma, rng, true);
  p.b1 = Tensor::zeros({1, dim}, true);
  p.w2 = random_normal({dim, dim}, sigma, rng, true);
  p.b2 = Tensor::zeros({1, dim}, true);
  p.w3 = random_normal({dim, dim}, 1.0 / std::sqrt(static_cast<double>(dim)), rng, true);
  p.b3 = Tensor::zeros({1, dim}, true);
  p.activation = act;
  return p;
}

Tensor multi_head_attend(const Tensor& queries, const Tensor& context, const AttentionParams& params) {
  const std::size_t dim = params.dim();
  if (params.heads == 0 || dim % params.heads != 0) {
    throw ConfigError("embedding dim " + std::to_string(dim) + " is not divisible by head count " +
                      std::to_string(params.heads));
  }
  if (queries.cols() != dim || context.cols() != dim) {
    throw DimensionError("attention: inputs " + shape_str(queries.shape()) + " and " + shape_str(context.shape()) +
                         " do not match model dim " + std::to_string(dim));
  }
  if (context.rows() == 0) throw DimensionError("attention: empty context");
  for (const auto* w : {&params.wq, &params.wk, &params.wv, &params.wo}) check_square(*w, dim, "attention");

  const Tensor q = matmul(queries, params.wq);
  const Tensor k = matmul(context, params.wk);
  const Tensor v = matmul(context, params.wv);
  const std::size_t head_dim = dim / params.heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  std::vector<Tensor> heads;
  heads.reserve(params.heads);
  for (std::size_t h = 0; h < params.heads; ++h) {
    const std::size_t lo = h * head_dim, hi = lo + head_dim;
    Tensor qh = params.heads == 1 ? q : slice_cols(q, lo, hi);
    Tensor kh = params.heads == 1 ? k : slice_cols(k, lo, hi);
    Tensor vh = params.heads == 1 ? v : slice_cols(v, lo, hi);
    Tensor weights = softmax_rows(scale(matmul_nt(qh, kh), inv_scale));
    heads.push_back(matmul(weights, vh));
  }
  Tensor merged = params.heads == 1 ? heads.front() : concat_cols(heads);
  return matmul(merged, params.wo);
}

Tensor self_attend(const Tensor& prompts, const AttentionParams& params) {
  if (prompts.rows() == 0) throw DimensionError("self_attend: no prompts");
  return multi_head_attend(prompts, prompts, params);
}

Tensor cross_attend(const Tensor& prompts, const Tensor& features, const AttentionParams& params) {
  if (features.rows() == 0) throw DimensionError("cross_attend: empty feature map");
  if (features.cols() != params.dim()) {
    throw DimensionError("cross_attend: feature dim " + std::to_string(features.cols()) + " != model dim " +
                         std::to_string(params.dim()));
  }
  return multi_head_attend(prompts, features, params);
}

Tensor causal_attention_weights(const Tensor& v_base, const Tensor& v_novel, const CausalAttentionParams& params) {
  const std::size_t dim = params.wq.rows();
  if (v_base.rows() == 0) throw DimensionError("causal_attend: needs at least one base prompt");
  if (v_base.cols() != dim || v_novel.cols() != dim) {
    throw DimensionError("causal_attend: prompts " + shape_str(v_base.shape()) + " / " + shape_str(v_novel.shape()) +
                         " do not match dim " + std::to_string(dim));
  }
  const Tensor q = matmul(v_novel, params.wq);
  const Tensor k = matmul(v_base, params.wk);
  return softmax_rows(matmul_nt(q, k));
}

Tensor causal_attend(const Tensor& v_base, const Tensor& v_novel, const CausalAttentionParams& params) {
  if (v_novel.rows() == 0) {
    if (v_base.rows() == 0) throw DimensionError("causal_attend: needs at least one base prompt");
    return Tensor::from({0, v_base.cols()}, {});
  }
  const Tensor weights = causal_attention_weights(v_base, v_novel, params);
  return matmul(weights, matmul(v_base, params.wv));
}

Tensor mlp_forward(const Tensor& x, const MlpParams& params) {
  Tensor h = activate(add_row(matmul(x, params.w1), params.b1), params.activation);
  h = activate(add_row(matmul(h, params.w2), params.b2), params.activation);
  return add_row(matmul(h, params.w3), params.b3);
}

}  // namespace promptseg
