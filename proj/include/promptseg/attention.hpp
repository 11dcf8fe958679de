#pragma once

// Attention blocks composed by the prompt decoder. Linear maps act on the
// right (x * W), so every projection matrix is [in x out] = [C x C].

#include <string>

#include "promptseg/init.hpp"
#include "promptseg/ops.hpp"

namespace promptseg {

// Multi-head scaled dot-product attention parameters. Head h uses columns
// [h*C/heads, (h+1)*C/heads) of each projection.
struct AttentionParams {
  Tensor wq, wk, wv, wo;
  std::size_t heads = 4;

  static AttentionParams init(std::size_t dim, std::size_t heads, Rng& rng);
  std::size_t dim() const { return wq.rows(); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".wq", wq);
    f(prefix + ".wk", wk);
    f(prefix + ".wv", wv);
    f(prefix + ".wo", wo);
  }
};

// Single-head novel-to-base attention: Q = V_N W_Q, K = V_B W_K, V = V_B W_V.
struct CausalAttentionParams {
  Tensor wq, wk, wv;

  static CausalAttentionParams init(std::size_t dim, Rng& rng);
  std::size_t parameter_count() const { return wq.numel() + wk.numel() + wv.numel(); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".wq", wq);
    f(prefix + ".wk", wk);
    f(prefix + ".wv", wv);
  }
};

// Three affine layers C -> C -> C -> C with an activation after the first two.
struct MlpParams {
  Tensor w1, b1, w2, b2, w3, b3;
  ops::Activation activation = ops::Activation::gelu;

  static MlpParams init(std::size_t dim, ops::Activation act, Rng& rng);

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".w1", w1);
    f(prefix + ".b1", b1);
    f(prefix + ".w2", w2);
    f(prefix + ".b2", b2);
    f(prefix + ".w3", w3);
    f(prefix + ".b3", b3);
  }
};

// Generic multi-head attention of `queries` over `context`.
Tensor multi_head_attend(const Tensor& queries, const Tensor& context, const AttentionParams& params);

Tensor self_attend(const Tensor& prompts, const AttentionParams& params);
Tensor cross_attend(const Tensor& prompts, const Tensor& features, const AttentionParams& params);

// Refined novel prompts softmax((V_N W_Q)(V_B W_K)^T)(V_B W_V), one row per
// novel prompt. v_base is only read. An empty v_novel yields an empty result.
Tensor causal_attend(const Tensor& v_base, const Tensor& v_novel, const CausalAttentionParams& params);

// Row-stochastic attention weights of the causal block, for inspection.
Tensor causal_attention_weights(const Tensor& v_base, const Tensor& v_novel, const CausalAttentionParams& params);

Tensor mlp_forward(const Tensor& x, const MlpParams& params);

}  // namespace promptseg
