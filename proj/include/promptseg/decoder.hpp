#pragma once

// Multi-scale visual prompting decoder.
//
// Base prompts are refined layer by layer: at layer l they self-attend, cross
// attend to pyramid level l-1, the two results are summed and normalised.
// Once novel prompts exist, each layer first refines them from the base
// prompts through the causal block, then the concatenation [V_B; V_N] goes
// through the same self/cross step and is split back in order.
//
// Heads: base logits = MLP(V_B) . F^T; novel logits = (MLP(V_N) + W_N) . F^T,
// where F is the finest pyramid level. Logits and probabilities are stored
// pixel-major as [H*W x classes] so the class softmax is a row softmax.

#include <functional>
#include <string>
#include <vector>

#include "promptseg/archive.hpp"
#include "promptseg/attention.hpp"

namespace promptseg {

enum class CausalMode { none, first_layer, separate, shared };

CausalMode parse_causal_mode(const std::string& name);
std::string to_string(CausalMode mode);

struct ModelConfig {
  std::size_t embed_dim = 32;
  std::size_t layers = 3;
  std::size_t heads = 4;
  ops::Activation activation = ops::Activation::gelu;
  bool layer_norm = true;
  // Layer l attends level (l-1) mod levels; when false, L must not exceed the level count.
  bool cycle_levels = true;
  CausalMode causal = CausalMode::shared;
  // V_N + CA(V_B, V_N) instead of replacement.
  bool causal_residual = false;
};

struct LayerNormParams {
  Tensor gamma, beta;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

struct DecoderLayerParams {
  AttentionParams self_attn;
  AttentionParams cross_attn;
  LayerNormParams norm;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    self_attn.visit(prefix + ".self_attn", f);
    cross_attn.visit(prefix + ".cross_attn", f);
    norm.visit(prefix + ".norm", f);
  }
};

struct DecoderParams {
  std::vector<DecoderLayerParams> layers;
  // Empty for CausalMode::none, one set for first_layer/shared, one per layer for separate.
  std::vector<CausalAttentionParams> causal;
  CausalMode causal_mode = CausalMode::none;
  bool causal_residual = false;
  bool layer_norm = true;
  bool cycle_levels = true;
  MlpParams mlp;
  // Residual novel head weights [N x C]; undefined before novel classes are added.
  Tensor w_novel;

  static DecoderParams init(const ModelConfig& cfg, Rng& rng);

  // Adds causal attention parameters for `mode` (replacing any existing ones).
  void add_causal(CausalMode mode, std::size_t dim, Rng& rng);
  std::size_t causal_parameter_count() const;
  // Causal block used at decoder layer `layer` (0-based); nullptr means identity.
  const CausalAttentionParams* causal_for_layer(std::size_t layer) const;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].visit(prefix + ".layer" + std::to_string(l), f);
    for (std::size_t i = 0; i < causal.size(); ++i) causal[i].visit("causal." + std::to_string(i), f);
    mlp.visit("head.mlp", f);
    if (w_novel.defined()) f("head.w_novel", w_novel);
  }
};

struct PromptSet {
  Tensor base;   // [B x C]; row 0 is the background prompt
  Tensor novel;  // [N x C]; undefined or zero rows when N = 0
  bool base_trainable = true;
  bool novel_trainable = true;

  std::size_t base_count() const { return base.defined() ? base.rows() : 0; }
  std::size_t novel_count() const { return novel.defined() ? novel.rows() : 0; }
};

struct FeaturePyramid {
  // Coarse to fine; levels[l] is [(H_l*W_l) x C].
  std::vector<Tensor> levels;
  std::vector<std::size_t> heights;
  std::vector<std::size_t> widths;

  std::size_t size() const { return levels.size(); }
  const Tensor& top() const;
  std::size_t height() const { return heights.back(); }
  std::size_t width() const { return widths.back(); }
  std::size_t dim() const { return top().cols(); }
  // Throws unless extents strictly increase and all levels share one embedding dim.
  void validate() const;
};

struct SegOutput {
  Tensor logits;  // [H*W x K]
  Tensor probs;   // [H*W x K]
  std::vector<int> argmax;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t classes() const { return probs.cols(); }
  std::size_t pixels() const { return height * width; }
  double prob(std::size_t cls, std::size_t y, std::size_t x) const { return probs.at(y * width + x, cls); }
  double logit(std::size_t cls, std::size_t y, std::size_t x) const { return logits.at(y * width + x, cls); }
};

// One refinement step: norm(A(V) + C(V, F)).
Tensor refine_prompts(const Tensor& prompts, const Tensor& features, const DecoderLayerParams& layer,
                      bool layer_norm);

const Tensor& level_for_layer(const FeaturePyramid& pyramid, std::size_t layer, bool cycle);

Tensor decode_base(const Tensor& v_base, const FeaturePyramid& pyramid, const DecoderParams& params);

struct JointPrompts {
  Tensor base;
  Tensor novel;
};

JointPrompts decode_joint(const Tensor& v_base, const Tensor& v_novel, const FeaturePyramid& pyramid,
                          const DecoderParams& params);

// Builds probabilities and the argmax map (lowest index wins ties).
SegOutput make_output(const Tensor& logits, std::size_t height, std::size_t width);

SegOutput base_head(const Tensor& v_base, const Tensor& f_top, const MlpParams& mlp, std::size_t height,
                    std::size_t width);
Tensor base_head_logits(const Tensor& v_base, const Tensor& f_top, const MlpParams& mlp);
Tensor novel_head_logits(const Tensor& v_novel, const Tensor& f_top, const MlpParams& frozen_mlp,
                         const Tensor& w_novel);

SegOutput full_forward(const PromptSet& prompts, const FeaturePyramid& pyramid, const DecoderParams& params);

// Prompts, decoder parameters and the class bookkeeping of one model.
struct PromptModel {
  ModelConfig config;
  PromptSet prompts;
  DecoderParams params;
  std::vector<int> base_class_ids;   // prompt index -> world class id; [0] is background
  std::vector<int> novel_class_ids;  // novel prompt index -> world class id

  static PromptModel init_base(const ModelConfig& cfg, const std::vector<int>& base_class_ids, Rng& rng);

  std::size_t base_count() const { return prompts.base_count(); }
  std::size_t novel_count() const { return prompts.novel_count(); }
  std::size_t class_count() const { return base_count() + novel_count(); }
  // World class id of model channel k.
  int class_id(std::size_t channel) const;

  SegOutput forward(const FeaturePyramid& pyramid) const { return full_forward(prompts, pyramid, params); }

  // Deep copy: no tensor is shared with the source.
  PromptModel clone() const;

  // Visits every parameter with a stable hierarchical name.
  void visit(const std::function<void(const std::string&, Tensor&)>& f);
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<std::pair<std::string, Tensor>> trainable_parameters() const;
  // Sets requires_grad on every parameter from a name predicate.
  void set_trainable(const std::function<bool(const std::string&)>& trainable);

  TensorArchive to_archive() const;
  static PromptModel from_archive(const TensorArchive& ar);
};

}  // namespace promptseg
