#include "promptseg/decoder.hpp"

#include <cmath>
#include <sstream>

namespace promptseg {

using namespace ops;

namespace {

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

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw FormatError("bad boolean '" + s + "'");
}

}  // namespace

CausalMode parse_causal_mode(const std::string& name) {
  if (name == "none") return CausalMode::none;
  if (name == "first-layer") return CausalMode::first_layer;
  if (name == "separate") return CausalMode::separate;
  if (name == "shared") return CausalMode::shared;
  throw ConfigError("unknown causal attention mode '" + name + "' (none|first-layer|separate|shared)");
}

std::string to_string(CausalMode mode) {
  switch (mode) {
    case CausalMode::none: return "none";
    case CausalMode::first_layer: return "first-layer";
    case CausalMode::separate: return "separate";
    case CausalMode::shared: return "shared";
  }
  return "?";
}

const Tensor& FeaturePyramid::top() const {
  if (levels.empty()) throw ConfigError("feature pyramid has no levels");
  return levels.back();
}

void FeaturePyramid::validate() const {
  if (levels.empty()) throw ConfigError("feature pyramid has no levels");
  if (heights.size() != levels.size() || widths.size() != levels.size()) {
    throw ConfigError("feature pyramid extents do not match its level count");
  }
  const std::size_t dim = levels.front().cols();
  for (std::size_t l = 0; l < levels.size(); ++l) {
    if (levels[l].rows() != heights[l] * widths[l] || levels[l].cols() != dim) {
      throw DimensionError("pyramid level " + std::to_string(l) + " has shape " + shape_str(levels[l].shape()));
    }
    if (l && heights[l] * widths[l] <= heights[l - 1] * widths[l - 1]) {
      throw ConfigError("pyramid resolutions must increase from coarse to fine");
    }
  }
}

DecoderParams DecoderParams::init(const ModelConfig& cfg, Rng& rng) {
  DecoderParams p;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    DecoderLayerParams layer;
    layer.self_attn = AttentionParams::init(cfg.embed_dim, cfg.heads, rng);
    layer.cross_attn = AttentionParams::init(cfg.embed_dim, cfg.heads, rng);
    layer.norm.gamma = Tensor::full({1, cfg.embed_dim}, 1.0, true);
    layer.norm.beta = Tensor::zeros({1, cfg.embed_dim}, true);
    p.layers.push_back(std::move(layer));
  }
  p.layer_norm = cfg.layer_norm;
  p.cycle_levels = cfg.cycle_levels;
  p.causal_residual = cfg.causal_residual;
  p.mlp = MlpParams::init(cfg.embed_dim, cfg.activation, rng);
  return p;
}

void DecoderParams::add_causal(CausalMode mode, std::size_t dim, Rng& rng) {
  causal.clear();
  causal_mode = mode;
  std::size_t sets = 0;
  switch (mode) {
    case CausalMode::none: sets = 0; break;
    case CausalMode::first_layer:
    case CausalMode::shared: sets = 1; break;
    case CausalMode::separate: sets = layers.size(); break;
  }
  for (std::size_t i = 0; i < sets; ++i) causal.push_back(CausalAttentionParams::init(dim, rng));
}

std::size_t DecoderParams::causal_parameter_count() const {
  std::size_t n = 0;
  for (const auto& c : causal) n += c.parameter_count();
  return n;
}

const CausalAttentionParams* DecoderParams::causal_for_layer(std::size_t layer) const {
  if (causal.empty()) return nullptr;
  switch (causal_mode) {
    case CausalMode::none: return nullptr;
    case CausalMode::first_layer: return layer == 0 ? &causal.front() : nullptr;
    case CausalMode::shared: return &causal.front();
    case CausalMode::separate: return layer < causal.size() ? &causal[layer] : nullptr;
  }
  return nullptr;
}

Tensor refine_prompts(const Tensor& prompts, const Tensor& features, const DecoderLayerParams& layer,
                      bool layer_norm) {
  Tensor out = add(self_attend(prompts, layer.self_attn), cross_attend(prompts, features, layer.cross_attn));
  if (!layer_norm) return out;
  return add_row(mul_row(layer_norm_rows(out), layer.norm.gamma), layer.norm.beta);
}

const Tensor& level_for_layer(const FeaturePyramid& pyramid, std::size_t layer, bool cycle) {
  if (pyramid.levels.empty()) throw ConfigError("feature pyramid has no levels");
  if (!cycle && layer >= pyramid.size()) {
    throw ConfigError("decoder layer " + std::to_string(layer + 1) + " has no pyramid level (pyramid has " +
                      std::to_string(pyramid.size()) + ")");
  }
  return pyramid.levels[layer % pyramid.size()];
}

Tensor decode_base(const Tensor& v_base, const FeaturePyramid& pyramid, const DecoderParams& params) {
  if (pyramid.levels.empty()) throw ConfigError("feature pyramid has no levels");
  Tensor v = v_base;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    v = refine_prompts(v, level_for_layer(pyramid, l, params.cycle_levels), params.layers[l], params.layer_norm);
  }
  return v;
}

JointPrompts decode_joint(const Tensor& v_base, const Tensor& v_novel, const FeaturePyramid& pyramid,
                          const DecoderParams& params) {
  if (!v_novel.defined() || v_novel.rows() == 0) {
    throw ContractError("decode_joint needs at least one novel prompt; use decode_base");
  }
  if (pyramid.levels.empty()) throw ConfigError("feature pyramid has no levels");
  const std::size_t nb = v_base.rows();
  const std::size_t nn = v_novel.rows();
  Tensor vb = v_base;
  Tensor vn = v_novel;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    if (const auto* ca = params.causal_for_layer(l)) {
      Tensor refined = causal_attend(vb, vn, *ca);
      vn = params.causal_residual ? add(vn, refined) : refined;
    }
    Tensor va = concat_rows({vb, vn});
    va = refine_prompts(va, level_for_layer(pyramid, l, params.cycle_levels), params.layers[l], params.layer_norm);
    vb = slice_rows(va, 0, nb);
    vn = slice_rows(va, nb, nb + nn);
  }
  return {vb, vn};
}

SegOutput make_output(const Tensor& logits, std::size_t height, std::size_t width) {
  if (logits.rows() != height * width) {
    throw DimensionError("logits " + shape_str(logits.shape()) + " do not cover a " + std::to_string(height) + "x" +
                         std::to_string(width) + " grid");
  }
  SegOutput out;
  out.logits = logits;
  out.probs = softmax_rows(logits);
  out.height = height;
  out.width = width;
  const std::size_t k = logits.cols();
  out.argmax.resize(height * width);
  auto p = out.probs.data();
  for (std::size_t i = 0; i < height * width; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (p[i * k + c] > p[i * k + best]) best = c;
    out.argmax[i] = static_cast<int>(best);
  }
  return out;
}

Tensor base_head_logits(const Tensor& v_base, const Tensor& f_top, const MlpParams& mlp) {
  return matmul_nt(f_top, mlp_forward(v_base, mlp));
}

SegOutput base_head(const Tensor& v_base, const Tensor& f_top, const MlpParams& mlp, std::size_t height,
                    std::size_t width) {
  return make_output(base_head_logits(v_base, f_top, mlp), height, width);
}

Tensor novel_head_logits(const Tensor& v_novel, const Tensor& f_top, const MlpParams& frozen_mlp,
                         const Tensor& w_novel) {
  if (w_novel.shape() != v_novel.shape()) {
    throw DimensionError("novel head weights " + shape_str(w_novel.shape()) + " do not match prompts " +
                         shape_str(v_novel.shape()));
  }
  return matmul_nt(f_top, add(mlp_forward(v_novel, frozen_mlp), w_novel));
}

SegOutput full_forward(const PromptSet& prompts, const FeaturePyramid& pyramid, const DecoderParams& params) {
  const Tensor& f_top = pyramid.top();
  if (prompts.novel_count() == 0) {
    Tensor vb = decode_base(prompts.base, pyramid, params);
    return base_head(vb, f_top, params.mlp, pyramid.height(), pyramid.width());
  }
  if (!params.w_novel.defined()) throw ContractError("novel prompts present but no novel head weights");
  auto joint = decode_joint(prompts.base, prompts.novel, pyramid, params);
  Tensor logits = concat_cols({base_head_logits(joint.base, f_top, params.mlp),
                               novel_head_logits(joint.novel, f_top, params.mlp, params.w_novel)});
  return make_output(logits, pyramid.height(), pyramid.width());
}

PromptModel PromptModel::init_base(const ModelConfig& cfg, const std::vector<int>& base_class_ids, Rng& rng) {
  if (base_class_ids.empty()) throw ConfigError("a model needs at least the background prompt");
  PromptModel m;
  m.config = cfg;
  m.config.causal = CausalMode::none;
  m.params = DecoderParams::init(cfg, rng);
  m.prompts.base = random_normal({base_class_ids.size(), cfg.embed_dim}, 1.0, rng, true);
  m.base_class_ids = base_class_ids;
  return m;
}

int PromptModel::class_id(std::size_t channel) const {
  if (channel < base_class_ids.size()) return base_class_ids[channel];
  channel -= base_class_ids.size();
  if (channel < novel_class_ids.size()) return novel_class_ids[channel];
  throw DimensionError("model channel " + std::to_string(channel) + " out of range");
}

void PromptModel::visit(const std::function<void(const std::string&, Tensor&)>& f) {
  f("prompts.base", prompts.base);
  if (prompts.novel.defined()) f("prompts.novel", prompts.novel);
  params.visit("decoder", f);
}

std::vector<std::pair<std::string, Tensor>> PromptModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  PromptModel view = *this;  // shallow: handles share storage
  view.visit([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
  return out;
}

std::vector<std::pair<std::string, Tensor>> PromptModel::trainable_parameters() const {
  auto all = named_parameters();
  std::erase_if(all, [](const auto& p) { return !p.second.requires_grad(); });
  return all;
}

void PromptModel::set_trainable(const std::function<bool(const std::string&)>& trainable) {
  visit([&](const std::string& name, Tensor& t) { t.set_requires_grad(trainable(name)); });
  prompts.base_trainable = prompts.base.requires_grad();
  prompts.novel_trainable = prompts.novel.defined() && prompts.novel.requires_grad();
}

PromptModel PromptModel::clone() const {
  PromptModel copy = *this;
  copy.visit([](const std::string&, Tensor& t) { t = t.clone(t.requires_grad()); });
  return copy;
}

TensorArchive PromptModel::to_archive() const {
  TensorArchive ar;
  ar.set("format", "promptseg-checkpoint");
  ar.set("B", std::to_string(base_count()));
  ar.set("N", std::to_string(novel_count()));
  ar.set("C", std::to_string(config.embed_dim));
  ar.set("L", std::to_string(config.layers));
  ar.set("heads", std::to_string(config.heads));
  ar.set("activation", to_string(config.activation));
  ar.set("layer_norm", config.layer_norm ? "true" : "false");
  ar.set("cycle_levels", config.cycle_levels ? "true" : "false");
  ar.set("causal_attention", to_string(params.causal_mode));
  ar.set("causal_residual", params.causal_residual ? "true" : "false");
  ar.set("base_class_ids", join_ids(base_class_ids));
  ar.set("novel_class_ids", join_ids(novel_class_ids));
  for (auto& [name, t] : named_parameters()) {
    ar.put(name, t);
    ar.set("trainable." + name, t.requires_grad() ? "true" : "false");
  }
  return ar;
}

PromptModel PromptModel::from_archive(const TensorArchive& ar) {
  if (ar.get_or("format", "") != "promptseg-checkpoint") throw FormatError("archive is not a model checkpoint");
  ModelConfig cfg;
  cfg.embed_dim = std::stoul(ar.get("C"));
  cfg.layers = std::stoul(ar.get("L"));
  cfg.heads = std::stoul(ar.get("heads"));
  cfg.activation = parse_activation(ar.get("activation"));
  cfg.layer_norm = parse_bool(ar.get("layer_norm"));
  cfg.cycle_levels = parse_bool(ar.get("cycle_levels"));
  cfg.causal = parse_causal_mode(ar.get("causal_attention"));
  cfg.causal_residual = parse_bool(ar.get("causal_residual"));

  PromptModel m;
  m.config = cfg;
  m.base_class_ids = split_ids(ar.get("base_class_ids"));
  m.novel_class_ids = split_ids(ar.get("novel_class_ids"));
  const std::size_t n_novel = std::stoul(ar.get("N"));

  // Rebuild the parameter skeleton, then overwrite every tensor by name.
  Rng rng(0);
  m.params = DecoderParams::init(cfg, rng);
  m.params.add_causal(cfg.causal, cfg.embed_dim, rng);
  m.params.causal_residual = cfg.causal_residual;
  m.prompts.base = ar.tensor("prompts.base");
  if (n_novel > 0) {
    m.prompts.novel = ar.tensor("prompts.novel");
    m.params.w_novel = ar.tensor("head.w_novel");
  }
  m.visit([&](const std::string& name, Tensor& t) {
    t = ar.tensor(name).clone(ar.get_or("trainable." + name, "false") == "true");
  });
  m.prompts.base_trainable = m.prompts.base.requires_grad();
  m.prompts.novel_trainable = m.prompts.novel.defined() && m.prompts.novel.requires_grad();
  return m;
}

}  // namespace promptseg
