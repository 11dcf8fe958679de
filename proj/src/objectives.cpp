#include "promptseg/objectives.hpp"

#include <cmath>

#include "promptseg/ops.hpp"

namespace promptseg {

using namespace ops;

PriorMode parse_prior_mode(const std::string& name) {
  if (name == "from-predictions") return PriorMode::from_predictions;
  if (name == "oracle") return PriorMode::oracle;
  throw ConfigError("unknown prior mode '" + name + "' (from-predictions|oracle)");
}

std::string to_string(PriorMode mode) { return mode == PriorMode::oracle ? "oracle" : "from-predictions"; }

void TransductiveConfig::validate() const {
  if (!(alpha >= 0.0) || !(gamma >= 0.0)) throw ConfigError("alpha and gamma must be non-negative");
}

RegionPrior RegionPrior::uniform(std::size_t classes) {
  return {std::vector<double>(classes, 1.0 / static_cast<double>(classes))};
}

void RegionPrior::validate() const {
  if (pi.empty()) throw ConfigError("empty region prior");
  double s = 0.0;
  for (double p : pi) {
    if (!(p >= 0.0)) throw ConfigError("region prior has a negative or NaN entry");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ConfigError("region prior sums to " + std::to_string(s));
}

Tensor pixel_ce(const Tensor& probs, const std::vector<int>& labels, int ignore_id) {
  const std::size_t n = probs.rows(), k = probs.cols();
  if (labels.size() != n) {
    throw DimensionError("pixel_ce: " + std::to_string(labels.size()) + " labels for " + shape_str(probs.shape()));
  }
  std::vector<double> onehot(n * k, 0.0);
  std::size_t counted = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == ignore_id) continue;
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw DimensionError("pixel_ce: label " + std::to_string(labels[i]) + " outside " + std::to_string(k) +
                           " classes");
    }
    onehot[i * k + static_cast<std::size_t>(labels[i])] = 1.0;
    ++counted;
  }
  if (counted == 0) throw UndefinedLossError("pixel_ce: every pixel is ignored");
  Tensor y = Tensor::from(probs.shape(), std::move(onehot));
  return scale(sum(mul(y, log_floor(probs, kLogFloor))), -1.0 / static_cast<double>(counted));
}

Tensor pixel_entropy(const Tensor& probs) {
  return scale(sum(mul(probs, log_floor(probs, kLogFloor))), -1.0 / static_cast<double>(probs.rows()));
}

Tensor conditional_entropy(const Tensor& support_ce, const Tensor& query_probs) {
  return add(support_ce, pixel_entropy(query_probs));
}

Tensor marginal_kl(const Tensor& query_probs, const RegionPrior& prior, const WarningSink& warn) {
  prior.validate();
  const std::size_t k = query_probs.cols();
  if (prior.pi.size() != k) {
    throw DimensionError("marginal_kl: prior over " + std::to_string(prior.pi.size()) + " classes, predictions over " +
                         std::to_string(k));
  }
  Tensor q = col_mean(query_probs);
  std::vector<double> log_pi(k);
  for (std::size_t c = 0; c < k; ++c) {
    if (prior.pi[c] < kLogFloor && q[c] > 0.0 && warn) {
      warn("marginal_kl: prior entry " + std::to_string(c) + " is below the log floor; clamped to 1e-8");
    }
    log_pi[c] = std::log(std::max(prior.pi[c], kLogFloor));
  }
  return sum(mul(q, sub(log_floor(q, kLogFloor), Tensor::from({1, k}, std::move(log_pi)))));
}

RegionPrior estimate_prior(const Tensor& probs) {
  Tensor q = col_mean(probs.detach());
  RegionPrior p{std::vector<double>(q.data().begin(), q.data().end())};
  double s = 0.0;
  for (double v : p.pi) s += v;
  for (auto& v : p.pi) v /= s;
  return p;
}

RegionPrior oracle_prior(const std::vector<int>& labels, std::size_t classes) {
  if (labels.empty()) throw UndefinedLossError("oracle_prior: empty label map");
  RegionPrior p{std::vector<double>(classes, 0.0)};
  for (int id : labels) {
    if (id < 0 || static_cast<std::size_t>(id) >= classes) throw DimensionError("oracle_prior: label out of range");
    p.pi[static_cast<std::size_t>(id)] += 1.0;
  }
  for (auto& v : p.pi) v /= static_cast<double>(labels.size());
  return p;
}

Tensor renormalize_base(const Tensor& probs, std::size_t base_classes) {
  if (base_classes == 0 || base_classes > probs.cols()) throw DimensionError("renormalize_base: bad base count");
  Tensor base = slice_cols(probs, 0, base_classes);
  return div_col(base, row_sum(base));
}

Tensor kd_loss(const Tensor& new_base, const Tensor& old_base) {
  if (new_base.shape() != old_base.shape()) {
    throw DimensionError("kd_loss: " + shape_str(new_base.shape()) + " vs " + shape_str(old_base.shape()));
  }
  Tensor log_ratio = sub(log_floor(new_base, kLogFloor), log_floor(old_base, kLogFloor));
  return scale(sum(mul(new_base, log_ratio)), 1.0 / static_cast<double>(new_base.rows()));
}

Tensor transductive_loss(const TransductiveTerms& t, const TransductiveConfig& cfg) {
  return weighted_sum({t.support_ce, t.query_entropy, t.marginal, t.kd}, {cfg.alpha, cfg.alpha, 1.0, cfg.gamma});
}

AdamW::AdamW(std::vector<NamedTensor> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& [name, p] : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

void AdamW::step() {
  // Validate everything before touching any parameter.
  for (const auto& [name, p] : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient for parameter '" + name + "'");
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    const std::vector<double> g = p.grad();
    auto data = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      data[j] -= cfg_.lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * data[j]);
    }
    p.zero_grad();
  }
}

AdamW AdamW::rebind(const std::vector<NamedTensor>& params) const {
  if (params.size() != params_.size()) throw ContractError("rebind: parameter lists differ in length");
  AdamW out(params, cfg_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].first != params_[i].first || params[i].second.shape() != params_[i].second.shape()) {
      throw ContractError("rebind: parameter '" + params[i].first + "' does not match '" + params_[i].first + "'");
    }
  }
  out.m_ = m_;
  out.v_ = v_;
  out.t_ = t_;
  return out;
}

}  // namespace promptseg
