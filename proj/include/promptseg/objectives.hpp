#pragma once

// Training losses and the optimizer. Probability tensors are pixel-major
// [pixels x classes]; every logarithm is floored at 1e-8.

#include <functional>
#include <string>
#include <vector>

#include "promptseg/gradcheck.hpp"
#include "promptseg/tensor.hpp"

namespace promptseg {

struct UndefinedLossError : std::domain_error {
  using std::domain_error::domain_error;
};

inline constexpr double kLogFloor = 1e-8;

enum class PriorMode { from_predictions, oracle };

PriorMode parse_prior_mode(const std::string& name);
std::string to_string(PriorMode mode);

struct TransductiveConfig {
  double alpha = 100.0;
  double gamma = 25.0;
  std::size_t ce_only_iters = 40;
  std::size_t full_iters = 60;
  PriorMode prior_mode = PriorMode::from_predictions;

  void validate() const;
};

struct RegionPrior {
  std::vector<double> pi;

  static RegionPrior uniform(std::size_t classes);
  // Throws ConfigError unless entries are >= 0 and sum to 1 (1e-9).
  void validate() const;
};

// Mean of -log p(label) over pixels whose label is not `ignore_id`.
Tensor pixel_ce(const Tensor& probs, const std::vector<int>& labels, int ignore_id = -1);

// Mean over pixels of -sum_c p log p.
Tensor pixel_entropy(const Tensor& probs);

// H(O|I): support cross-entropy plus query entropy.
Tensor conditional_entropy(const Tensor& support_ce, const Tensor& query_probs);

using WarningSink = std::function<void(const std::string&)>;

// KL(q || pi) with q the mean predicted distribution over query pixels.
// Zero prior entries are floored; the sink is told when that matters.
Tensor marginal_kl(const Tensor& query_probs, const RegionPrior& prior, const WarningSink& warn = {});

// Mean predicted distribution (held fixed by the caller once taken).
RegionPrior estimate_prior(const Tensor& probs);
// Ground-truth class proportions of a label map, over `classes` channels.
RegionPrior oracle_prior(const std::vector<int>& labels, std::size_t classes);

// First `base_classes` columns of a joint distribution, renormalised per pixel.
Tensor renormalize_base(const Tensor& probs, std::size_t base_classes);

// Mean over pixels of KL(new || old).
Tensor kd_loss(const Tensor& new_base, const Tensor& old_base);

struct TransductiveTerms {
  Tensor support_ce;
  Tensor query_entropy;
  Tensor marginal;
  Tensor kd;
};

// alpha * (support_ce + query_entropy) + marginal + gamma * kd
Tensor transductive_loss(const TransductiveTerms& terms, const TransductiveConfig& cfg);

struct AdamWConfig {
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// Adaptive moments with bias correction and decoupled weight decay:
// p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
class AdamW {
 public:
  AdamW(std::vector<NamedTensor> params, AdamWConfig cfg);

  // Applies one update from the accumulated gradients, then clears them.
  // A non-finite gradient aborts with NumericError naming the parameter.
  void step();
  void zero_grad();

  std::size_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const std::vector<NamedTensor>& params() const { return params_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }

  // Same moments and step count, applied to a parallel list of parameters
  // (matched by name).
  AdamW rebind(const std::vector<NamedTensor>& params) const;

 private:
  std::vector<NamedTensor> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace promptseg
