#include "promptseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace promptseg {

GradCheckResult finite_diff_check(const std::function<Tensor()>& loss_fn, const std::vector<NamedTensor>& params,
                                  double step) {
  for (auto [name, p] : params) {
    if (!p.is_leaf()) throw ContractError("gradient check parameter '" + name + "' is not a leaf");
    p.zero_grad();
  }
  loss_fn().backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, p] : params) analytic.push_back(p.grad());

  GradCheckResult res;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k].second;
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss_fn().item();
      values[i] = saved - step;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric));
      ++res.entries_checked;
      if (res.worst_param.empty() || err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_param = params[k].first;
        res.worst_index = i;
      }
    }
  }
  return res;
}

}  // namespace promptseg
