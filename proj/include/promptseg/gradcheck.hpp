#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "promptseg/tensor.hpp"

namespace promptseg {

using NamedTensor = std::pair<std::string, Tensor>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
};

// Compares the tape gradient of `loss_fn` with central differences for every
// entry of every parameter. The relative error of an entry is
// |analytic - numeric| / max(1, |numeric|). `loss_fn` must rebuild its graph
// from the current parameter values on every call.
GradCheckResult finite_diff_check(const std::function<Tensor()>& loss_fn, const std::vector<NamedTensor>& params,
                                  double step = 1e-5);

}  // namespace promptseg
