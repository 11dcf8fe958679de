#pragma once

#include <random>

#include "promptseg/tensor.hpp"

namespace promptseg {

using Rng = std::mt19937_64;

inline Tensor random_normal(Shape shape, double sigma, Rng& rng, bool requires_grad = false) {
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(values), requires_grad);
}

}  // namespace promptseg
