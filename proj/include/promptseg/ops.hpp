#pragma once

// Differentiable primitives over rank-2 row-major tensors. Every op records a
// gradient closure only when at least one input requires a gradient.

#include <vector>

#include "promptseg/tensor.hpp"

namespace promptseg::ops {

enum class Activation { gelu, relu, identity };

Activation parse_activation(const std::string& name);
std::string to_string(Activation act);

// [m x k] * [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m x k] * [n x k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// Broadcast a [1 x n] row over every row of a [m x n] tensor.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor mul_row(const Tensor& a, const Tensor& row);
// Divide each row i of a [m x n] tensor by col[i] of a [m x 1] tensor.
Tensor div_col(const Tensor& a, const Tensor& col);

// Row-wise softmax, stabilised by subtracting the row maximum.
Tensor softmax_rows(const Tensor& x);
// Row-wise standardisation (zero mean, unit variance) without affine terms.
Tensor layer_norm_rows(const Tensor& x, double eps = 1e-5);

Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor activate(const Tensor& x, Activation act);

// log(max(x, floor)); gradient is zero where the floor is active.
Tensor log_floor(const Tensor& x, double floor = 1e-8);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);

// Scalar reductions ([1] shaped).
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// [m x n] -> [1 x n] mean over rows.
Tensor col_mean(const Tensor& x);
// [m x n] -> [m x 1] sum over columns.
Tensor row_sum(const Tensor& x);

// Weighted sum of scalars: sum_i w_i * t_i.
Tensor weighted_sum(const std::vector<Tensor>& terms, const std::vector<double>& weights);

}  // namespace promptseg::ops
