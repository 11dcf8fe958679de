#include "promptseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace promptseg::ops {

using detail::Node;

namespace {

struct Matrix {
  std::size_t rows;
  std::size_t cols;
};

Matrix as_matrix(const Tensor& t, const char* what) {
  const auto& s = t.shape();
  if (s.size() == 2) return {s[0], s[1]};
  if (s.size() == 1) return {1, s[0]};
  throw DimensionError(std::string(what) + ": expected a matrix, got " + shape_str(s));
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(double* c, const double* a, const double* b, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(double* c, const double* a, const double* b, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(double* c, const double* a, const double* b, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// Builds the output node; `make_backward` receives the output node and is
// only invoked when a gradient is needed.
template <typename MakeBackward>
Tensor result(Shape shape, std::vector<double> data, std::vector<const Tensor*> inputs,
              MakeBackward&& make_backward) {
  auto out = std::make_shared<Node>();
  out->shape = std::move(shape);
  out->data = std::move(data);
  bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
  if (needs) {
    out->requires_grad = true;
    for (const auto* t : inputs) out->parents.push_back(t->node_ptr());
    out->backward = make_backward(out.get());
  }
  return Tensor::wrap(std::move(out));
}

Node* raw(const Tensor& t) { return t.node_ptr().get(); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

Activation parse_activation(const std::string& name) {
  if (name == "gelu") return Activation::gelu;
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::gelu: return "gelu";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
  }
  return "?";
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  auto [m, k] = as_matrix(a, "matmul");
  auto [k2, n] = as_matrix(b, "matmul");
  if (k != k2) {
    throw DimensionError("matmul: inner extents differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(out.data(), a.data().data(), b.data().data(), m, k, n);
  return result({m, n}, std::move(out), {&a, &b}, [an = raw(a), bn = raw(b), m, k, n](Node* o) {
    return [o, an, bn, m, k, n]() {
      if (an->requires_grad) gemm_nt(an->grad_buffer().data(), o->grad.data(), bn->data.data(), m, n, k);
      if (bn->requires_grad) gemm_tn(bn->grad_buffer().data(), an->data.data(), o->grad.data(), k, m, n);
    };
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  auto [m, k] = as_matrix(a, "matmul_nt");
  auto [n, k2] = as_matrix(b, "matmul_nt");
  if (k != k2) {
    throw DimensionError("matmul_nt: inner extents differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nt(out.data(), a.data().data(), b.data().data(), m, k, n);
  return result({m, n}, std::move(out), {&a, &b}, [an = raw(a), bn = raw(b), m, k, n](Node* o) {
    return [o, an, bn, m, k, n]() {
      if (an->requires_grad) gemm_nn(an->grad_buffer().data(), o->grad.data(), bn->data.data(), m, n, k);
      if (bn->requires_grad) gemm_tn(bn->grad_buffer().data(), o->grad.data(), an->data.data(), n, m, k);
    };
  });
}

Tensor transpose(const Tensor& a) {
  auto [m, n] = as_matrix(a, "transpose");
  std::vector<double> out(m * n);
  auto d = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = d[i * n + j];
  return result({n, m}, std::move(out), {&a}, [an = raw(a), m, n](Node* o) {
    return [o, an, m, n]() {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += o->grad[j * m + i];
    };
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  return result(a.shape(), std::move(out), {&a, &b}, [an = raw(a), bn = raw(b)](Node* o) {
    return [o, an, bn]() {
      for (Node* p : {an, bn}) {
        if (!p->requires_grad) continue;
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
      }
    };
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
  return result(a.shape(), std::move(out), {&a, &b}, [an = raw(a), bn = raw(b)](Node* o) {
    return [o, an, bn]() {
      if (an->requires_grad) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o->grad[i];
      }
    };
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  return result(a.shape(), std::move(out), {&a, &b}, [an = raw(a), bn = raw(b)](Node* o) {
    return [o, an, bn]() {
      if (an->requires_grad) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * an->data[i];
      }
    };
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return result(a.shape(), std::move(out), {&a}, [an = raw(a), factor](Node* o) {
    return [o, an, factor]() {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * o->grad[i];
    };
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  auto [m, n] = as_matrix(a, "add_row");
  if (row.numel() != n) {
    throw DimensionError("add_row: row " + shape_str(row.shape()) + " does not match " + shape_str(a.shape()));
  }
  std::vector<double> out(m * n);
  auto da = a.data(), dr = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = da[i * n + j] + dr[j];
  return result(a.shape(), std::move(out), {&a, &row}, [an = raw(a), rn = raw(row), m, n](Node* o) {
    return [o, an, rn, m, n]() {
      if (an->requires_grad) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
      }
      if (rn->requires_grad) {
        auto& g = rn->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[j] += o->grad[i * n + j];
      }
    };
  });
}

Tensor mul_row(const Tensor& a, const Tensor& row) {
  auto [m, n] = as_matrix(a, "mul_row");
  if (row.numel() != n) {
    throw DimensionError("mul_row: row " + shape_str(row.shape()) + " does not match " + shape_str(a.shape()));
  }
  std::vector<double> out(m * n);
  auto da = a.data(), dr = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = da[i * n + j] * dr[j];
  return result(a.shape(), std::move(out), {&a, &row}, [an = raw(a), rn = raw(row), m, n](Node* o) {
    return [o, an, rn, m, n]() {
      if (an->requires_grad) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[i * n + j] += o->grad[i * n + j] * rn->data[j];
      }
      if (rn->requires_grad) {
        auto& g = rn->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[j] += o->grad[i * n + j] * an->data[i * n + j];
      }
    };
  });
}

Tensor div_col(const Tensor& a, const Tensor& col) {
  auto [m, n] = as_matrix(a, "div_col");
  if (col.numel() != m) {
    throw DimensionError("div_col: column " + shape_str(col.shape()) + " does not match " + shape_str(a.shape()));
  }
  std::vector<double> out(m * n);
  auto da = a.data(), dc = col.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = da[i * n + j] / dc[i];
  return result(a.shape(), std::move(out), {&a, &col}, [an = raw(a), cn = raw(col), m, n](Node* o) {
    return [o, an, cn, m, n]() {
      if (an->requires_grad) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[i * n + j] += o->grad[i * n + j] / cn->data[i];
      }
      if (cn->requires_grad) {
        auto& g = cn->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += o->grad[i * n + j] * an->data[i * n + j];
          g[i] -= acc / (cn->data[i] * cn->data[i]);
        }
      }
    };
  });
}

Tensor softmax_rows(const Tensor& x) {
  auto [m, n] = as_matrix(x, "softmax_rows");
  std::vector<double> out(m * n);
  auto dx = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = dx.data() + i * n;
    double* yi = out.data() + i * n;
    double mx = *std::max_element(xi, xi + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (yi[j] = std::exp(xi[j] - mx));
    for (std::size_t j = 0; j < n; ++j) yi[j] /= z;
  }
  return result(x.shape(), std::move(out), {&x}, [xn = raw(x), m, n](Node* o) {
    return [o, xn, m, n]() {
      auto& g = xn->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        const double* yi = o->data.data() + i * n;
        const double* gi = o->grad.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += gi[j] * yi[j];
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += yi[j] * (gi[j] - dot);
      }
    };
  });
}

Tensor layer_norm_rows(const Tensor& x, double eps) {
  auto [m, n] = as_matrix(x, "layer_norm_rows");
  std::vector<double> out(m * n);
  std::vector<double> inv_std(m);
  auto dx = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = dx.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xi[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = (xi[j] - mu) * inv_std[i];
  }
  return result(x.shape(), std::move(out), {&x}, [xn = raw(x), m, n, inv_std](Node* o) {
    return [o, xn, m, n, inv_std]() {
      auto& g = xn->grad_buffer();
      const double dn = static_cast<double>(n);
      for (std::size_t i = 0; i < m; ++i) {
        const double* yi = o->data.data() + i * n;
        const double* gi = o->grad.data() + i * n;
        double gmean = 0.0, gy = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          gmean += gi[j];
          gy += gi[j] * yi[j];
        }
        gmean /= dn;
        gy /= dn;
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += inv_std[i] * (gi[j] - gmean - yi[j] * gy);
      }
    };
  });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * dx[i] * (1.0 + std::erf(dx[i] / std::numbers::sqrt2));
  return result(x.shape(), std::move(out), {&x}, [xn = raw(x)](Node* o) {
    return [o, xn]() {
      auto& g = xn->grad_buffer();
      const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xn->data[i];
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        g[i] += o->grad[i] * (cdf + v * pdf);
      }
    };
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] > 0.0 ? dx[i] : 0.0;
  return result(x.shape(), std::move(out), {&x}, [xn = raw(x)](Node* o) {
    return [o, xn]() {
      auto& g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xn->data[i] > 0.0) g[i] += o->grad[i];
    };
  });
}

Tensor activate(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::gelu: return gelu(x);
    case Activation::relu: return relu(x);
    case Activation::identity: return x;
  }
  return x;
}

Tensor log_floor(const Tensor& x, double floor) {
  std::vector<double> out(x.numel());
  auto dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(dx[i], floor));
  return result(x.shape(), std::move(out), {&x}, [xn = raw(x), floor](Node* o) {
    return [o, xn, floor]() {
      auto& g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xn->data[i] > floor) g[i] += o->grad[i] / xn->data[i];
    };
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const std::size_t n = as_matrix(parts.front(), "concat_rows").cols;
  std::size_t m = 0;
  std::vector<double> out;
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) {
    auto [pm, pn] = as_matrix(p, "concat_rows");
    if (pn != n) throw DimensionError("concat_rows: column mismatch " + shape_str(p.shape()));
    m += pm;
    out.insert(out.end(), p.data().begin(), p.data().end());
    inputs.push_back(&p);
  }
  std::vector<Node*> nodes;
  for (const auto& p : parts) nodes.push_back(raw(p));
  return result({m, n}, std::move(out), inputs, [nodes](Node* o) {
    return [o, nodes]() {
      std::size_t offset = 0;
      for (Node* p : nodes) {
        if (p->requires_grad) {
          auto& g = p->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[offset + i];
        }
        offset += p->data.size();
      }
    };
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t m = as_matrix(parts.front(), "concat_cols").rows;
  std::vector<std::size_t> widths;
  std::size_t n = 0;
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) {
    auto [pm, pn] = as_matrix(p, "concat_cols");
    if (pm != m) throw DimensionError("concat_cols: row mismatch " + shape_str(p.shape()));
    widths.push_back(pn);
    n += pn;
    inputs.push_back(&p);
  }
  std::vector<double> out(m * n);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto d = parts[k].data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * n + off + j] = d[i * widths[k] + j];
    off += widths[k];
  }
  std::vector<Node*> nodes;
  for (const auto& p : parts) nodes.push_back(raw(p));
  return result({m, n}, std::move(out), inputs, [nodes, widths, m, n](Node* o) {
    return [o, nodes, widths, m, n]() {
      std::size_t off = 0;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (nodes[k]->requires_grad) {
          auto& g = nodes[k]->grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += o->grad[i * n + off + j];
        }
        off += widths[k];
      }
    };
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  auto [m, n] = as_matrix(x, "slice_rows");
  if (begin > end || end > m) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of " +
                         shape_str(x.shape()));
  }
  auto d = x.data();
  std::vector<double> out(d.begin() + begin * n, d.begin() + end * n);
  if (end == begin) {
    // Empty results carry no history.
    return Tensor::from({0, n}, {});
  }
  return result({end - begin, n}, std::move(out), {&x}, [xn = raw(x), begin, n](Node* o) {
    return [o, xn, begin, n]() {
      auto& g = xn->grad_buffer();
      for (std::size_t i = 0; i < o->grad.size(); ++i) g[begin * n + i] += o->grad[i];
    };
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  auto [m, n] = as_matrix(x, "slice_cols");
  if (begin >= end || end > n) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of " +
                         shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(m * w);
  auto d = x.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = d[i * n + begin + j];
  return result({m, w}, std::move(out), {&x}, [xn = raw(x), begin, m, n, w](Node* o) {
    return [o, xn, begin, m, n, w]() {
      auto& g = xn->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += o->grad[i * w + j];
    };
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return result(std::move(shape), std::move(out), {&x}, [xn = raw(x)](Node* o) {
    return [o, xn]() {
      auto& g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
    };
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return result({1}, {acc}, {&x}, [xn = raw(x)](Node* o) {
    return [o, xn]() {
      auto& g = xn->grad_buffer();
      for (auto& v : g) v += o->grad[0];
    };
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor col_mean(const Tensor& x) {
  auto [m, n] = as_matrix(x, "col_mean");
  std::vector<double> out(n, 0.0);
  auto d = x.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += d[i * n + j];
  for (auto& v : out) v /= static_cast<double>(m);
  return result({1, n}, std::move(out), {&x}, [xn = raw(x), m, n](Node* o) {
    return [o, xn, m, n]() {
      auto& g = xn->grad_buffer();
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += o->grad[j] * inv;
    };
  });
}

Tensor row_sum(const Tensor& x) {
  auto [m, n] = as_matrix(x, "row_sum");
  std::vector<double> out(m, 0.0);
  auto d = x.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += d[i * n + j];
  return result({m, 1}, std::move(out), {&x}, [xn = raw(x), m, n](Node* o) {
    return [o, xn, m, n]() {
      auto& g = xn->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += o->grad[i];
    };
  });
}

Tensor weighted_sum(const std::vector<Tensor>& terms, const std::vector<double>& weights) {
  if (terms.size() != weights.size() || terms.empty()) {
    throw DimensionError("weighted_sum: terms and weights differ in length");
  }
  double acc = 0.0;
  std::vector<const Tensor*> inputs;
  std::vector<Node*> nodes;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    acc += weights[i] * terms[i].item();
    inputs.push_back(&terms[i]);
    nodes.push_back(raw(terms[i]));
  }
  return result({1}, {acc}, inputs, [nodes, weights](Node* o) {
    return [o, nodes, weights]() {
      for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i]->requires_grad) nodes[i]->grad_buffer()[0] += weights[i] * o->grad[0];
    };
  });
}

}  // namespace promptseg::ops
