#pragma once

// Dense double-precision tensors with a reverse-mode differentiation tape.
//
// A Tensor is a cheap handle onto a shared node. Leaves (parameters, inputs)
// have no parents; every op records its parents and a closure that pushes the
// output gradient back into them. backward() walks the recorded graph once in
// reverse topological order. Graphs are confined to a single thread.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace promptseg {

using Shape = std::vector<std::size_t>;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t numel() const { return node().data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return node().data; }
  // Writes bypass the tape; use only on leaves between graph constructions.
  std::span<double> mutable_data() { return node().data; }
  double operator[](std::size_t i) const { return node().data[i]; }
  double at(std::size_t r, std::size_t c) const { return node().data[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool flag);
  bool is_leaf() const { return node().parents.empty(); }

  // Gradient buffer; zeros when nothing was accumulated.
  std::vector<double> grad() const;
  bool has_grad() const { return !node().grad.empty(); }
  void zero_grad();

  // Detached deep copy as a new leaf.
  Tensor clone(bool requires_grad = false) const;
  // Same values, no history, no gradient.
  Tensor detach() const { return clone(false); }

  void backward() const;

  const detail::Node* id() const { return node_.get(); }
  std::shared_ptr<detail::Node> node_ptr() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> node);

 private:
  detail::Node& node() const;
  std::shared_ptr<detail::Node> node_;
};

// Reverse topological order used by backward(): each reachable node that
// requires a gradient appears exactly once, the loss node first.
std::vector<const detail::Node*> backward_order(const Tensor& loss);

bool all_finite(std::span<const double> values);

// Row-major equality of shape and every stored bit.
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace promptseg
