// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rkld::nd {

// Storage precision. The default build stores 32-bit reals; the gradient-check
// build (RKLD_REAL_DOUBLE) compiles the same sources at 64 bits so that central
// differences are not swamped by rounding.
#ifdef RKLD_REAL_DOUBLE
using real = double;
#else
using real = float;
#endif

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the autodiff graph. Leaves own parameters; interior nodes are
// produced by ops and hold a closure that pushes their grad into their parents.
struct Node {
  Shape shape;
  std::vector<real> data;
  std::vector<real> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool released = false;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad();
};

// Handle to a node. Copies share the node, like a framework tensor; use clone()
// for an independent value.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<real> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(real value);
  static Tensor from_node(NodePtr node);

  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  // Leading extent for a matrix, 1 for a vector.
  std::size_t rows() const;
  // Trailing extent.
  std::size_t cols() const;

  std::span<const real> data() const { return node_->data; }
  // Direct write access. Intended for optimizers and initializers operating on
  // leaves outside of any recorded computation.
  std::span<real> mutable_data() { return node_->data; }
  real operator[](std::size_t i) const { return node_->data[i]; }
  real at(std::size_t r, std::size_t c) const;
  real item() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return node_->parents.empty() && !node_->backward_fn; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const real> grad() const { return node_->grad; }
  void zero_grad();

  Tensor clone() const;   // deep copy of data, same requires_grad, no history
  Tensor detach() const;  // deep copy, requires_grad = false

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Graph recording toggle. Inference paths disable it so no nodes are kept.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Topologically ordered record of the nodes reachable from a root.
class Tape {
 public:
  explicit Tape(const Tensor& root);

  // Seeds d(root)/d(root) = 1, runs every backward closure in reverse order
  // and releases interior history.
  void run();

  std::size_t size() const { return order_.size(); }
  const std::vector<Node*>& order() const { return order_; }

 private:
  NodePtr root_;
  std::vector<Node*> order_;
};

// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from a
// scalar loss. The interior graph is released afterwards.
void backward(const Tensor& loss);

}  // namespace rkld::nd
