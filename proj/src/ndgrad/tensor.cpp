// SPDX-License-Identifier: Apache-2.0
#include "rkld/ndgrad/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "rkld/errors.hpp"

namespace rkld::nd {

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), real(0));
}

Tensor::Tensor() : node_(std::make_shared<Node>()) {}

Tensor::Tensor(Shape shape, std::vector<real> data, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  if (numel_of(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<real>(n, real(0)), requires_grad);
}

Tensor Tensor::scalar(real value) { return Tensor({}, {value}); }

Tensor Tensor::from_node(NodePtr node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

std::size_t Tensor::rows() const {
  const auto& s = node_->shape;
  return s.size() >= 2 ? s[s.size() - 2] : 1;
}

std::size_t Tensor::cols() const {
  const auto& s = node_->shape;
  return s.empty() ? 1 : s.back();
}

real Tensor::at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

real Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), real(0));
}

Tensor Tensor::clone() const { return Tensor(node_->shape, node_->data, node_->requires_grad); }

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->data, false); }

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tape::Tape(const Tensor& root) : root_(root.node()) {
  // Iterative post-order DFS; a node is emitted after all of its parents.
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root_.get(), 0);
  visited.insert(root_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

void Tape::run() {
  if (root_->released) {
    throw ContractError("backward through a graph that was already released");
  }
  for (Node* n : order_) {
    if (n->backward_fn) n->grad.assign(n->data.size(), real(0));
  }
  root_->ensure_grad();
  for (auto& g : root_->grad) g += real(1);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
  // Per-pass graph: drop history so intermediate buffers can be reclaimed.
  for (Node* n : order_) {
    if (n->backward_fn) {
      n->backward_fn = nullptr;
      n->parents.clear();
      n->grad.clear();
      n->released = true;
    }
  }
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (loss.node()->released) {
    throw ContractError("backward through a graph that was already released");
  }
  if (!loss.requires_grad()) return;
  Tape(loss).run();
}

}  // namespace rkld::nd
