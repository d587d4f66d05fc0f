#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "dipa/autodiff/tensor.hpp"

namespace dipa::ad {

struct Node {
  Tensor data;
  Tensor grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Receives dL/d(this) and accumulates into the parents.
  std::function<void(const Tensor& out_grad)> backward_fn;
};

// Handle to a node of the computation graph. Copies share the node.
class Value {
 public:
  Value() = default;
  explicit Value(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Value constant(Tensor t);
  static Value parameter(Tensor t);

  const Tensor& data() const { return node_->data; }
  Tensor& mutable_data() { return node_->data; }
  const Shape& shape() const { return node_->data.shape(); }
  std::int64_t size() const { return node_->data.size(); }
  float item() const { return node_->data.item(); }

  // Gradient; materialized as zeros if nothing was accumulated yet.
  const Tensor& grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// While alive on a thread, ops on that thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  static bool active();

 private:
  bool previous_;
};

// Gradient buffer of n, allocated on demand; null for nodes that do not
// require gradients.
Tensor* grad_slot(Node* n);

// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across
// calls; intermediate gradients are recomputed on every call.
void backward(const Value& root);

// theta <- theta - lr * grad. Gradients are left untouched.
void sgd_step(std::span<Value> params, float lr);
void zero_grad(std::span<Value> params);

}  // namespace dipa::ad
