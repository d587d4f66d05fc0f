#include "dipa/autodiff/value.hpp"

#include <unordered_set>

#include "dipa/error.hpp"

namespace dipa::ad {

Value Value::constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->data = std::move(t);
  return Value(std::move(n));
}

Value Value::parameter(Tensor t) {
  auto n = std::make_shared<Node>();
  n->data = std::move(t);
  n->requires_grad = true;
  return Value(std::move(n));
}

const Tensor& Value::grad() const {
  if (node_->grad.empty()) node_->grad = Tensor(node_->data.shape(), 0.0f);
  return node_->grad;
}

void Value::zero_grad() {
  if (!node_->grad.empty()) node_->grad.fill(0.0f);
}

namespace {
thread_local bool no_grad_mode = false;
}

NoGradGuard::NoGradGuard() : previous_(no_grad_mode) { no_grad_mode = true; }
NoGradGuard::~NoGradGuard() { no_grad_mode = previous_; }
bool NoGradGuard::active() { return no_grad_mode; }

Tensor* grad_slot(Node* n) {
  if (!n->requires_grad) return nullptr;
  if (n->grad.empty()) n->grad = Tensor(n->data.shape(), 0.0f);
  return &n->grad;
}

namespace {

std::vector<Node*> topological_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // (node, next parent index) frames for an iterative post-order DFS.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

}  // namespace

void backward(const Value& root) {
  if (!root.defined()) throw InvalidArgument("backward: undefined root");
  if (root.size() != 1)
    throw ShapeError("backward: root must be scalar, got shape " + to_string(root.shape()));
  Node* r = root.node().get();
  if (!r->requires_grad) return;

  auto order = topological_order(r);
  for (Node* n : order)
    if (!n->is_leaf) n->grad = Tensor(n->data.shape(), 0.0f);
  if (r->is_leaf) {
    grad_slot(r)->data()[0] += 1.0f;
    return;
  }
  r->grad.data()[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf && n->backward_fn) n->backward_fn(n->grad);
  }
}

void sgd_step(std::span<Value> params, float lr) {
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    float* theta = p.mutable_data().data();
    const float* g = p.grad().data();
    const auto n = p.size();
    for (std::int64_t i = 0; i < n; ++i) theta[i] -= lr * g[i];
  }
}

void zero_grad(std::span<Value> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace dipa::ad
