#include "chaosemu/diff/var.hpp"

#include <unordered_set>
#include <utility>

#include "chaosemu/error.hpp"

namespace chaosemu::diff {

Var Var::constant(Tensor value) {
  Var v;
  v.node_ = std::make_shared<detail::Node>();
  v.node_->value = std::move(value);
  return v;
}

Var Var::parameter(Tensor value, std::string name) {
  Var v = constant(std::move(value));
  v.node_->requires_grad = true;
  v.node_->name = std::move(name);
  return v;
}

Var Var::make(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Var v = constant(std::move(value));
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return v;
  v.node_->requires_grad = true;
  v.node_->backward = std::move(backward);
  v.node_->inputs.reserve(inputs.size());
  for (auto& in : inputs) v.node_->inputs.push_back(std::move(in.node_));
  return v;
}

void backward(const Var& output) {
  if (!output.defined()) throw Error("backward: undefined output");
  if (output.numel() != 1) {
    throw ShapeError("backward: output must have one element, got shape " + shape_str(output.shape()));
  }
  if (!output.requires_grad()) return;

  // Iterative post-order DFS gives a deterministic topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(output.node_.get(), 0);
  seen.insert(output.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  detail::Node* root = output.node_.get();
  if (root->grad.empty()) root->grad = Tensor(root->value.shape(), 0.0);
  root->grad[0] += 1.0;

  std::vector<Tensor*> grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    grads.assign(node->inputs.size(), nullptr);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      detail::Node* in = node->inputs[i].get();
      if (!in->requires_grad) continue;
      if (in->grad.empty()) in->grad = Tensor(in->value.shape(), 0.0);
      grads[i] = &in->grad;
    }
    node->backward(node->grad, grads);
    // Interior gradients are not needed once propagated.
    if (node != root) node->grad = Tensor();
  }
}

}  // namespace chaosemu::diff
