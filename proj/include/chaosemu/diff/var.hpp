#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "chaosemu/diff/tensor.hpp"

namespace chaosemu::diff {

/// Propagates the output gradient into the gradients of the op's inputs.
/// `input_grads[i]` is null when input i does not require a gradient; otherwise
/// it points at a zero-initialised (or partially accumulated) buffer to add into.
using BackwardFn = std::function<void(const Tensor& out_grad, std::span<Tensor* const> input_grads)>;

namespace detail {
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};
}  // namespace detail

/// Handle to a node of the reverse-mode computation graph. Copies share the node.
class Var {
 public:
  Var() = default;

  /// A value that never receives a gradient.
  static Var constant(Tensor value);
  /// A trainable leaf.
  static Var parameter(Tensor value, std::string name);
  /// Records a primitive. The backward function is dropped when no input requires a gradient.
  static Var make(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  /// Direct access for optimizers and initialisers; never mutate a value that is part of a live graph.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t numel() const { return node_->value.numel(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  const std::string& name() const { return node_->name; }

  bool has_grad() const { return !node_->grad.empty() || node_->value.empty(); }
  const Tensor& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor(); }

  /// Same value, detached from the graph.
  Var detached() const { return constant(node_->value); }

  const detail::Node* node() const noexcept { return node_.get(); }

 private:
  friend void backward(const Var& output);
  std::shared_ptr<detail::Node> node_;
};

/// Reverse sweep from a single-element output. Parameter gradients accumulate
/// until cleared with `zero_grad`.
void backward(const Var& output);

}  // namespace chaosemu::diff
