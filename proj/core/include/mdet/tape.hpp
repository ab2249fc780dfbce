#pragma once

#include <cstddef>
#include <deque>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mdet/error.hpp"
#include "mdet/tensor.hpp"

namespace mdet {

template <typename T>
class Tape;

// A differentiable primitive. One instance per recorded node, so an op may keep
// whatever forward intermediates its backward pass needs.
template <typename T>
class Op {
 public:
  virtual ~Op() = default;
  virtual std::string_view name() const = 0;
  virtual Tensor<T> forward(std::span<const Tensor<T>* const> inputs) = 0;
  // Adds d(loss)/d(input i) into *grads[i]; grads[i] is null when input i needs no gradient.
  virtual void backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>& output,
                        const Tensor<T>& grad_output, std::span<Tensor<T>* const> grads) = 0;
};

// Handle to a node on a tape.
template <typename T>
class Var {
 public:
  Var() = default;

  Tape<T>* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  // Accumulated gradient, or null if none has been computed.
  const Tensor<T>* grad() const;

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = false, std::string label = {}) {
    if (check_finite_ && !value.all_finite()) {
      throw NumericalError("non-finite value in leaf '" + label + "'");
    }
    nodes_.push_back(Node{nullptr, {}, std::move(value), requires_grad, std::nullopt,
                          std::move(label)});
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  Var<T> apply(std::unique_ptr<Op<T>> op, std::span<const Var<T>> inputs) {
    std::vector<std::size_t> ids;
    std::vector<const Tensor<T>*> values;
    bool needs_grad = false;
    ids.reserve(inputs.size());
    values.reserve(inputs.size());
    for (const auto& v : inputs) {
      check_owned(v);
      ids.push_back(v.id());
      values.push_back(&nodes_[v.id()].value);
      needs_grad = needs_grad || nodes_[v.id()].requires_grad;
    }
    Tensor<T> out = op->forward(values);
    if (check_finite_ && !out.all_finite()) {
      throw NumericalError("non-finite output from op '" + std::string(op->name()) +
                           "' at tape node " + std::to_string(nodes_.size()));
    }
    nodes_.push_back(Node{std::move(op), std::move(ids), std::move(out), needs_grad,
                          std::nullopt, {}});
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> apply(std::unique_ptr<Op<T>> op, std::initializer_list<Var<T>> inputs) {
    return apply(std::move(op), std::span<const Var<T>>(inputs.begin(), inputs.size()));
  }

  // Reverse sweep from `output`. A non-scalar output is treated as sum(output).
  // Leaf gradients accumulate across calls until zero_grad().
  void backward(Var<T> output) {
    check_owned(output);
    const std::size_t root = output.id();
    std::vector<std::optional<Tensor<T>>> adj(root + 1);
    adj[root].emplace(nodes_[root].value.shape(), T{1});

    std::vector<const Tensor<T>*> in_values;
    std::vector<Tensor<T>*> in_grads;
    for (std::size_t i = root + 1; i-- > 0;) {
      if (!adj[i] || !nodes_[i].requires_grad) continue;
      Node& node = nodes_[i];
      if (!node.op) {
        if (!node.grad) {
          node.grad = std::move(*adj[i]);
        } else {
          auto dst = node.grad->data();
          auto src = adj[i]->data();
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
        adj[i].reset();
        continue;
      }
      in_values.clear();
      in_grads.clear();
      for (std::size_t in : node.inputs) {
        in_values.push_back(&nodes_[in].value);
        if (nodes_[in].requires_grad) {
          if (!adj[in]) adj[in].emplace(nodes_[in].value.shape(), T{0});
          in_grads.push_back(&*adj[in]);
        } else {
          in_grads.push_back(nullptr);
        }
      }
      node.op->backward(in_values, node.value, *adj[i], in_grads);
      adj[i].reset();
    }
  }

  void zero_grad() {
    for (auto& node : nodes_) node.grad.reset();
  }

  const Tensor<T>& value(Var<T> v) const {
    check_owned(v);
    return nodes_[v.id()].value;
  }

  const Tensor<T>* grad(Var<T> v) const {
    check_owned(v);
    const auto& g = nodes_[v.id()].grad;
    return g ? &*g : nullptr;
  }

  bool requires_grad(Var<T> v) const {
    check_owned(v);
    return nodes_[v.id()].requires_grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  // "leaf" for leaves, otherwise the op name.
  std::string_view node_name(std::size_t id) const {
    return nodes_.at(id).op ? nodes_[id].op->name() : std::string_view("leaf");
  }

  std::span<const std::size_t> node_inputs(std::size_t id) const { return nodes_.at(id).inputs; }

  const Tensor<T>& node_value(std::size_t id) const { return nodes_.at(id).value; }

  // Re-evaluates every recorded op from its stored inputs and compares bitwise.
  bool replay_matches() {
    std::vector<const Tensor<T>*> values;
    for (auto& node : nodes_) {
      if (!node.op) continue;
      values.clear();
      for (std::size_t in : node.inputs) values.push_back(&nodes_[in].value);
      if (!node.op->forward(values).identical(node.value)) return false;
    }
    return true;
  }

  // When enabled, any non-finite op output raises NumericalError naming the op.
  void set_check_finite(bool on) noexcept { check_finite_ = on; }

 private:
  struct Node {
    std::unique_ptr<Op<T>> op;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    bool requires_grad = false;
    std::optional<Tensor<T>> grad;
    std::string label;
  };

  void check_owned(Var<T> v) const {
    if (v.tape() != this || v.id() >= nodes_.size()) {
      throw UsageError("variable does not belong to this tape");
    }
  }

  std::deque<Node> nodes_;  // stable element addresses across push_back
  bool check_finite_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  if (!tape_) throw UsageError("value() on an unbound variable");
  return tape_->value(*this);
}

template <typename T>
const Tensor<T>* Var<T>::grad() const {
  if (!tape_) throw UsageError("grad() on an unbound variable");
  return tape_->grad(*this);
}

}  // namespace mdet
