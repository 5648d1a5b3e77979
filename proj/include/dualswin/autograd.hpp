#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dualswin/errors.hpp"
#include "dualswin/tensor.hpp"

namespace dualswin {

/// A learnable array and its accumulated gradient.
template <class Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;
};

/// Named learnable tensors in registration order. Entry addresses are stable
/// for the lifetime of the store, so modules keep raw `Parameter*` handles.
template <class Real>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Parameter<Real>* add(const std::string& name, Tensor<Real> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<Real>>();
    p->name = name;
    p->grad = Tensor<Real>(value.shape());
    p->value = std::move(value);
    index_.emplace(name, entries_.size());
    entries_.push_back(std::move(p));
    return entries_.back().get();
  }

  Parameter<Real>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : entries_[it->second].get();
  }
  const Parameter<Real>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : entries_[it->second].get();
  }

  std::size_t size() const noexcept { return entries_.size(); }
  Parameter<Real>& operator[](std::size_t i) { return *entries_[i]; }
  const Parameter<Real>& operator[](std::size_t i) const { return *entries_[i]; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : entries_) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : entries_) p->grad.fill(Real(0));
  }

 private:
  std::vector<std::unique_ptr<Parameter<Real>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class Real>
struct Node {
  Tensor<Real> value;
  const Tensor<Real>* external_value = nullptr;  // parameter leaves
  Tensor<Real>* external_grad = nullptr;
  Tensor<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  const Tensor<Real>& val() const { return external_value ? *external_value : value; }

  /// Gradient buffer, zero-initialised on first access.
  Tensor<Real>& grad_ref() {
    if (external_grad) return *external_grad;
    if (grad.shape() != val().shape()) grad = Tensor<Real>(val().shape());
    return grad;
  }
  bool has_grad() const { return external_grad != nullptr || !grad.empty(); }
};

/// Handle to a value in the computation graph. Copies share the node.
template <class Real>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<Real>> node) : node_(std::move(node)) {}

  /// Constant leaf (no gradient).
  static Var constant(Tensor<Real> value) {
    auto n = std::make_shared<Node<Real>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }
  /// Leaf whose gradient is kept on the node (read with `grad()`).
  static Var leaf(Tensor<Real> value) {
    auto n = std::make_shared<Node<Real>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }
  /// Leaf bound to a stored parameter; gradients accumulate into `p.grad`.
  static Var param(Parameter<Real>& p) {
    auto n = std::make_shared<Node<Real>>();
    n->external_value = &p.value;
    n->external_grad = &p.grad;
    n->requires_grad = grad_enabled();
    return Var(std::move(n));
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<Real>& value() const { return node_->val(); }
  const Shape& shape() const { return node_->val().shape(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Node<Real>& node() const { return *node_; }
  const std::shared_ptr<Node<Real>>& node_ptr() const { return node_; }

  const Tensor<Real>& grad() const { return node_->grad_ref(); }

 private:
  std::shared_ptr<Node<Real>> node_;
};

/// Builds the result node of an op. `backward` receives the output node, whose
/// gradient is complete when called, and must accumulate into its inputs.
template <class Real>
Var<Real> make_result(Tensor<Real> value, std::initializer_list<Var<Real>> inputs,
                      std::function<void(Node<Real>&)> backward) {
  auto n = std::make_shared<Node<Real>>();
  n->value = std::move(value);
  if (grad_enabled()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) n->requires_grad = true;
    }
    if (n->requires_grad) {
      for (const auto& in : inputs) n->parents.push_back(in.node_ptr());
      n->backward = std::move(backward);
    }
  }
  return Var<Real>(std::move(n));
}

template <class Real>
Var<Real> make_result(Tensor<Real> value, const std::vector<Var<Real>>& inputs,
                      std::function<void(Node<Real>&)> backward) {
  auto n = std::make_shared<Node<Real>>();
  n->value = std::move(value);
  if (grad_enabled()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) n->requires_grad = true;
    }
    if (n->requires_grad) {
      for (const auto& in : inputs) n->parents.push_back(in.node_ptr());
      n->backward = std::move(backward);
    }
  }
  return Var<Real>(std::move(n));
}

/// Reverse-mode sweep from `root`, seeded with `seed` (ones when empty).
/// Intermediate gradients are released once consumed.
template <class Real>
void backward(const Var<Real>& root, const Tensor<Real>& seed = {}) {
  if (!root.requires_grad()) return;
  std::vector<Node<Real>*> order;
  std::unordered_set<Node<Real>*> seen;
  std::vector<std::pair<Node<Real>*, std::size_t>> stack{{&root.node(), 0}};
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Real>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Tensor<Real>& g = root.node().grad_ref();
  if (seed.empty()) {
    for (auto& v : g.data()) v += Real(1);
  } else {
    g += seed;
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Real>* node = *it;
    if (node->backward && node->has_grad()) {
      node->backward(*node);
      if (node != &root.node()) node->grad = Tensor<Real>();
    }
  }
}

/// Gradient sink of an input, or nullptr when it does not need one.
template <class Real>
Tensor<Real>* grad_sink(Node<Real>& out, std::size_t parent) {
  Node<Real>& p = *out.parents[parent];
  return p.requires_grad ? &p.grad_ref() : nullptr;
}

}  // namespace dualswin
