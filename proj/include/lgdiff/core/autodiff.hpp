#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lgdiff/core/tensor.hpp"

namespace lgdiff {

// Reverse-mode tape. Each Node owns its forward value and (lazily) its
// gradient; backward closures read this->grad and accumulate into parents.
template <typename S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool has_grad() const { return grad.numel() > 0; }
  Tensor<S>& ensure_grad() {
    if (!has_grad()) grad = Tensor<S>::zeros(value.shape());
    return grad;
  }
  void zero_grad() { grad = Tensor<S>(); }
};

template <typename S>
using Var = std::shared_ptr<Node<S>>;

struct GradMode {
  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }
};

struct NoGradGuard {
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::enabled() = false; }
  ~NoGradGuard() { GradMode::enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename S>
Var<S> constant(Tensor<S> value, std::string name = "") {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  n->name = std::move(name);
  return n;
}

template <typename S>
Var<S> leaf_param(Tensor<S> value, std::string name = "") {
  auto n = constant(std::move(value), std::move(name));
  n->requires_grad = true;
  return n;
}

template <typename S>
Var<S> make_node(Tensor<S> value, std::vector<Var<S>> parents,
                 std::function<void(Node<S>&)> backward_fn) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  if (GradMode::enabled()) {
    for (const auto& p : parents)
      if (p->requires_grad) {
        n->requires_grad = true;
        break;
      }
    if (n->requires_grad) {
      n->parents = std::move(parents);
      n->backward_fn = std::move(backward_fn);
    }
  }
  return n;
}

template <typename S>
void accumulate(const Var<S>& v, const Tensor<S>& g) {
  if (!v->requires_grad) return;
  v->ensure_grad().data() += g.data();
}

// Accumulate a raw expression without materializing a Tensor.
template <typename S, typename Expr>
void accumulate_expr(const Var<S>& v, const Expr& e) {
  if (!v->requires_grad) return;
  v->ensure_grad().data() += e;
}

template <typename S>
void backward(const Var<S>& root) {
  if (root->value.numel() != 1)
    throw ContractViolation("backward: root must be a scalar, got shape " +
                            shape_str(root->value.shape()));
  // Iterative postorder over the requires_grad subgraph.
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> visited;
  std::vector<std::pair<Node<S>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<S>* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad().data().setConstant(S(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

}  // namespace lgdiff
