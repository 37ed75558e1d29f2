#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rda/numeric/array.hpp"

namespace rda::nn {

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

inline std::uint64_t next_node_order() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

inline thread_local int no_grad_depth = 0;

}  // namespace detail

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

// While alive, ops on this thread record no backward information.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

struct NodeImpl {
  Array value;
  Array grad;  // empty until something flows into it during backward
  bool requires_grad = false;
  std::uint64_t order = 0;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<NodeImpl>> parents;
  std::function<void(NodeImpl&)> backward;

  Array& grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Array::zeros_like(value);
    return grad;
  }
};

// Handle to a value in the differentiation graph. Copies share the node.
class Node {
 public:
  Node() = default;
  explicit Node(std::shared_ptr<NodeImpl> impl) : impl_(std::move(impl)) {}

  const Array& value() const { return impl_->value; }
  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  std::string_view op() const { return impl_->op; }
  std::uint64_t order() const { return impl_->order; }
  double item() const { return impl_->value.item(); }
  const Shape& shape() const { return impl_->value.shape(); }
  bool valid() const { return static_cast<bool>(impl_); }

  NodeImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<NodeImpl>& shared() const { return impl_; }

  // Leaf values may be edited between graphs (optimizer steps, finite differences).
  Array& mutable_value() { return impl_->value; }

 private:
  std::shared_ptr<NodeImpl> impl_;
};

inline void check_finite(const Array& a, std::string_view op) {
  if (!a.all_finite()) {
    throw NonFiniteError("non-finite value produced by op '" + std::string(op) + "'");
  }
}

inline Node leaf(Array value, bool requires_grad = false) {
  check_finite(value, "leaf");
  auto impl = std::make_shared<NodeImpl>();
  impl->value = std::move(value);
  impl->requires_grad = requires_grad;
  impl->order = detail::next_node_order();
  return Node(std::move(impl));
}

inline Node constant(Array value) { return leaf(std::move(value), false); }
inline Node constant(double v) { return leaf(Array::scalar(v), false); }

// Builds an op result. The backward closure receives the result node and
// must accumulate into parents that require grad.
template <class Backward>
Node make_op(std::string_view op, Array value, std::vector<Node> parents, Backward&& backward) {
  check_finite(value, op);
  auto impl = std::make_shared<NodeImpl>();
  impl->value = std::move(value);
  impl->op = op;
  impl->order = detail::next_node_order();
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const Node& p) { return p.requires_grad(); });
  if (any && grad_enabled()) {
    impl->requires_grad = true;
    impl->parents.reserve(parents.size());
    for (auto& p : parents) impl->parents.push_back(p.shared());
    impl->backward = std::forward<Backward>(backward);
  }
  return Node(std::move(impl));
}

// Same value, no gradient path back to x.
inline Node detach(const Node& x) {
  auto impl = std::make_shared<NodeImpl>();
  impl->value = x.value();
  impl->op = "detach";
  impl->order = detail::next_node_order();
  return Node(std::move(impl));
}

// Gradients of a scalar with respect to every leaf that requires grad.
class GradientMap {
 public:
  Array of(const Node& n) const {
    auto it = grads_.find(n.impl());
    if (it == grads_.end()) return Array::zeros_like(n.value());
    return it->second;
  }
  bool contains(const Node& n) const { return grads_.count(n.impl()) > 0; }
  void set(const NodeImpl* n, Array g) { grads_[n] = std::move(g); }

 private:
  std::unordered_map<const NodeImpl*, Array> grads_;
};

// Reverse-mode sweep. Nodes are visited in descending creation order, which is
// a topological order because a node can only reference nodes created earlier.
inline GradientMap backward(const Node& loss) {
  if (!loss.valid()) throw GraphError("backward on empty node");
  if (loss.value().size() != 1) {
    throw GraphError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  check_finite(loss.value(), "backward");
  GradientMap out;
  if (!loss.requires_grad()) return out;

  std::vector<NodeImpl*> nodes;
  std::unordered_set<NodeImpl*> seen;
  std::vector<NodeImpl*> stack{loss.impl()};
  seen.insert(loss.impl());
  while (!stack.empty()) {
    NodeImpl* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (auto& p : n->parents) {
      if (p->order >= n->order) {
        throw GraphError("cycle in op record at node '" + std::string(n->op) + "'");
      }
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const NodeImpl* a, const NodeImpl* b) { return a->order > b->order; });

  loss.impl()->grad_buffer()[0] = 1.0;
  for (NodeImpl* n : nodes) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (NodeImpl* n : nodes) {
    if (n->parents.empty()) {
      out.set(n, n->grad.empty() ? Array::zeros_like(n->value) : std::move(n->grad));
    }
    n->grad = Array();
  }
  return out;
}

// Named trainable parameters in insertion order.
class ParamStore {
 public:
  Node& add(const std::string& name, Array value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    index_.emplace(name, params_.size());
    names_.push_back(name);
    params_.push_back(leaf(std::move(value), true));
    return params_.back();
  }

  std::size_t size() const { return params_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const { return names_; }
  Node& operator[](std::size_t i) { return params_[i]; }
  const Node& operator[](std::size_t i) const { return params_[i]; }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }
  const Node& get(const std::string& name) const { return params_[index_of(name)]; }
  Node& get(const std::string& name) { return params_[index_of(name)]; }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value().size();
    return n;
  }

  // Independent copy: new leaf nodes with copied values.
  ParamStore clone() const {
    ParamStore out;
    for (std::size_t i = 0; i < params_.size(); ++i) out.add(names_[i], params_[i].value());
    return out;
  }

 private:
  std::vector<Node> params_;
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
};

// One gradient array per parameter, aligned with ParamStore order.
struct Gradients {
  std::vector<Array> values;

  std::size_t size() const { return values.size(); }
  const Array& operator[](std::size_t i) const { return values[i]; }
  Array& operator[](std::size_t i) { return values[i]; }
};

inline Gradients backward(const Node& loss, const ParamStore& params) {
  GradientMap map = backward(loss);
  Gradients g;
  g.values.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) g.values.push_back(map.of(params[i]));
  return g;
}

}  // namespace rda::nn
