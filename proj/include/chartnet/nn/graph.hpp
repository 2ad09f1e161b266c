#pragma once

// Reverse-mode automatic differentiation over a per-forward-pass tape.
//
// A Graph owns every intermediate node created while evaluating a model.
// Nodes are appended in evaluation order, so walking the tape backwards is a
// valid topological order for gradient propagation. Parameter nodes alias the
// value/grad storage of a Parameter, so gradients accumulate across graphs
// until the optimizer clears them.

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "chartnet/nn/tensor.hpp"

namespace chartnet::nn {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
};

template <class T>
class ParameterStore {
 public:
  Parameter<T>& add(const std::string& name, std::vector<int> shape);
  Parameter<T>* find(const std::string& name);
  const Parameter<T>* find(const std::string& name) const;
  Parameter<T>& get(const std::string& name);

  std::vector<Parameter<T>*> all();
  std::vector<const Parameter<T>*> all() const;
  std::size_t scalar_count() const;
  void zero_grad();

  template <class U>
  void copy_values_from(const ParameterStore<U>& other);

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, Parameter<T>*> by_name_;
};

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T>* ext_value = nullptr;
  Tensor<T>* ext_grad = nullptr;
  bool requires_grad = false;
  // Receives the node itself; reads self.grad (and self.value when needed).
  std::function<void(const Node<T>& self)> backward;

  const Tensor<T>& val() const { return ext_value != nullptr ? *ext_value : value; }
  Tensor<T>& grad_ref() {
    Tensor<T>& g = ext_grad != nullptr ? *ext_grad : grad;
    if (g.size() != val().size()) g = Tensor<T>(val().shape());
    return g;
  }
};

template <class T>
class Graph;

// Lightweight handle to a node on a graph's tape.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Node<T>* node, Graph<T>* graph) : node_(node), graph_(graph) {}

  const Tensor<T>& value() const { return node_->val(); }
  const std::vector<int>& shape() const { return value().shape(); }
  int rows() const { return value().rows(); }
  int cols() const { return value().cols(); }
  Node<T>* node() const { return node_; }
  Graph<T>& graph() const { return *graph_; }
  bool valid() const { return node_ != nullptr; }
  bool requires_grad() const { return node_->requires_grad; }
  // Gradient after Graph::backward; empty when no gradient reached this node.
  const Tensor<T>& grad() const { return node_->ext_grad != nullptr ? *node_->ext_grad : node_->grad; }

 private:
  Node<T>* node_ = nullptr;
  Graph<T>* graph_ = nullptr;
};

template <class T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value);
  // Differentiable leaf that is not a parameter (used by tests and gradient probes).
  Var<T> leaf(Tensor<T> value);
  Var<T> param(Parameter<T>& p);

  Var<T> record(Tensor<T> value, std::initializer_list<Node<T>*> inputs,
                std::function<void(const Node<T>&)> backward);

  // Seeds d(out)/d(out) = 1 for every element of out and runs the tape backwards.
  void backward(Var<T> out);

  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }
  void clear();

 private:
  std::deque<Node<T>> nodes_;
  std::unordered_map<const Parameter<T>*, Node<T>*> param_nodes_;
  bool grad_enabled_ = true;
};

// Saves/restores gradient recording on a graph.
template <class T>
class NoGradScope {
 public:
  explicit NoGradScope(Graph<T>& g) : g_(g), prev_(g.grad_enabled()) { g_.set_grad_enabled(false); }
  ~NoGradScope() { g_.set_grad_enabled(prev_); }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Graph<T>& g_;
  bool prev_;
};

template <class T>
template <class U>
void ParameterStore<T>::copy_values_from(const ParameterStore<U>& other) {
  for (const auto* src : other.all()) {
    Parameter<T>& dst = get(src->name);
    if (dst.value.shape() != src->value.shape())
      throw Error(ErrorCode::ShapeMismatch, "parameter " + src->name);
    for (std::size_t i = 0; i < dst.value.size(); ++i) dst.value[i] = static_cast<T>(src->value[i]);
  }
}

}  // namespace chartnet::nn
