#include "chartnet/nn/graph.hpp"

#include <sstream>

namespace chartnet::nn {

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
Parameter<T>& ParameterStore<T>::add(const std::string& name, std::vector<int> shape) {
  if (by_name_.count(name) != 0) throw Error(ErrorCode::PreconditionViolation, "duplicate parameter " + name);
  auto p = std::make_unique<Parameter<T>>();
  p->name = name;
  p->value = Tensor<T>(shape);
  p->grad = Tensor<T>(std::move(shape));
  auto* raw = p.get();
  params_.push_back(std::move(p));
  by_name_[name] = raw;
  return *raw;
}

template <class T>
Parameter<T>* ParameterStore<T>::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

template <class T>
const Parameter<T>* ParameterStore<T>::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

template <class T>
Parameter<T>& ParameterStore<T>::get(const std::string& name) {
  auto* p = find(name);
  if (p == nullptr) throw Error(ErrorCode::PreconditionViolation, "unknown parameter " + name);
  return *p;
}

template <class T>
std::vector<Parameter<T>*> ParameterStore<T>::all() {
  std::vector<Parameter<T>*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

template <class T>
std::vector<const Parameter<T>*> ParameterStore<T>::all() const {
  std::vector<const Parameter<T>*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

template <class T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <class T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p->grad.fill(T(0));
}

template <class T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node<T>& n = nodes_.emplace_back();
  n.value = std::move(value);
  return Var<T>(&n, this);
}

template <class T>
Var<T> Graph<T>::leaf(Tensor<T> value) {
  Node<T>& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  return Var<T>(&n, this);
}

template <class T>
Var<T> Graph<T>::param(Parameter<T>& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var<T>(it->second, this);
  Node<T>& n = nodes_.emplace_back();
  n.ext_value = &p.value;
  n.ext_grad = &p.grad;
  n.requires_grad = grad_enabled_ && p.trainable;
  param_nodes_[&p] = &n;
  return Var<T>(&n, this);
}

template <class T>
Var<T> Graph<T>::record(Tensor<T> value, std::initializer_list<Node<T>*> inputs,
                        std::function<void(const Node<T>&)> backward) {
  Node<T>& n = nodes_.emplace_back();
  n.value = std::move(value);
  if (grad_enabled_) {
    for (const Node<T>* in : inputs) {
      if (in->requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  return Var<T>(&n, this);
}

template <class T>
void Graph<T>::backward(Var<T> out) {
  Node<T>* root = out.node();
  if (!root->requires_grad) return;
  root->grad_ref().fill(T(1));
  bool active = false;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node<T>& n = *it;
    if (&n == root) active = true;
    if (!active || !n.requires_grad || !n.backward) continue;
    if (n.grad.size() == 0) continue;
    n.backward(n);
  }
}

template <class T>
void Graph<T>::clear() {
  nodes_.clear();
  param_nodes_.clear();
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace chartnet::nn
