// SPDX-License-Identifier: Apache-2.0
#include <stdexcept>

#include "nebla/autodiff.hpp"

namespace nebla {

template <typename T>
Parameter<T>& ParameterStore<T>::add(const std::string& name, Shape shape) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  params_.push_back(std::make_unique<Parameter<T>>(name, std::move(shape)));
  return *params_.back();
}

template <typename T>
Parameter<T>* ParameterStore<T>::find(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

template <typename T>
const Parameter<T>* ParameterStore<T>::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var<T> Graph<T>::param(Parameter<T>& p) {
  Node n;
  n.op = "param:" + p.name;
  n.param = &p;
  n.requires_grad = p.requires_grad;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var<T> Graph<T>::record(std::string op, std::vector<int> inputs, Tensor<T> value, BackwardFn fn) {
  Node n;
  n.op = std::move(op);
  for (int in : inputs) {
    if (in < 0 || in >= static_cast<int>(nodes_.size())) {
      throw std::logic_error("op '" + n.op + "' references a node that is not on this tape");
    }
    n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  }
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
const Tensor<T>& Graph<T>::value(int id) const {
  const Node& n = nodes_[id];
  return n.param ? n.param->value : n.value;
}

template <typename T>
Tensor<T>& Graph<T>::grad(int id) {
  Node& n = nodes_[id];
  if (n.param) return n.param->grad;
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> out) {
  if (out.graph != this) throw std::logic_error("backward called with a node from another graph");
  if (value(out.id).size() != 1) {
    throw std::invalid_argument("backward requires a scalar output, got shape " + shape_str(value(out.id).shape()));
  }
  for (auto& n : nodes_) {
    if (!n.param) n.grad = Tensor<T>();
  }
  grad(out.id)[0] += T(1);
  for (int id = out.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.param || !n.backward || n.grad.empty()) continue;
    n.backward(*this, id);
    if (!retain_grads && id != out.id) n.grad = Tensor<T>();
  }
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace nebla
