#include "splitbn/tape.hpp"

#include <fmt/format.h>

namespace splitbn {

template <class T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
Var<T> Tape<T>::parameter(Parameter<T>& p) {
  Node n;
  n.param = &p;
  n.leaf = true;
  n.requires_grad = parameter_mode_ == ParameterMode::trainable;
  return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.leaf = true;
  return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.leaf = true;
  n.requires_grad = true;
  return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw std::logic_error("operation mixes values from different tapes");
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <class T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.param ? n.param->value : n.value;
}

template <class T>
const Tensor<T>& Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_.at(v.id());
  if (n.param) return n.param->grad;
  if (!n.leaf || !n.requires_grad) throw std::logic_error("grad() is only available on leaf variables");
  if (n.grad.empty() || n.grad.shape() != n.value.shape()) throw std::logic_error("grad() before backward()");
  return n.grad;
}

template <class T>
Tensor<T>* Tape<T>::grad_of(Var<T> v) {
  Node& n = nodes_.at(v.id());
  if (!n.requires_grad) return nullptr;
  if (n.param) {
    if (n.param->grad.empty() || n.param->grad.shape() != n.param->value.shape()) n.param->grad = Tensor<T>::zeros_like(n.param->value);
    return &n.param->grad;
  }
  if (n.grad.empty() || n.grad.shape() != n.value.shape()) n.grad = Tensor<T>::zeros_like(n.value);
  return &n.grad;
}

template <class T>
void Tape<T>::backward(Var<T> loss) {
  if (&loss.tape() != this) throw std::logic_error("backward() on a value from another tape");
  const Tensor<T>& root = value(loss.id());
  if (root.numel() != 1) {
    throw ShapeError(fmt::format("backward() needs a scalar loss, got shape {}", shape_string(root.shape())));
  }
  for (auto& n : nodes_) {
    if (!n.leaf) n.grad = Tensor<T>();
  }
  Tensor<T>* seed = grad_of(loss);
  if (seed == nullptr) return;
  (*seed)[0] += T(1);

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.empty()) continue;
    Tensor<T> upstream = std::move(n.grad);
    n.backward(*this, upstream);
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace splitbn
