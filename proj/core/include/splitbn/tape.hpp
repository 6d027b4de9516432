#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "splitbn/tensor.hpp"

namespace splitbn {

/// A trainable tensor owned outside any tape. `grad` accumulates across
/// backward passes until zero_grad().
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(Tensor<T>::zeros_like(value)) {}

  void zero_grad() {
    if (grad.empty() || grad.shape() != value.shape()) grad = Tensor<T>::zeros_like(value);
    else grad.fill(T(0));
  }
};

template <class T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

enum class ParameterMode { trainable, frozen };

/// Reverse-mode recording of one forward computation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
/// A tape belongs to one thread for its whole life.
template <class T>
class Tape {
 public:
  /// Receives the upstream gradient of the node and pushes contributions into
  /// its inputs via Tape::grad_of().
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& upstream)>;

  explicit Tape(ParameterMode mode = ParameterMode::trainable) : parameter_mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Parameters read their value in place; gradients accumulate into Parameter::grad.
  Var<T> parameter(Parameter<T>& p);
  Var<T> constant(Tensor<T> value);
  /// A leaf that receives a gradient on backward().
  Var<T> variable(Tensor<T> value);

  /// Records a derived value. If no input requires a gradient, `backward` is dropped.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward);

  /// Propagates d(loss)/d(node) to every reachable leaf. Leaf gradients accumulate
  /// across calls; interior gradients are rebuilt each time.
  void backward(Var<T> loss);

  const Tensor<T>& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient of a leaf variable after backward(). Throws for nodes without one.
  const Tensor<T>& grad(Var<T> v) const;

  /// Accumulation target used by backward rules; nullptr when the node does not
  /// require a gradient.
  Tensor<T>* grad_of(Var<T> v);

  std::size_t size() const noexcept { return nodes_.size(); }
  ParameterMode parameter_mode() const noexcept { return parameter_mode_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
  };

  Var<T> push(Node node);

  std::deque<Node> nodes_;
  ParameterMode parameter_mode_;
};

template <class T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <class T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace splitbn
