#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "splitbn/tape.hpp"

namespace splitbn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Raised when a gradient holds NaN or infinity; nothing is updated.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::size_t step, std::string parameter);
  std::size_t step;
  std::string parameter;
};

/// One Adam update with bias correction. `step` counts from 1.
template <class T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::size_t step,
                 double lr, const AdamConfig& cfg = {});

template <class T>
class Adam {
 public:
  explicit Adam(std::vector<Parameter<T>*> params, AdamConfig cfg = {});

  /// Applies the accumulated gradients. Throws NonFiniteError naming the
  /// parameter and step before touching any value.
  void step(double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<Tensor<T>> m_, v_;
  AdamConfig cfg_;
  std::size_t t_ = 0;
};

/// Piecewise-constant learning rate: `lr` before `decay_at`, lr * factor at and
/// after. With `decay_every` > 0 the factor instead applies once per elapsed
/// `decay_every` steps.
struct LrSchedule {
  double lr = 4e-4;
  double decay_factor = 0.2;
  std::size_t decay_at = 400000;
  std::size_t decay_every = 0;
};

double lr_at(std::size_t step, const LrSchedule& s);

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace splitbn
