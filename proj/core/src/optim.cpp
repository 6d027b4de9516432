#include "splitbn/optim.hpp"

#include <fmt/format.h>

#include <cmath>

namespace splitbn {

NonFiniteError::NonFiniteError(std::size_t s, std::string p)
    : std::runtime_error(fmt::format("non-finite gradient for '{}' at step {}", p, s)), step(s), parameter(std::move(p)) {}

template <class T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::size_t step,
                 double lr, const AdamConfig& cfg) {
  if (step == 0) throw std::invalid_argument("adam step counts from 1");
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size())
    throw ShapeError(fmt::format("adam: {} values, {} gradients, {}/{} moments", param.size(), grad.size(), m.size(),
                                 v.size()));
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
    const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    param[i] = static_cast<T>(static_cast<double>(param[i]) - lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
  }
}

template <class T>
Adam<T>::Adam(std::vector<Parameter<T>*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (auto* p : params_) {
    m_.push_back(Tensor<T>::zeros_like(p->value));
    v_.push_back(Tensor<T>::zeros_like(p->value));
  }
}

template <class T>
void Adam<T>::step(double lr) {
  const std::size_t next = t_ + 1;
  for (auto* p : params_) {
    if (p->grad.shape() != p->value.shape())
      throw ShapeError(fmt::format("gradient of '{}' has shape {}", p->name, shape_string(p->grad.shape())));
    for (T g : p->grad.storage())
      if (!std::isfinite(g)) throw NonFiniteError(next, p->name);
  }
  t_ = next;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto* p = params_[i];
    adam_update<T>(p->value.storage(), p->grad.storage(), m_[i].storage(), v_[i].storage(), t_, lr, cfg_);
  }
}

double lr_at(std::size_t step, const LrSchedule& s) {
  if (s.decay_every) return s.lr * std::pow(s.decay_factor, static_cast<double>(step / s.decay_every));
  return step >= s.decay_at ? s.lr * s.decay_factor : s.lr;
}

template void adam_update(std::span<float>, std::span<const float>, std::span<float>, std::span<float>, std::size_t,
                          double, const AdamConfig&);
template void adam_update(std::span<double>, std::span<const double>, std::span<double>, std::span<double>,
                          std::size_t, double, const AdamConfig&);
template class Adam<float>;
template class Adam<double>;

}  // namespace splitbn
