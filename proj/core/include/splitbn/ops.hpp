#pragma once

#include <cstddef>
#include <span>

#include "splitbn/rng.hpp"
#include "splitbn/tape.hpp"
#include "splitbn/tensor.hpp"

namespace splitbn {

// Differentiable operations. Every op records itself on the tape of its first
// operand. Broadcasting is limited to tensor-with-scalar and per-channel bias;
// any other mismatch throws ShapeError naming both shapes.

template <class T> Var<T> matmul(Var<T> a, Var<T> b);

template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
template <class T> Var<T> add_scalar(Var<T> a, T s);
template <class T> Var<T> scale(Var<T> a, T s);

/// x is N x C or N x C x H x W; bias has C entries.
template <class T> Var<T> add_channel_bias(Var<T> x, Var<T> bias);

enum class Padding { same, valid };

/// Cross-correlation of x (N x C x H x W) with kernel (F x C x Kh x Kw).
/// `same` padding follows the ceil(H / stride) convention, extra row/column at the bottom/right.
template <class T> Var<T> conv2d(Var<T> x, Var<T> kernel, Padding padding, std::size_t stride = 1);

/// Input gradient of conv2d for upstream gradient `grad_out`; the adjoint of the forward map.
template <class T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& kernel, const Shape& input_shape,
                                Padding padding, std::size_t stride = 1);

enum class PoolKind { max, average };

/// Non-overlapping or strided square pooling without padding; extents must tile exactly.
template <class T> Var<T> pool2d(Var<T> x, PoolKind kind, std::size_t window, std::size_t stride);

template <class T> Var<T> relu(Var<T> x);
template <class T> Var<T> leaky_relu(Var<T> x, T slope);
template <class T> Var<T> softmax(Var<T> x, std::size_t axis);
template <class T> Var<T> log_softmax(Var<T> x, std::size_t axis);

template <class T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

template <class T> Var<T> sum(Var<T> x);
template <class T> Var<T> mean(Var<T> x);
template <class T> Var<T> reshape(Var<T> x, Shape shape);
/// Rows `rows` of x along the leading axis, in the given order; repeats allowed.
template <class T> Var<T> select_rows(Var<T> x, std::span<const std::size_t> rows);
/// Same value, no gradient path.
template <class T> Var<T> detach(Var<T> x);

/// Inverted dropout: survivors are scaled by 1 / (1 - p). Identity when !training or p == 0.
template <class T> Var<T> dropout(Var<T> x, double p, bool training, Rng& rng);

enum class LossKind { cross_entropy_from_logits, mse, kl_divergence };

/// Mean over rows of -sum_k target_k * log_softmax(logits)_k. Targets must be distributions.
template <class T> Var<T> cross_entropy_from_logits(Var<T> logits, Var<T> target);

/// Hard-label cross-entropy averaged over rows whose label is >= 0; negative labels are ignored.
template <class T> Var<T> cross_entropy_from_logits(Var<T> logits, std::span<const int> labels);

/// Mean of squared differences over all elements.
template <class T> Var<T> mse(Var<T> pred, Var<T> target);

/// Mean over rows of KL(p || q) for row-wise distributions; 0 log 0 = 0.
template <class T> Var<T> kl_divergence(Var<T> p, Var<T> q);

/// KL(p || softmax(logits)) averaged over rows, computed through log_softmax.
template <class T> Var<T> kl_divergence_from_logits(Var<T> p, Var<T> logits);

template <class T> Var<T> loss(Var<T> pred, Var<T> target, LossKind kind);

}  // namespace splitbn
