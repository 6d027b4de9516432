#include "splitbn/ops.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "splitbn/gemm.hpp"

namespace splitbn {

namespace {

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op, shape_string(a.shape()), shape_string(b.shape())));
  }
}

template <class T>
void add_into(Tensor<T>* dst, const Tensor<T>& src) {
  if (dst == nullptr) return;
  T* d = dst->data();
  const T* s = src.data();
  for (std::size_t i = 0; i < src.numel(); ++i) d[i] += s[i];
}

template <class T>
void add_scaled_into(Tensor<T>* dst, const Tensor<T>& src, T factor) {
  if (dst == nullptr) return;
  T* d = dst->data();
  const T* s = src.data();
  for (std::size_t i = 0; i < src.numel(); ++i) d[i] += factor * s[i];
}

struct AxisLayout {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError(fmt::format("axis {} out of range for shape {}", axis, shape_string(shape)));
  }
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

template <class T>
Tensor<T> log_softmax_values(const Tensor<T>& x, std::size_t axis) {
  const AxisLayout l = axis_layout(x.shape(), axis);
  Tensor<T> y(x.shape());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.extent * l.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < l.extent; ++k) mx = std::max(mx, x[base + k * l.inner]);
      T acc = 0;
      for (std::size_t k = 0; k < l.extent; ++k) acc += std::exp(x[base + k * l.inner] - mx);
      const T lse = mx + std::log(acc);
      for (std::size_t k = 0; k < l.extent; ++k) y[base + k * l.inner] = x[base + k * l.inner] - lse;
    }
  }
  return y;
}

template <class T>
void require_rank2(const Var<T>& v, const char* op) {
  if (v.shape().size() != 2) {
    throw ShapeError(fmt::format("{}: expected rows x classes, got {}", op, shape_string(v.shape())));
  }
}

template <class T>
void require_probabilities(const Tensor<T>& p, const char* op) {
  constexpr double tol = 1e-6;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double v = static_cast<double>(p[i]);
    if (!(v >= -tol && v <= 1.0 + tol)) {
      throw std::invalid_argument(fmt::format("{}: probability {} at flat index {} is outside [0, 1]", op, v, i));
    }
  }
}

}  // namespace

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw ShapeError(fmt::format("matmul: incompatible shapes {} and {}", shape_string(sa), shape_string(sb)));
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  Tensor<T> out({m, n});
  gemm(Trans::no, Trans::no, m, n, k, T(1), a.value().data(), k, b.value().data(), n, T(0), out.data(), n);
  return a.tape().record(std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& tape, const Tensor<T>& g) {
    if (Tensor<T>* ga = tape.grad_of(a)) {
      gemm(Trans::no, Trans::yes, m, k, n, T(1), g.data(), n, b.value().data(), n, T(1), ga->data(), k);
    }
    if (Tensor<T>* gb = tape.grad_of(b)) {
      gemm(Trans::yes, Trans::no, k, n, m, T(1), a.value().data(), k, g.data(), n, T(1), gb->data(), n);
    }
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g) {
    add_into(tape.grad_of(a), g);
    add_into(tape.grad_of(b), g);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g) {
    add_into(tape.grad_of(a), g);
    add_scaled_into(tape.grad_of(b), g, T(-1));
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g) {
    if (Tensor<T>* ga = tape.grad_of(a)) {
      const Tensor<T>& bv = b.value();
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor<T>* gb = tape.grad_of(b)) {
      const Tensor<T>& av = a.value();
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

template <class T>
Var<T> add_scalar(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v += s;
  return a.tape().record(std::move(out), {a}, [a](Tape<T>& tape, const Tensor<T>& g) { add_into(tape.grad_of(a), g); });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= s;
  return a.tape().record(std::move(out), {a},
                         [a, s](Tape<T>& tape, const Tensor<T>& g) { add_scaled_into(tape.grad_of(a), g, s); });
}

template <class T>
Var<T> add_channel_bias(Var<T> x, Var<T> bias) {
  const Shape& sx = x.shape();
  if ((sx.size() != 2 && sx.size() != 4) || bias.shape() != Shape{sx[1]}) {
    throw ShapeError(fmt::format("add_channel_bias: input {} with bias {}", shape_string(sx), shape_string(bias.shape())));
  }
  const std::size_t n = sx[0], c = sx[1];
  const std::size_t spatial = sx.size() == 4 ? sx[2] * sx[3] : 1;
  Tensor<T> out = x.value();
  const Tensor<T>& b = bias.value();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* row = out.data() + (i * c + ch) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) row[s] += b[ch];
    }
  }
  return x.tape().record(std::move(out), {x, bias}, [x, bias, n, c, spatial](Tape<T>& tape, const Tensor<T>& g) {
    add_into(tape.grad_of(x), g);
    if (Tensor<T>* gb = tape.grad_of(bias)) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T* row = g.data() + (i * c + ch) * spatial;
          T acc = 0;
          for (std::size_t s = 0; s < spatial; ++s) acc += row[s];
          (*gb)[ch] += acc;
        }
      }
    }
  });
}

template <class T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v = v > T(0) ? v : T(0);
  return x.tape().record(std::move(out), {x}, [x](Tape<T>& tape, const Tensor<T>& g) {
    if (Tensor<T>* gx = tape.grad_of(x)) {
      const Tensor<T>& xv = x.value();
      for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += xv[i] > T(0) ? g[i] : T(0);
    }
  });
}

template <class T>
Var<T> leaky_relu(Var<T> x, T slope) {
  if (!(slope >= T(0) && slope < T(1))) {
    throw std::invalid_argument(fmt::format("leaky_relu: slope {} outside [0, 1)", static_cast<double>(slope)));
  }
  const Tensor<T>& xt = x.value();
  Tensor<T> out(xt.shape());
  {
    const T* xv = xt.data();
    T* o = out.data();
    for (std::size_t i = 0, n = out.numel(); i < n; ++i) o[i] = std::max(xv[i], T(0)) + slope * std::min(xv[i], T(0));
  }
  return x.tape().record(std::move(out), {x}, [x, slope](Tape<T>& tape, const Tensor<T>& g) {
    if (Tensor<T>* gx = tape.grad_of(x)) {
      const T* xv = x.value().data();
      const T* gv = g.data();
      T* d = gx->data();
      const T s = slope;
      for (std::size_t i = 0, n = g.numel(); i < n; ++i) {
        const T f = xv[i] > T(0) ? T(1) : s;
        d[i] += f * gv[i];
      }
    }
  });
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  Tensor<T> y = log_softmax_values(x, axis);
  for (auto& v : y.storage()) v = std::exp(v);
  return y;
}

template <class T>
Var<T> softmax(Var<T> x, std::size_t axis) {
  Tensor<T> y = softmax(x.value(), axis);
  const AxisLayout l = axis_layout(x.shape(), axis);
  Tensor<T> saved = x.requires_grad() ? y : Tensor<T>();
  return x.tape().record(std::move(y), {x}, [x, l, yv = std::move(saved)](Tape<T>& tape, const Tensor<T>& g) {
    Tensor<T>* gx = tape.grad_of(x);
    if (gx == nullptr) return;
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.extent * l.inner + in;
        T dot = 0;
        for (std::size_t k = 0; k < l.extent; ++k) dot += g[base + k * l.inner] * yv[base + k * l.inner];
        for (std::size_t k = 0; k < l.extent; ++k) {
          const std::size_t i = base + k * l.inner;
          (*gx)[i] += yv[i] * (g[i] - dot);
        }
      }
    }
  });
}

template <class T>
Var<T> log_softmax(Var<T> x, std::size_t axis) {
  Tensor<T> y = log_softmax_values(x.value(), axis);
  const AxisLayout l = axis_layout(x.shape(), axis);
  Tensor<T> probs = y;
  for (auto& v : probs.storage()) v = std::exp(v);
  return x.tape().record(std::move(y), {x}, [x, l, probs = std::move(probs)](Tape<T>& tape, const Tensor<T>& g) {
    Tensor<T>* gx = tape.grad_of(x);
    if (gx == nullptr) return;
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.extent * l.inner + in;
        T total = 0;
        for (std::size_t k = 0; k < l.extent; ++k) total += g[base + k * l.inner];
        for (std::size_t k = 0; k < l.extent; ++k) {
          const std::size_t i = base + k * l.inner;
          (*gx)[i] += g[i] - probs[i] * total;
        }
      }
    }
  });
}

template <class T>
Var<T> sum(Var<T> x) {
  T acc = 0;
  for (auto v : x.value().values()) acc += v;
  return x.tape().record(Tensor<T>::scalar(acc), {x}, [x](Tape<T>& tape, const Tensor<T>& g) {
    if (Tensor<T>* gx = tape.grad_of(x)) {
      for (auto& v : gx->storage()) v += g[0];
    }
  });
}

template <class T>
Var<T> mean(Var<T> x) {
  const T n = static_cast<T>(x.value().numel());
  return scale(sum(x), T(1) / n);
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x}, [x](Tape<T>& tape, const Tensor<T>& g) {
    if (Tensor<T>* gx = tape.grad_of(x)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i];
    }
  });
}

template <class T>
Var<T> select_rows(Var<T> x, std::span<const std::size_t> rows) {
  const Shape& xs = x.shape();
  if (xs.empty()) throw ShapeError("select_rows: scalar input");
  if (rows.empty()) throw std::invalid_argument("select_rows: no rows selected");
  const std::size_t stride = x.value().numel() / xs[0];
  for (auto r : rows)
    if (r >= xs[0]) throw std::out_of_range(fmt::format("select_rows: row {} of {}", r, shape_string(xs)));
  Shape os = xs;
  os[0] = rows.size();
  Tensor<T> out(os);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(x.value().data() + rows[i] * stride, stride, out.data() + i * stride);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return x.tape().record(std::move(out), {x}, [x, idx = std::move(idx), stride](Tape<T>& tape, const Tensor<T>& g) {
    if (Tensor<T>* gx = tape.grad_of(x)) {
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t k = 0; k < stride; ++k) (*gx)[idx[i] * stride + k] += g[i * stride + k];
    }
  });
}

template <class T>
Var<T> detach(Var<T> x) {
  return x.tape().constant(x.value());
}

template <class T>
Var<T> dropout(Var<T> x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument(fmt::format("dropout: p = {} outside [0, 1)", p));
  if (!training || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> mask(x.shape());
  for (auto& m : mask.storage()) m = rng.bernoulli(p) ? T(0) : keep_scale;
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  return x.tape().record(std::move(out), {x}, [x, mask = std::move(mask)](Tape<T>& tape, const Tensor<T>& g) {
    if (Tensor<T>* gx = tape.grad_of(x)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * mask[i];
    }
  });
}

template <class T>
Var<T> cross_entropy_from_logits(Var<T> logits, Var<T> target) {
  require_rank2(logits, "cross_entropy_from_logits");
  require_same_shape(logits, target, "cross_entropy_from_logits");
  require_probabilities(target.value(), "cross_entropy_from_logits");
  const std::size_t rows = logits.shape()[0], k = logits.shape()[1];
  Tensor<T> logp = log_softmax_values(logits.value(), 1);
  const Tensor<T>& t = target.value();
  T acc = 0;
  for (std::size_t i = 0; i < rows * k; ++i) {
    if (t[i] != T(0)) acc -= t[i] * logp[i];
  }
  const T inv_rows = T(1) / static_cast<T>(rows);
  return logits.tape().record(
      Tensor<T>::scalar(acc * inv_rows), {logits, target},
      [logits, target, rows, k, inv_rows, logp = std::move(logp)](Tape<T>& tape, const Tensor<T>& g) {
        const T up = g[0] * inv_rows;
        const Tensor<T>& t = target.value();
        if (Tensor<T>* gl = tape.grad_of(logits)) {
          for (std::size_t r = 0; r < rows; ++r) {
            T mass = 0;
            for (std::size_t c = 0; c < k; ++c) mass += t[r * k + c];
            for (std::size_t c = 0; c < k; ++c) {
              const std::size_t i = r * k + c;
              (*gl)[i] += up * (std::exp(logp[i]) * mass - t[i]);
            }
          }
        }
        if (Tensor<T>* gt = tape.grad_of(target)) {
          for (std::size_t i = 0; i < rows * k; ++i) (*gt)[i] -= up * logp[i];
        }
      });
}

template <class T>
Var<T> cross_entropy_from_logits(Var<T> logits, std::span<const int> labels) {
  require_rank2(logits, "cross_entropy_from_logits");
  const std::size_t rows = logits.shape()[0], k = logits.shape()[1];
  if (labels.size() != rows) {
    throw ShapeError(fmt::format("cross_entropy_from_logits: {} labels for logits {}", labels.size(),
                                 shape_string(logits.shape())));
  }
  std::vector<int> lab(labels.begin(), labels.end());
  std::size_t labeled = 0;
  for (int y : lab) {
    if (y >= static_cast<int>(k)) {
      throw std::invalid_argument(fmt::format("cross_entropy_from_logits: label {} with {} classes", y, k));
    }
    if (y >= 0) ++labeled;
  }
  if (labeled == 0) throw std::invalid_argument("cross_entropy_from_logits: no labeled rows");
  Tensor<T> logp = log_softmax_values(logits.value(), 1);
  T acc = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (lab[r] >= 0) acc -= logp[r * k + static_cast<std::size_t>(lab[r])];
  }
  const T inv = T(1) / static_cast<T>(labeled);
  return logits.tape().record(
      Tensor<T>::scalar(acc * inv), {logits},
      [logits, rows, k, inv, lab = std::move(lab), logp = std::move(logp)](Tape<T>& tape, const Tensor<T>& g) {
        Tensor<T>* gl = tape.grad_of(logits);
        if (gl == nullptr) return;
        const T up = g[0] * inv;
        for (std::size_t r = 0; r < rows; ++r) {
          if (lab[r] < 0) continue;
          for (std::size_t c = 0; c < k; ++c) {
            const std::size_t i = r * k + c;
            const T onehot = static_cast<int>(c) == lab[r] ? T(1) : T(0);
            (*gl)[i] += up * (std::exp(logp[i]) - onehot);
          }
        }
      });
}

template <class T>
Var<T> mse(Var<T> pred, Var<T> target) {
  require_same_shape(pred, target, "mse");
  const std::size_t n = pred.value().numel();
  Tensor<T> diff = pred.value();
  for (std::size_t i = 0; i < n; ++i) diff[i] -= target.value()[i];
  T acc = 0;
  for (auto d : diff.values()) acc += d * d;
  const T inv = T(1) / static_cast<T>(n);
  return pred.tape().record(Tensor<T>::scalar(acc * inv), {pred, target},
                            [pred, target, inv, diff = std::move(diff)](Tape<T>& tape, const Tensor<T>& g) {
                              const T up = T(2) * g[0] * inv;
                              add_scaled_into(tape.grad_of(pred), diff, up);
                              add_scaled_into(tape.grad_of(target), diff, -up);
                            });
}

template <class T>
Var<T> kl_divergence(Var<T> p, Var<T> q) {
  require_rank2(p, "kl_divergence");
  require_same_shape(p, q, "kl_divergence");
  require_probabilities(p.value(), "kl_divergence");
  require_probabilities(q.value(), "kl_divergence");
  const std::size_t rows = p.shape()[0];
  const Tensor<T>& pv = p.value();
  const Tensor<T>& qv = q.value();
  T acc = 0;
  for (std::size_t i = 0; i < pv.numel(); ++i) {
    if (pv[i] > T(0)) acc += pv[i] * (std::log(pv[i]) - std::log(qv[i]));
  }
  const T inv = T(1) / static_cast<T>(rows);
  return p.tape().record(Tensor<T>::scalar(acc * inv), {p, q}, [p, q, inv](Tape<T>& tape, const Tensor<T>& g) {
    const T up = g[0] * inv;
    const Tensor<T>& pv = p.value();
    const Tensor<T>& qv = q.value();
    if (Tensor<T>* gq = tape.grad_of(q)) {
      for (std::size_t i = 0; i < pv.numel(); ++i) {
        if (pv[i] > T(0)) (*gq)[i] -= up * pv[i] / qv[i];
      }
    }
    if (Tensor<T>* gp = tape.grad_of(p)) {
      for (std::size_t i = 0; i < pv.numel(); ++i) {
        if (pv[i] > T(0)) (*gp)[i] += up * (std::log(pv[i]) - std::log(qv[i]) + T(1));
      }
    }
  });
}

template <class T>
Var<T> kl_divergence_from_logits(Var<T> p, Var<T> logits) {
  require_rank2(logits, "kl_divergence_from_logits");
  require_same_shape(p, logits, "kl_divergence_from_logits");
  require_probabilities(p.value(), "kl_divergence_from_logits");
  const std::size_t rows = logits.shape()[0], k = logits.shape()[1];
  Tensor<T> logq = log_softmax_values(logits.value(), 1);
  const Tensor<T>& pv = p.value();
  T acc = 0;
  for (std::size_t i = 0; i < pv.numel(); ++i) {
    if (pv[i] > T(0)) acc += pv[i] * (std::log(pv[i]) - logq[i]);
  }
  const T inv = T(1) / static_cast<T>(rows);
  return p.tape().record(
      Tensor<T>::scalar(acc * inv), {p, logits},
      [p, logits, rows, k, inv, logq = std::move(logq)](Tape<T>& tape, const Tensor<T>& g) {
        const T up = g[0] * inv;
        const Tensor<T>& pv = p.value();
        if (Tensor<T>* gl = tape.grad_of(logits)) {
          for (std::size_t r = 0; r < rows; ++r) {
            T mass = 0;
            for (std::size_t c = 0; c < k; ++c) mass += pv[r * k + c];
            for (std::size_t c = 0; c < k; ++c) {
              const std::size_t i = r * k + c;
              (*gl)[i] += up * (std::exp(logq[i]) * mass - pv[i]);
            }
          }
        }
        if (Tensor<T>* gp = tape.grad_of(p)) {
          for (std::size_t i = 0; i < pv.numel(); ++i) {
            if (pv[i] > T(0)) (*gp)[i] += up * (std::log(pv[i]) - logq[i] + T(1));
          }
        }
      });
}

template <class T>
Var<T> loss(Var<T> pred, Var<T> target, LossKind kind) {
  switch (kind) {
    case LossKind::cross_entropy_from_logits:
      return cross_entropy_from_logits(pred, target);
    case LossKind::mse:
      return mse(pred, target);
    case LossKind::kl_divergence:
      return kl_divergence(target, pred);
  }
  throw std::invalid_argument("unknown loss kind");
}

#define SPLITBN_INSTANTIATE_OPS(T)                                                        \
  template Var<T> matmul(Var<T>, Var<T>);                                                 \
  template Var<T> add(Var<T>, Var<T>);                                                    \
  template Var<T> sub(Var<T>, Var<T>);                                                    \
  template Var<T> mul(Var<T>, Var<T>);                                                    \
  template Var<T> add_scalar(Var<T>, T);                                                  \
  template Var<T> scale(Var<T>, T);                                                       \
  template Var<T> add_channel_bias(Var<T>, Var<T>);                                       \
  template Var<T> relu(Var<T>);                                                           \
  template Var<T> leaky_relu(Var<T>, T);                                                  \
  template Var<T> softmax(Var<T>, std::size_t);                                           \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                              \
  template Var<T> log_softmax(Var<T>, std::size_t);                                       \
  template Var<T> sum(Var<T>);                                                            \
  template Var<T> mean(Var<T>);                                                           \
  template Var<T> reshape(Var<T>, Shape);                                                 \
  template Var<T> detach(Var<T>);                                                         \
  template Var<T> select_rows(Var<T>, std::span<const std::size_t>);                      \
  template Var<T> dropout(Var<T>, double, bool, Rng&);                                    \
  template Var<T> cross_entropy_from_logits(Var<T>, Var<T>);                              \
  template Var<T> cross_entropy_from_logits(Var<T>, std::span<const int>);                \
  template Var<T> mse(Var<T>, Var<T>);                                                    \
  template Var<T> kl_divergence(Var<T>, Var<T>);                                          \
  template Var<T> kl_divergence_from_logits(Var<T>, Var<T>);                              \
  template Var<T> loss(Var<T>, Var<T>, LossKind);

SPLITBN_INSTANTIATE_OPS(float)
SPLITBN_INSTANTIATE_OPS(double)

#undef SPLITBN_INSTANTIATE_OPS

}  // namespace splitbn
