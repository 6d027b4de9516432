#include <fmt/format.h>

#include <algorithm>
#include <cstdint>
#include <vector>

#include "splitbn/gemm.hpp"
#include "splitbn/ops.hpp"

namespace splitbn {

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w;
  std::size_t f, kh, kw;
  std::size_t stride;
  std::size_t oh, ow;
  std::size_t pad_top, pad_left;

  std::size_t patch() const { return c * kh * kw; }
  std::size_t out_plane() const { return oh * ow; }
};

ConvGeometry conv_geometry(const Shape& x, const Shape& k, Padding padding, std::size_t stride) {
  if (x.size() != 4 || k.size() != 4 || x[1] != k[1]) {
    throw ShapeError(fmt::format("conv2d: input {} incompatible with kernel {}", shape_string(x), shape_string(k)));
  }
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  ConvGeometry g{x[0], x[1], x[2], x[3], k[0], k[2], k[3], stride, 0, 0, 0, 0};
  if (padding == Padding::valid) {
    if (g.kh > g.h || g.kw > g.w) {
      throw ShapeError(fmt::format("conv2d: kernel {} larger than input {}", shape_string(k), shape_string(x)));
    }
    g.oh = (g.h - g.kh) / stride + 1;
    g.ow = (g.w - g.kw) / stride + 1;
  } else {
    g.oh = (g.h + stride - 1) / stride;
    g.ow = (g.w + stride - 1) / stride;
    const std::size_t need_h = (g.oh - 1) * stride + g.kh;
    const std::size_t need_w = (g.ow - 1) * stride + g.kw;
    g.pad_top = need_h > g.h ? (need_h - g.h) / 2 : 0;
    g.pad_left = need_w > g.w ? (need_w - g.w) / 2 : 0;
  }
  return g;
}

// Output columns [lo, hi) whose kernel column j falls inside the image.
std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t j) {
  const std::size_t lo = std::min(g.ow, j >= g.pad_left ? 0 : (g.pad_left - j + g.stride - 1) / g.stride);
  const std::size_t end = g.w + g.pad_left > j ? (g.w + g.pad_left - j + g.stride - 1) / g.stride : 0;
  return {lo, std::max(lo, std::min(g.ow, end))};
}

// Patch rows of one example; row r starts at col + r * ld.
template <class T>
void im2col(const T* x, const ConvGeometry& g, T* col, std::size_t ld) {
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    const T* xc = x + ch * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = col + ((ch * g.kh + i) * g.kw + j) * ld;
        const auto [lo, hi] = valid_columns(g, j);
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad_top);
          T* out = row + oy * g.ow;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(out, out + g.ow, T(0));
            continue;
          }
          std::fill(out, out + lo, T(0));
          std::fill(out + hi, out + g.ow, T(0));
          const T* src = xc + static_cast<std::size_t>(y) * g.w + (lo * g.stride + j - g.pad_left);
          if (g.stride == 1) {
            std::copy(src, src + (hi - lo), out + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) out[ox] = src[(ox - lo) * g.stride];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, const ConvGeometry& g, T* x, std::size_t ld) {
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    T* xc = x + ch * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((ch * g.kh + i) * g.kw + j) * ld;
        const auto [lo, hi] = valid_columns(g, j);
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad_top);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst = xc + static_cast<std::size_t>(y) * g.w + (lo * g.stride + j - g.pad_left);
          const T* in = row + oy * g.ow;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[(ox - lo) * g.stride] += in[ox];
        }
      }
    }
  }
}

// Examples per GEMM so that the patch matrix stays near 16 MB.
std::size_t chunk_examples(const ConvGeometry& g, std::size_t elem) {
  const std::size_t per = g.patch() * g.out_plane() * elem;
  return std::clamp<std::size_t>((std::size_t(16) << 20) / std::max<std::size_t>(per, 1), 1, g.n);
}

// Copies nb examples between N x F x P layout and F x (nb P) layout.
template <class T>
void gather_chunk(const T* src, const ConvGeometry& g, std::size_t nb, T* dst) {
  const std::size_t p = g.out_plane();
  for (std::size_t e = 0; e < nb; ++e)
    for (std::size_t f = 0; f < g.f; ++f) std::copy_n(src + (e * g.f + f) * p, p, dst + f * nb * p + e * p);
}

template <class T>
void scatter_chunk(const T* src, const ConvGeometry& g, std::size_t nb, T* dst) {
  const std::size_t p = g.out_plane();
  for (std::size_t e = 0; e < nb; ++e)
    for (std::size_t f = 0; f < g.f; ++f) std::copy_n(src + f * nb * p + e * p, p, dst + (e * g.f + f) * p);
}

// Kernel gradient (needs x) and input gradient, either may be null. Both
// accumulate; one gathered gradient chunk serves both products.
template <class T>
void conv_backward(const T* grad_out, const T* x, const T* kernel, const ConvGeometry& g, T* grad_kernel,
                   T* grad_in) {
  const std::size_t in_plane = g.c * g.h * g.w, p = g.out_plane();
  const std::size_t out_size = g.f * p;
  const std::size_t chunk = chunk_examples(g, sizeof(T));
  std::vector<T> col(g.patch() * chunk * p), gout(g.f * chunk * p);
  for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
    const std::size_t nb = std::min(chunk, g.n - n0), ld = nb * p;
    gather_chunk(grad_out + n0 * out_size, g, nb, gout.data());
    if (grad_kernel) {
      for (std::size_t e = 0; e < nb; ++e) im2col(x + (n0 + e) * in_plane, g, col.data() + e * p, ld);
      gemm(Trans::no, Trans::yes, g.f, g.patch(), ld, T(1), gout.data(), ld, col.data(), ld, T(1), grad_kernel,
           g.patch());
    }
    if (grad_in) {
      gemm(Trans::yes, Trans::no, g.patch(), ld, g.f, T(1), kernel, g.patch(), gout.data(), ld, T(0), col.data(), ld);
      for (std::size_t e = 0; e < nb; ++e) col2im_add(col.data() + e * p, g, grad_in + (n0 + e) * in_plane, ld);
    }
  }
}

}  // namespace

template <class T>
Var<T> conv2d(Var<T> x, Var<T> kernel, Padding padding, std::size_t stride) {
  const ConvGeometry g = conv_geometry(x.shape(), kernel.shape(), padding, stride);
  const std::size_t in_plane = g.c * g.h * g.w;
  const std::size_t out_size = g.f * g.out_plane();
  Tensor<T> out({g.n, g.f, g.oh, g.ow});
  const T* xv = x.value().data();
  const T* kv = kernel.value().data();
  const std::size_t p = g.out_plane(), chunk = chunk_examples(g, sizeof(T));
  {
    std::vector<T> col(g.patch() * chunk * p), res(g.f * chunk * p);
    for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
      const std::size_t nb = std::min(chunk, g.n - n0), ld = nb * p;
      for (std::size_t e = 0; e < nb; ++e) im2col(xv + (n0 + e) * in_plane, g, col.data() + e * p, ld);
      gemm(Trans::no, Trans::no, g.f, ld, g.patch(), T(1), kv, g.patch(), col.data(), ld, T(0), res.data(), ld);
      scatter_chunk(res.data(), g, nb, out.data() + n0 * out_size);
    }
  }

  return x.tape().record(std::move(out), {x, kernel}, [x, kernel, g](Tape<T>& tape, const Tensor<T>& grad) {
    Tensor<T>* gk = tape.grad_of(kernel);
    Tensor<T>* gx = tape.grad_of(x);
    conv_backward(grad.data(), x.value().data(), kernel.value().data(), g, gk ? gk->data() : nullptr,
                  gx ? gx->data() : nullptr);
  });
}

template <class T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& kernel, const Shape& input_shape,
                                Padding padding, std::size_t stride) {
  const ConvGeometry g = conv_geometry(input_shape, kernel.shape(), padding, stride);
  if (grad_out.shape() != Shape{g.n, g.f, g.oh, g.ow}) {
    throw ShapeError(fmt::format("conv2d_backward_input: gradient {} does not match output {}",
                                 shape_string(grad_out.shape()), shape_string(Shape{g.n, g.f, g.oh, g.ow})));
  }
  Tensor<T> grad_in(input_shape);
  conv_backward(grad_out.data(), static_cast<const T*>(nullptr), kernel.data(), g, static_cast<T*>(nullptr),
                grad_in.data());
  return grad_in;
}

template <class T>
Var<T> pool2d(Var<T> x, PoolKind kind, std::size_t window, std::size_t stride) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("pool2d: expected N x C x H x W, got " + shape_string(s));
  if (window == 0 || stride == 0) throw std::invalid_argument("pool2d: window and stride must be positive");
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
  if (window > h || window > w) {
    throw ShapeError(fmt::format("pool2d: window {} exceeds spatial extents of {}", window, shape_string(s)));
  }
  if ((h - window) % stride != 0 || (w - window) % stride != 0) {
    throw ShapeError(fmt::format("pool2d: window {} stride {} does not tile {}", window, stride, shape_string(s)));
  }
  const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  Tensor<T> out({n, c, oh, ow});
  const Tensor<T>& xv = x.value();
  std::vector<std::uint32_t> argmax;
  if (kind == PoolKind::max) argmax.resize(out.numel());
  const T inv_area = T(1) / static_cast<T>(window * window);

  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = xv.data() + plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t o = (plane * oh + oy) * ow + ox;
        if (kind == PoolKind::max) {
          std::size_t best = oy * stride * w + ox * stride;
          for (std::size_t i = 0; i < window; ++i) {
            for (std::size_t j = 0; j < window; ++j) {
              const std::size_t idx = (oy * stride + i) * w + ox * stride + j;
              if (src[idx] > src[best]) best = idx;
            }
          }
          out[o] = src[best];
          argmax[o] = static_cast<std::uint32_t>(best);
        } else {
          T acc = 0;
          for (std::size_t i = 0; i < window; ++i) {
            for (std::size_t j = 0; j < window; ++j) acc += src[(oy * stride + i) * w + ox * stride + j];
          }
          out[o] = acc * inv_area;
        }
      }
    }
  }

  return x.tape().record(
      std::move(out), {x},
      [x, kind, window, stride, n, c, h, w, oh, ow, inv_area, argmax = std::move(argmax)](Tape<T>& tape,
                                                                                         const Tensor<T>& g) {
        Tensor<T>* gx = tape.grad_of(x);
        if (gx == nullptr) return;
        for (std::size_t plane = 0; plane < n * c; ++plane) {
          T* dst = gx->data() + plane * h * w;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const std::size_t o = (plane * oh + oy) * ow + ox;
              if (kind == PoolKind::max) {
                dst[argmax[o]] += g[o];
              } else {
                const T share = g[o] * inv_area;
                for (std::size_t i = 0; i < window; ++i) {
                  for (std::size_t j = 0; j < window; ++j) dst[(oy * stride + i) * w + ox * stride + j] += share;
                }
              }
            }
          }
        }
      });
}

template Var<float> conv2d(Var<float>, Var<float>, Padding, std::size_t);
template Var<double> conv2d(Var<double>, Var<double>, Padding, std::size_t);
template Tensor<float> conv2d_backward_input(const Tensor<float>&, const Tensor<float>&, const Shape&, Padding,
                                             std::size_t);
template Tensor<double> conv2d_backward_input(const Tensor<double>&, const Tensor<double>&, const Shape&, Padding,
                                              std::size_t);
template Var<float> pool2d(Var<float>, PoolKind, std::size_t, std::size_t);
template Var<double> pool2d(Var<double>, PoolKind, std::size_t, std::size_t);

}  // namespace splitbn
