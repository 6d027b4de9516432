#include "splitbn/normalization.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>

namespace splitbn {

const char* to_string(Partition p) { return p == Partition::labeled ? "labeled" : "unlabeled"; }

template <class T>
std::size_t PartitionedBatch<T>::count(Partition p) const {
  return static_cast<std::size_t>(std::count(partition.begin(), partition.end(), p));
}

template <class T>
void PartitionedBatch<T>::validate() const {
  if (data.rank() == 0 || data.dim(0) != partition.size()) {
    throw ShapeError(fmt::format("partition mask of length {} for batch {}", partition.size(),
                                 shape_string(data.shape())));
  }
  if (labels.size() != partition.size()) {
    throw std::invalid_argument(fmt::format("{} labels for {} examples", labels.size(), partition.size()));
  }
  for (std::size_t i = 0; i < partition.size(); ++i) {
    const bool labeled = partition[i] == Partition::labeled;
    if (labeled && labels[i] < 0) throw std::invalid_argument(fmt::format("labeled example {} has no label", i));
    if (!labeled && labels[i] >= 0) throw std::invalid_argument(fmt::format("unlabeled example {} carries a label", i));
  }
}

template <class T>
NormalizationState<T>::NormalizationState(std::string n, std::size_t channels, NormKind k, T mom, T eps)
    : name(std::move(n)),
      kind(k),
      alpha(name + "/alpha", Tensor<T>({channels}, T(1))),
      beta(name + "/beta", Tensor<T>({channels}, T(0))),
      momentum(mom),
      epsilon(eps) {
  if (!(momentum > T(0) && momentum < T(1))) throw std::invalid_argument("normalization momentum must be in (0, 1)");
  if (!(epsilon >= T(0))) throw std::invalid_argument("normalization epsilon must be non-negative");
  const std::size_t slots = kind == NormKind::split ? 2 : 1;
  for (std::size_t i = 0; i < slots; ++i) {
    running.push_back(RunningStats<T>{Tensor<T>({channels}, T(0)), Tensor<T>({channels}, T(1)), false});
  }
}

template <class T>
RunningStats<T>& NormalizationState<T>::stats_for(Partition p) {
  return kind == NormKind::split ? running.at(static_cast<std::size_t>(p)) : running.at(0);
}

template <class T>
const RunningStats<T>& NormalizationState<T>::stats_for(Partition p) const {
  return kind == NormKind::split ? running.at(static_cast<std::size_t>(p)) : running.at(0);
}

namespace {

struct Layout {
  std::size_t n, c, spatial;
};

Layout norm_layout(const Shape& s, std::size_t channels, const std::string& name) {
  if ((s.size() != 2 && s.size() != 4) || s[1] != channels) {
    throw ShapeError(fmt::format("{}: input {} does not have {} channels", name, shape_string(s), channels));
  }
  return Layout{s[0], s[1], s.size() == 4 ? s[2] * s[3] : 1};
}

template <class T>
void check_affine(const Var<T>& alpha, const Var<T>& beta, std::size_t channels, const std::string& name) {
  if (alpha.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
    throw ShapeError(fmt::format("{}: affine shapes {} / {} for {} channels", name, shape_string(alpha.shape()),
                                 shape_string(beta.shape()), channels));
  }
}

/// Sum of term(s) for s < n in double, with four interleaved accumulators.
template <class F>
double accumulate(std::size_t n, F term) {
  double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
  std::size_t s = 0;
  for (; s + 4 <= n; s += 4) {
    a0 += term(s);
    a1 += term(s + 1);
    a2 += term(s + 2);
    a3 += term(s + 3);
  }
  for (; s < n; ++s) a0 += term(s);
  return (a0 + a1) + (a2 + a3);
}

/// Normalizes each group of rows with that group's own per-channel moments.
/// `slot[g]` is the running-statistics slot that group g updates.
template <class T>
Var<T> normalize_groups(Var<T> x, Var<T> alpha, Var<T> beta, std::vector<int> group, std::size_t groups,
                        const std::vector<std::size_t>& slot, NormalizationState<T>& state, StatsUpdate update) {
  const Layout l = norm_layout(x.shape(), state.channels(), state.name);
  check_affine(alpha, beta, l.c, state.name);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& av = alpha.value();
  const Tensor<T>& bv = beta.value();

  std::vector<std::size_t> rows(groups, 0);
  for (int g : group) rows[static_cast<std::size_t>(g)]++;

  std::vector<double> mean(groups * l.c, 0.0), var(groups * l.c, 0.0);
  for (std::size_t i = 0; i < l.n; ++i) {
    const std::size_t g = static_cast<std::size_t>(group[i]);
    for (std::size_t ch = 0; ch < l.c; ++ch) {
      const T* src = xv.data() + (i * l.c + ch) * l.spatial;
      mean[g * l.c + ch] += accumulate(l.spatial, [src](std::size_t s) { return static_cast<double>(src[s]); });
    }
  }
  for (std::size_t g = 0; g < groups; ++g) {
    const double m = static_cast<double>(rows[g] * l.spatial);
    for (std::size_t ch = 0; ch < l.c; ++ch) mean[g * l.c + ch] /= m;
  }
  for (std::size_t i = 0; i < l.n; ++i) {
    const std::size_t g = static_cast<std::size_t>(group[i]);
    for (std::size_t ch = 0; ch < l.c; ++ch) {
      const T* src = xv.data() + (i * l.c + ch) * l.spatial;
      const double mu = mean[g * l.c + ch];
      var[g * l.c + ch] += accumulate(l.spatial, [src, mu](std::size_t s) {
        const double d = static_cast<double>(src[s]) - mu;
        return d * d;
      });
    }
  }
  std::vector<T> inv_std(groups * l.c);
  for (std::size_t g = 0; g < groups; ++g) {
    const double m = static_cast<double>(rows[g] * l.spatial);
    for (std::size_t ch = 0; ch < l.c; ++ch) {
      var[g * l.c + ch] /= m;
      inv_std[g * l.c + ch] =
          static_cast<T>(1.0 / std::sqrt(var[g * l.c + ch] + static_cast<double>(state.epsilon)));
    }
  }

  Tensor<T> xhat(xv.shape());
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < l.n; ++i) {
    const std::size_t g = static_cast<std::size_t>(group[i]);
    for (std::size_t ch = 0; ch < l.c; ++ch) {
      const std::size_t off = (i * l.c + ch) * l.spatial;
      const T mu = static_cast<T>(mean[g * l.c + ch]);
      const T is = inv_std[g * l.c + ch];
      const T a = av[ch], b = bv[ch];
      const T* src = xv.data() + off;
      T* h = xhat.data() + off;
      T* o = out.data() + off;
      for (std::size_t s = 0; s < l.spatial; ++s) {
        h[s] = (src[s] - mu) * is;
        o[s] = a * h[s] + b;
      }
    }
  }

  if (update == StatsUpdate::apply) {
    const T mom = state.momentum;
    for (std::size_t g = 0; g < groups; ++g) {
      RunningStats<T>& rs = state.running.at(slot[g]);
      for (std::size_t ch = 0; ch < l.c; ++ch) {
        rs.mean[ch] = (T(1) - mom) * rs.mean[ch] + mom * static_cast<T>(mean[g * l.c + ch]);
        rs.var[ch] = (T(1) - mom) * rs.var[ch] + mom * static_cast<T>(var[g * l.c + ch]);
      }
      rs.updated = true;
    }
  }

  if (!x.requires_grad() && !alpha.requires_grad() && !beta.requires_grad()) {
    return x.tape().record(std::move(out), {x, alpha, beta}, {});
  }

  return x.tape().record(
      std::move(out), {x, alpha, beta},
      [x, alpha, beta, l, groups, rows = std::move(rows), group = std::move(group), inv_std = std::move(inv_std),
       xhat = std::move(xhat)](Tape<T>& tape, const Tensor<T>& dy) {
        const Tensor<T>& av = alpha.value();
        // Per group and channel: sum(dy) and sum(dy * xhat).
        std::vector<double> sum_dy(groups * l.c, 0.0), sum_dy_xhat(groups * l.c, 0.0);
        for (std::size_t i = 0; i < l.n; ++i) {
          const std::size_t g = static_cast<std::size_t>(group[i]);
          for (std::size_t ch = 0; ch < l.c; ++ch) {
            const std::size_t off = (i * l.c + ch) * l.spatial;
            const T* d = dy.data() + off;
            const T* h = xhat.data() + off;
            sum_dy[g * l.c + ch] += accumulate(l.spatial, [d](std::size_t s) { return static_cast<double>(d[s]); });
            sum_dy_xhat[g * l.c + ch] += accumulate(
                l.spatial, [d, h](std::size_t s) { return static_cast<double>(d[s]) * static_cast<double>(h[s]); });
          }
        }
        if (Tensor<T>* ga = tape.grad_of(alpha)) {
          for (std::size_t g = 0; g < groups; ++g) {
            for (std::size_t ch = 0; ch < l.c; ++ch) (*ga)[ch] += static_cast<T>(sum_dy_xhat[g * l.c + ch]);
          }
        }
        if (Tensor<T>* gb = tape.grad_of(beta)) {
          for (std::size_t g = 0; g < groups; ++g) {
            for (std::size_t ch = 0; ch < l.c; ++ch) (*gb)[ch] += static_cast<T>(sum_dy[g * l.c + ch]);
          }
        }
        if (Tensor<T>* gx = tape.grad_of(x)) {
          for (std::size_t i = 0; i < l.n; ++i) {
            const std::size_t g = static_cast<std::size_t>(group[i]);
            const double m = static_cast<double>(rows[g] * l.spatial);
            for (std::size_t ch = 0; ch < l.c; ++ch) {
              const std::size_t off = (i * l.c + ch) * l.spatial;
              const double k = static_cast<double>(av[ch]) * static_cast<double>(inv_std[g * l.c + ch]) / m;
              const double sdy = sum_dy[g * l.c + ch];
              const double sdx = sum_dy_xhat[g * l.c + ch];
              const T* d = dy.data() + off;
              const T* h = xhat.data() + off;
              T* dst = gx->data() + off;
              for (std::size_t s = 0; s < l.spatial; ++s) {
                dst[s] += static_cast<T>(k * (m * static_cast<double>(d[s]) - sdy - static_cast<double>(h[s]) * sdx));
              }
            }
          }
        }
      });
}

}  // namespace

template <class T>
Var<T> bn_train(Var<T> x, Var<T> alpha, Var<T> beta, NormalizationState<T>& state, StatsUpdate update) {
  if (state.kind != NormKind::batch) {
    throw std::invalid_argument(state.name + ": bn_train needs a vanilla batch-normalization state");
  }
  const std::size_t n = x.shape().empty() ? 0 : x.shape()[0];
  if (n < 2) throw std::invalid_argument(fmt::format("{}: batch normalization needs >= 2 examples, got {}", state.name, n));
  return normalize_groups(x, alpha, beta, std::vector<int>(n, 0), 1, {0}, state, update);
}

template <class T>
Var<T> splitbn_train(Var<T> x, std::span<const Partition> partition, Var<T> alpha, Var<T> beta,
                     NormalizationState<T>& state, StatsUpdate update) {
  if (state.kind != NormKind::split) {
    throw std::invalid_argument(state.name + ": splitbn_train needs a split normalization state");
  }
  const std::size_t n = x.shape().empty() ? 0 : x.shape()[0];
  if (partition.size() != n) {
    throw ShapeError(fmt::format("{}: partition mask of length {} for input {}", state.name, partition.size(),
                                 shape_string(x.shape())));
  }
  std::array<std::size_t, 2> counts{0, 0};
  for (auto p : partition) counts[static_cast<std::size_t>(p)]++;
  for (std::size_t p = 0; p < 2; ++p) {
    if (counts[p] == 1) {
      throw std::invalid_argument(fmt::format("{}: the {} partition has a single example", state.name,
                                              to_string(static_cast<Partition>(p))));
    }
  }
  if (counts[0] + counts[1] == 0) throw std::invalid_argument(state.name + ": empty batch");

  // Present partitions become consecutive groups.
  std::array<int, 2> group_of{-1, -1};
  std::vector<std::size_t> slot;
  for (std::size_t p = 0; p < 2; ++p) {
    if (counts[p] > 0) {
      group_of[p] = static_cast<int>(slot.size());
      slot.push_back(p);
    }
  }
  std::vector<int> group(n);
  for (std::size_t i = 0; i < n; ++i) group[i] = group_of[static_cast<std::size_t>(partition[i])];
  const std::size_t groups = slot.size();
  return normalize_groups(x, alpha, beta, std::move(group), groups, slot, state, update);
}

template <class T>
Var<T> bn_infer(Var<T> x, Var<T> alpha, Var<T> beta, const NormalizationState<T>& state, Partition choice) {
  const Layout l = norm_layout(x.shape(), state.channels(), state.name);
  check_affine(alpha, beta, l.c, state.name);
  const RunningStats<T>& rs = state.stats_for(choice);
  if (!rs.updated) {
    throw std::logic_error(fmt::format("{}: running statistics{} were never updated", state.name,
                                       state.kind == NormKind::split ? fmt::format(" ({})", to_string(choice)) : ""));
  }
  std::vector<T> inv_std(l.c);
  for (std::size_t ch = 0; ch < l.c; ++ch) {
    inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rs.var[ch]) + static_cast<double>(state.epsilon)));
  }
  const Tensor<T>& xv = x.value();
  const Tensor<T>& av = alpha.value();
  const Tensor<T>& bv = beta.value();
  Tensor<T> xhat(xv.shape());
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < l.n; ++i) {
    for (std::size_t ch = 0; ch < l.c; ++ch) {
      const std::size_t off = (i * l.c + ch) * l.spatial;
      for (std::size_t s = 0; s < l.spatial; ++s) {
        const T h = (xv[off + s] - rs.mean[ch]) * inv_std[ch];
        xhat[off + s] = h;
        out[off + s] = av[ch] * h + bv[ch];
      }
    }
  }
  return x.tape().record(
      std::move(out), {x, alpha, beta},
      [x, alpha, beta, l, inv_std = std::move(inv_std), xhat = std::move(xhat)](Tape<T>& tape, const Tensor<T>& dy) {
        const Tensor<T>& av = alpha.value();
        Tensor<T>* gx = tape.grad_of(x);
        Tensor<T>* ga = tape.grad_of(alpha);
        Tensor<T>* gb = tape.grad_of(beta);
        for (std::size_t i = 0; i < l.n; ++i) {
          for (std::size_t ch = 0; ch < l.c; ++ch) {
            const std::size_t off = (i * l.c + ch) * l.spatial;
            for (std::size_t s = 0; s < l.spatial; ++s) {
              if (gx) (*gx)[off + s] += dy[off + s] * av[ch] * inv_std[ch];
              if (ga) (*ga)[ch] += dy[off + s] * xhat[off + s];
              if (gb) (*gb)[ch] += dy[off + s];
            }
          }
        }
      });
}

template <class T>
Var<T> bn_train(Var<T> x, NormalizationState<T>& state, StatsUpdate update) {
  Tape<T>& tape = x.tape();
  return bn_train(x, tape.parameter(state.alpha), tape.parameter(state.beta), state, update);
}

template <class T>
Var<T> splitbn_train(Var<T> x, std::span<const Partition> partition, NormalizationState<T>& state,
                     StatsUpdate update) {
  Tape<T>& tape = x.tape();
  return splitbn_train(x, partition, tape.parameter(state.alpha), tape.parameter(state.beta), state, update);
}

template <class T>
Var<T> bn_infer(Var<T> x, NormalizationState<T>& state, Partition choice) {
  Tape<T>& tape = x.tape();
  return bn_infer(x, tape.parameter(state.alpha), tape.parameter(state.beta),
                  static_cast<const NormalizationState<T>&>(state), choice);
}

template struct PartitionedBatch<float>;
template struct PartitionedBatch<double>;
template struct NormalizationState<float>;
template struct NormalizationState<double>;

#define SPLITBN_INSTANTIATE_NORM(T)                                                                            \
  template Var<T> bn_train(Var<T>, Var<T>, Var<T>, NormalizationState<T>&, StatsUpdate);                       \
  template Var<T> splitbn_train(Var<T>, std::span<const Partition>, Var<T>, Var<T>, NormalizationState<T>&,   \
                                StatsUpdate);                                                                  \
  template Var<T> bn_infer(Var<T>, Var<T>, Var<T>, const NormalizationState<T>&, Partition);                   \
  template Var<T> bn_train(Var<T>, NormalizationState<T>&, StatsUpdate);                                       \
  template Var<T> splitbn_train(Var<T>, std::span<const Partition>, NormalizationState<T>&, StatsUpdate);      \
  template Var<T> bn_infer(Var<T>, NormalizationState<T>&, Partition);

SPLITBN_INSTANTIATE_NORM(float)
SPLITBN_INSTANTIATE_NORM(double)

#undef SPLITBN_INSTANTIATE_NORM

}  // namespace splitbn
