#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "splitbn/tape.hpp"
#include "splitbn/tensor.hpp"

namespace splitbn {

enum class Partition : std::uint8_t { labeled = 0, unlabeled = 1 };

const char* to_string(Partition p);

/// A batch whose rows are tagged labeled/unlabeled. Labels are -1 on unlabeled rows.
template <class T>
struct PartitionedBatch {
  Tensor<T> data;
  std::vector<Partition> partition;
  std::vector<int> labels;

  std::size_t size() const { return partition.size(); }
  std::size_t count(Partition p) const;
  /// Throws unless partition/labels agree with the data's leading extent and
  /// labels are present exactly on labeled rows.
  void validate() const;
};

enum class NormKind { batch, split };

template <class T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;
  bool updated = false;
};

/// Learnable affine pair plus running statistics: one pair for vanilla batch
/// normalization, one per partition for split normalization. The affine pair
/// is always shared.
template <class T>
struct NormalizationState {
  NormalizationState(std::string name, std::size_t channels, NormKind kind, T momentum = T(0.1), T epsilon = T(1e-5));

  std::string name;
  NormKind kind;
  Parameter<T> alpha;
  Parameter<T> beta;
  std::vector<RunningStats<T>> running;
  T momentum;
  T epsilon;

  std::size_t channels() const { return alpha.value.numel(); }
  RunningStats<T>& stats_for(Partition p);
  const RunningStats<T>& stats_for(Partition p) const;
};

enum class StatsUpdate { apply, suppress };

/// Batch statistics over (batch, spatial) per channel; biased variance.
/// Requires a vanilla state and at least two examples.
template <class T>
Var<T> bn_train(Var<T> x, Var<T> alpha, Var<T> beta, NormalizationState<T>& state,
                StatsUpdate update = StatsUpdate::apply);

/// Labeled and unlabeled rows are normalized with their own statistics and the
/// shared affine pair. A partition that is absent leaves its running statistics
/// untouched; a partition with a single example is rejected.
template <class T>
Var<T> splitbn_train(Var<T> x, std::span<const Partition> partition, Var<T> alpha, Var<T> beta,
                     NormalizationState<T>& state, StatsUpdate update = StatsUpdate::apply);

/// Running-statistics normalization. Vanilla states ignore `choice`.
template <class T>
Var<T> bn_infer(Var<T> x, Var<T> alpha, Var<T> beta, const NormalizationState<T>& state, Partition choice);

// Convenience overloads that put the state's own parameters on the tape.
template <class T>
Var<T> bn_train(Var<T> x, NormalizationState<T>& state, StatsUpdate update = StatsUpdate::apply);
template <class T>
Var<T> splitbn_train(Var<T> x, std::span<const Partition> partition, NormalizationState<T>& state,
                     StatsUpdate update = StatsUpdate::apply);
template <class T>
Var<T> bn_infer(Var<T> x, NormalizationState<T>& state, Partition choice);

extern template struct NormalizationState<float>;
extern template struct NormalizationState<double>;
extern template struct PartitionedBatch<float>;
extern template struct PartitionedBatch<double>;

}  // namespace splitbn
