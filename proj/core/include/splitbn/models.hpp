#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "splitbn/normalization.hpp"
#include "splitbn/ops.hpp"

namespace splitbn {

enum class Family { wide_resnet, convnet13 };
enum class NormType { batch, split, none };
enum class Activation { relu, leaky_relu };

const char* to_string(Family f);
const char* to_string(NormType n);
const char* to_string(Activation a);
Family parse_family(const std::string& s);
NormType parse_norm(const std::string& s);
Activation parse_activation(const std::string& s);

/// Positive fraction used to shrink layer widths, e.g. "1/4" or "0.25".
struct Rational {
  std::int64_t num = 1;
  std::int64_t den = 1;

  static Rational parse(const std::string& text);
  /// round(width * num / den), never below 1.
  std::size_t scale(std::size_t width) const;
  std::string str() const;
  bool operator==(const Rational&) const = default;
};

struct ArchitectureSpec {
  Family family = Family::convnet13;
  int depth = 28;
  int width = 2;
  NormType norm = NormType::batch;
  int num_classes = 10;
  Activation activation = Activation::leaky_relu;
  double leaky_slope = 0.1;
  Rational width_scale{};
  double dropout = 0.5;
  /// Permits norm=none on the residual family.
  bool allow_unnormalized = false;

  void validate() const;
};

enum class Mode { train, infer };

template <class T>
using TapSink = std::function<void(const std::string& tap, const Tensor<T>& activation)>;

template <class T>
struct ForwardContext {
  Mode mode = Mode::train;
  /// Row tags for split normalization in train mode. Empty means all labeled.
  std::span<const Partition> partition{};
  /// Which running statistics split layers use in infer mode.
  Partition infer_partition = Partition::labeled;
  StatsUpdate stats = StatsUpdate::apply;
  /// Dropout masks are a pure function of this seed and the layer position.
  std::uint64_t dropout_seed = 0;
  const TapSink<T>* taps = nullptr;
};

/// Named tensor belonging to the model state (parameters and running statistics).
template <class T>
struct StateEntry {
  std::string name;
  Tensor<T>* tensor;
};

template <class T>
class Network;

/// A built architecture. Copies are deep and independent.
template <class T>
class Model {
 public:
  Model(const ArchitectureSpec& spec, std::uint64_t seed);
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;
  ~Model();

  const ArchitectureSpec& spec() const noexcept { return spec_; }

  /// Logits N x num_classes. Input must be N x 3 x 32 x 32.
  Var<T> forward(Tape<T>& tape, Var<T> x, const ForwardContext<T>& ctx);

  std::vector<Parameter<T>*> parameters();
  std::vector<NormalizationState<T>*> norm_layers();
  /// Parameters followed by per-partition running means and variances, in a fixed order.
  std::vector<StateEntry<T>> state();
  std::size_t parameter_count();

  /// Always {"pre_first_norm", "pre_last_norm"}, whatever the normalization.
  static std::vector<std::string> tap_names();
  /// Layer kinds in evaluation order, for structural inspection ("conv", "norm", "act", ...).
  std::vector<std::string> layer_kinds() const;

  void zero_grad();

 private:
  ArchitectureSpec spec_;
  std::unique_ptr<Network<T>> net_;
};

/// Convenience: one forward of a whole batch, with the batch's own partition.
template <class T>
Var<T> forward(Model<T>& model, Tape<T>& tape, const PartitionedBatch<T>& batch, Mode mode,
               Partition infer_partition = Partition::labeled);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace splitbn
