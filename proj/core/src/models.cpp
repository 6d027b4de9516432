#include "splitbn/models.hpp"

#include <fmt/format.h>

#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>

namespace splitbn {

const char* to_string(Family f) { return f == Family::wide_resnet ? "wide_resnet" : "convnet13"; }

const char* to_string(NormType n) {
  switch (n) {
    case NormType::batch: return "batch";
    case NormType::split: return "split";
    case NormType::none: return "none";
  }
  return "?";
}

const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "leaky_relu"; }

Family parse_family(const std::string& s) {
  if (s == "wide_resnet") return Family::wide_resnet;
  if (s == "convnet13") return Family::convnet13;
  throw std::invalid_argument(fmt::format("unknown architecture family '{}'", s));
}

NormType parse_norm(const std::string& s) {
  if (s == "batch") return NormType::batch;
  if (s == "split") return NormType::split;
  if (s == "none") return NormType::none;
  throw std::invalid_argument(fmt::format("unknown normalization '{}'", s));
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "leaky_relu") return Activation::leaky_relu;
  throw std::invalid_argument(fmt::format("unknown activation '{}'", s));
}

Rational Rational::parse(const std::string& text) {
  Rational r;
  try {
    const auto slash = text.find('/');
    std::size_t used = 0;
    if (slash != std::string::npos) {
      r.num = std::stoll(text.substr(0, slash), &used);
      if (used != slash) throw std::invalid_argument("trailing");
      const std::string den = text.substr(slash + 1);
      r.den = std::stoll(den, &used);
      if (used != den.size()) throw std::invalid_argument("trailing");
    } else {
      // Decimal: scale by a power of ten.
      const double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument("trailing");
      r.den = 1'000'000;
      r.num = std::llround(v * 1e6);
    }
  } catch (const std::logic_error&) {
    throw std::invalid_argument(fmt::format("width scale '{}' is not a fraction", text));
  }
  if (r.num <= 0 || r.den <= 0) throw std::invalid_argument(fmt::format("width scale '{}' must be positive", text));
  const auto g = std::gcd(r.num, r.den);
  r.num /= g;
  r.den /= g;
  return r;
}

std::size_t Rational::scale(std::size_t width) const {
  const auto w = static_cast<std::int64_t>(width);
  const std::int64_t scaled = (2 * w * num + den) / (2 * den);
  return static_cast<std::size_t>(std::max<std::int64_t>(1, scaled));
}

std::string Rational::str() const { return den == 1 ? std::to_string(num) : fmt::format("{}/{}", num, den); }

void ArchitectureSpec::validate() const {
  if (family == Family::wide_resnet) {
    if (depth < 10 || (depth - 4) % 6 != 0)
      throw std::invalid_argument(fmt::format("wide_resnet depth {} must satisfy (depth-4) % 6 == 0", depth));
    if (width < 1) throw std::invalid_argument(fmt::format("wide_resnet width {} must be positive", width));
    if (norm == NormType::none && !allow_unnormalized)
      throw std::invalid_argument("norm=none on wide_resnet needs allow_unnormalized");
  }
  if (num_classes < 2) throw std::invalid_argument(fmt::format("num_classes {} must be at least 2", num_classes));
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0))
    throw std::invalid_argument(fmt::format("leaky slope {} outside [0, 1)", leaky_slope));
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument(fmt::format("dropout {} outside [0, 1)", dropout));
  if (width_scale.num <= 0 || width_scale.den <= 0) throw std::invalid_argument("width scale must be positive");
}

namespace {

template <class T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.storage()) v = static_cast<T>(rng.normal(0.0, sd));
  return t;
}

template <class T>
struct Conv {
  Parameter<T> kernel;
  std::optional<Parameter<T>> bias;
  Padding padding = Padding::same;
  std::size_t stride = 1;

  Conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k, Padding pad, std::size_t s,
       bool with_bias, Rng& rng)
      : kernel(name + "/kernel", he_normal<T>({out, in, k, k}, in * k * k, rng)), padding(pad), stride(s) {
    if (with_bias) bias.emplace(name + "/bias", Tensor<T>({out}));
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) {
    Var<T> y = conv2d(x, tape.parameter(kernel), padding, stride);
    return bias ? add_channel_bias(y, tape.parameter(*bias)) : y;
  }

  template <class F>
  void visit(F&& f) {
    f(kernel);
    if (bias) f(*bias);
  }
};

template <class T>
struct Dense {
  Parameter<T> weight;
  Parameter<T> bias;

  Dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
      : weight(name + "/weight", he_normal<T>({in, out}, in, rng)), bias(name + "/bias", Tensor<T>({out})) {}

  Var<T> operator()(Tape<T>& tape, Var<T> x) {
    return add_channel_bias(matmul(x, tape.parameter(weight)), tape.parameter(bias));
  }
};

template <class T>
struct Norm {
  std::optional<NormalizationState<T>> state;

  Norm(const std::string& name, std::size_t channels, NormType type) {
    if (type != NormType::none) state.emplace(name, channels, type == NormType::split ? NormKind::split : NormKind::batch);
  }

  Var<T> operator()(Var<T> x, const ForwardContext<T>& ctx, std::vector<Partition>& all_labeled) {
    if (!state) return x;
    if (ctx.mode == Mode::infer) return bn_infer(x, *state, ctx.infer_partition);
    if (state->kind == NormKind::batch) return bn_train(x, *state, ctx.stats);
    std::span<const Partition> part = ctx.partition;
    if (part.empty()) {
      all_labeled.assign(x.shape()[0], Partition::labeled);
      part = all_labeled;
    }
    return splitbn_train(x, part, *state, ctx.stats);
  }
};

template <class T>
void emit(const ForwardContext<T>& ctx, const char* tap, Var<T> x) {
  if (ctx.taps && *ctx.taps) (*ctx.taps)(tap, x.value());
}

}  // namespace

template <class T>
class Network {
 public:
  virtual ~Network() = default;
  virtual std::unique_ptr<Network> clone() const = 0;
  virtual Var<T> forward(Tape<T>& tape, Var<T> x, const ForwardContext<T>& ctx) = 0;
  /// Visits parameters in a fixed order; normalization pairs appear at their layer's position.
  virtual void visit(const std::function<void(Parameter<T>&)>& param,
                     const std::function<void(NormalizationState<T>&)>& norm) = 0;
  virtual std::vector<std::string> layer_kinds() const = 0;

 protected:
  Var<T> act(Var<T> x) const {
    return activation == Activation::relu ? relu(x) : leaky_relu(x, static_cast<T>(slope));
  }
  static void visit_norm(Norm<T>& n, const std::function<void(Parameter<T>&)>& param,
                         const std::function<void(NormalizationState<T>&)>& norm) {
    if (!n.state) return;
    param(n.state->alpha);
    param(n.state->beta);
    if (norm) norm(*n.state);
  }

  Activation activation = Activation::leaky_relu;
  double slope = 0.1;
  std::vector<Partition> scratch_;
};

namespace {

/// Three convolutional stages, average pooling and a dense classifier.
template <class T>
class ConvNet13 final : public Network<T> {
 public:
  ConvNet13(const ArchitectureSpec& spec, Rng& rng) : dropout_(spec.dropout) {
    this->activation = spec.activation;
    this->slope = spec.leaky_slope;
    const auto& ws = spec.width_scale;
    const std::size_t w1 = ws.scale(128), w2 = ws.scale(256), w3 = ws.scale(512);
    struct Row {
      std::size_t out, k;
      Padding pad;
    };
    const Row rows[] = {{w1, 3, Padding::same},         {w1, 3, Padding::same}, {w1, 3, Padding::same},
                        {w2, 3, Padding::same},         {w2, 3, Padding::same}, {w2, 3, Padding::same},
                        {w3, 3, Padding::valid},        {w2, 1, Padding::same}, {w1, 1, Padding::same}};
    const bool with_bias = spec.norm == NormType::none;
    std::size_t in = 3;
    for (std::size_t i = 0; i < 9; ++i) {
      const std::string name = fmt::format("conv{}", i + 1);
      convs_.emplace_back(name, in, rows[i].out, rows[i].k, rows[i].pad, 1, with_bias, rng);
      norms_.emplace_back(name + "/bn", rows[i].out, spec.norm);
      in = rows[i].out;
    }
    fc_.emplace("fc", in, static_cast<std::size_t>(spec.num_classes), rng);
  }

  std::unique_ptr<Network<T>> clone() const override { return std::make_unique<ConvNet13>(*this); }

  Var<T> forward(Tape<T>& tape, Var<T> x, const ForwardContext<T>& ctx) override {
    const bool training = ctx.mode == Mode::train;
    for (std::size_t i = 0; i < 9; ++i) {
      x = convs_[i](tape, x);
      if (i == 0) emit(ctx, "pre_first_norm", x);
      if (i == 8) emit(ctx, "pre_last_norm", x);
      x = this->act(norms_[i](x, ctx, this->scratch_));
      if (i == 2 || i == 5) {
        x = pool2d(x, PoolKind::max, 2, 2);
        Rng rng(mix_seed(ctx.dropout_seed, i));
        x = dropout(x, dropout_, training, rng);
      }
    }
    const std::size_t side = x.shape()[2];
    x = pool2d(x, PoolKind::average, side, side);
    x = reshape(x, {x.shape()[0], x.shape()[1]});
    return (*fc_)(tape, x);
  }

  void visit(const std::function<void(Parameter<T>&)>& param,
             const std::function<void(NormalizationState<T>&)>& norm) override {
    for (std::size_t i = 0; i < 9; ++i) {
      convs_[i].visit(param);
      this->visit_norm(norms_[i], param, norm);
    }
    param(fc_->weight);
    param(fc_->bias);
  }

  std::vector<std::string> layer_kinds() const override {
    std::vector<std::string> k;
    for (std::size_t i = 0; i < 9; ++i) {
      k.push_back("conv");
      if (norms_[i].state) k.push_back("norm");
      k.push_back("act");
      if (i == 2 || i == 5) {
        k.push_back("max_pool");
        k.push_back("dropout");
      }
    }
    k.push_back("avg_pool");
    k.push_back("dense");
    return k;
  }

 private:
  double dropout_;
  std::vector<Conv<T>> convs_;
  std::vector<Norm<T>> norms_;
  std::optional<Dense<T>> fc_;
};

/// Pre-activation residual network: norm -> activation -> conv inside each block.
template <class T>
class WideResNet final : public Network<T> {
  struct Block {
    Norm<T> bn1;
    Conv<T> conv1;
    Norm<T> bn2;
    Conv<T> conv2;
    std::optional<Conv<T>> shortcut;
  };

 public:
  WideResNet(const ArchitectureSpec& spec, Rng& rng) {
    this->activation = spec.activation;
    this->slope = spec.leaky_slope;
    const auto& ws = spec.width_scale;
    const bool with_bias = spec.norm == NormType::none;
    const auto k = static_cast<std::size_t>(spec.width);
    const std::size_t per_group = static_cast<std::size_t>((spec.depth - 4) / 6);
    const std::size_t base = ws.scale(16);
    stem_.emplace("stem", 3, base, 3, Padding::same, 1, with_bias, rng);
    std::size_t in = base;
    const std::size_t widths[] = {ws.scale(16 * k), ws.scale(32 * k), ws.scale(64 * k)};
    for (std::size_t g = 0; g < 3; ++g) {
      for (std::size_t b = 0; b < per_group; ++b) {
        const std::string name = fmt::format("group{}/block{}", g + 1, b + 1);
        const std::size_t out = widths[g];
        const std::size_t stride = (b == 0 && g > 0) ? 2 : 1;
        Block blk{Norm<T>(name + "/bn1", in, spec.norm),
                  Conv<T>(name + "/conv1", in, out, 3, Padding::same, stride, with_bias, rng),
                  Norm<T>(name + "/bn2", out, spec.norm),
                  Conv<T>(name + "/conv2", out, out, 3, Padding::same, 1, with_bias, rng),
                  std::nullopt};
        if (in != out || stride != 1)
          blk.shortcut.emplace(name + "/shortcut", in, out, 1, Padding::same, stride, with_bias, rng);
        blocks_.push_back(std::move(blk));
        in = out;
      }
    }
    final_norm_.emplace("final_bn", in, spec.norm);
    fc_.emplace("fc", in, static_cast<std::size_t>(spec.num_classes), rng);
  }

  std::unique_ptr<Network<T>> clone() const override { return std::make_unique<WideResNet>(*this); }

  Var<T> forward(Tape<T>& tape, Var<T> x, const ForwardContext<T>& ctx) override {
    x = (*stem_)(tape, x);
    emit(ctx, "pre_first_norm", x);
    for (auto& blk : blocks_) {
      Var<T> o = this->act(blk.bn1(x, ctx, this->scratch_));
      Var<T> y = blk.conv1(tape, o);
      y = blk.conv2(tape, this->act(blk.bn2(y, ctx, this->scratch_)));
      x = add(y, blk.shortcut ? (*blk.shortcut)(tape, o) : x);
    }
    emit(ctx, "pre_last_norm", x);
    x = this->act((*final_norm_)(x, ctx, this->scratch_));
    const std::size_t side = x.shape()[2];
    x = pool2d(x, PoolKind::average, side, side);
    x = reshape(x, {x.shape()[0], x.shape()[1]});
    return (*fc_)(tape, x);
  }

  void visit(const std::function<void(Parameter<T>&)>& param,
             const std::function<void(NormalizationState<T>&)>& norm) override {
    stem_->visit(param);
    for (auto& blk : blocks_) {
      this->visit_norm(blk.bn1, param, norm);
      blk.conv1.visit(param);
      this->visit_norm(blk.bn2, param, norm);
      blk.conv2.visit(param);
      if (blk.shortcut) blk.shortcut->visit(param);
    }
    this->visit_norm(*final_norm_, param, norm);
    param(fc_->weight);
    param(fc_->bias);
  }

  std::vector<std::string> layer_kinds() const override {
    std::vector<std::string> k{"conv"};
    const bool normed = final_norm_->state.has_value();
    for (const auto& blk : blocks_) {
      if (normed) k.push_back("norm");
      k.insert(k.end(), {"act", "conv"});
      if (normed) k.push_back("norm");
      k.insert(k.end(), {"act", "conv"});
      if (blk.shortcut) k.push_back("conv");
      k.push_back("add");
    }
    if (normed) k.push_back("norm");
    k.insert(k.end(), {"act", "avg_pool", "dense"});
    return k;
  }

 private:
  std::optional<Conv<T>> stem_;
  std::vector<Block> blocks_;
  std::optional<Norm<T>> final_norm_;
  std::optional<Dense<T>> fc_;
};

}  // namespace

template <class T>
Model<T>::Model(const ArchitectureSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  Rng rng(mix_seed(seed, 0x1217));
  if (spec_.family == Family::convnet13)
    net_ = std::make_unique<ConvNet13<T>>(spec_, rng);
  else
    net_ = std::make_unique<WideResNet<T>>(spec_, rng);
}

template <class T>
Model<T>::Model(const Model& other) : spec_(other.spec_), net_(other.net_->clone()) {}

template <class T>
Model<T>& Model<T>::operator=(const Model& other) {
  if (this != &other) {
    spec_ = other.spec_;
    net_ = other.net_->clone();
  }
  return *this;
}

template <class T>
Model<T>::Model(Model&&) noexcept = default;
template <class T>
Model<T>& Model<T>::operator=(Model&&) noexcept = default;
template <class T>
Model<T>::~Model() = default;

template <class T>
Var<T> Model<T>::forward(Tape<T>& tape, Var<T> x, const ForwardContext<T>& ctx) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != 32 || s[3] != 32)
    throw ShapeError(fmt::format("model input must be Nx3x32x32, got {}", shape_string(s)));
  if (ctx.mode == Mode::train && !ctx.partition.empty() && ctx.partition.size() != s[0])
    throw ShapeError(fmt::format("partition has {} entries for a batch of {}", ctx.partition.size(), s[0]));
  return net_->forward(tape, x, ctx);
}

template <class T>
std::vector<Parameter<T>*> Model<T>::parameters() {
  std::vector<Parameter<T>*> out;
  net_->visit([&](Parameter<T>& p) { out.push_back(&p); }, {});
  return out;
}

template <class T>
std::vector<NormalizationState<T>*> Model<T>::norm_layers() {
  std::vector<NormalizationState<T>*> out;
  net_->visit([](Parameter<T>&) {}, [&](NormalizationState<T>& n) { out.push_back(&n); });
  return out;
}

template <class T>
std::vector<StateEntry<T>> Model<T>::state() {
  std::vector<StateEntry<T>> out;
  for (auto* p : parameters()) out.push_back({p->name, &p->value});
  for (auto* n : norm_layers()) {
    for (std::size_t i = 0; i < n->running.size(); ++i) {
      const std::string suffix =
          n->kind == NormKind::split ? std::string("/") + to_string(static_cast<Partition>(i)) : std::string();
      out.push_back({n->name + "/running_mean" + suffix, &n->running[i].mean});
      out.push_back({n->name + "/running_var" + suffix, &n->running[i].var});
    }
  }
  return out;
}

template <class T>
std::size_t Model<T>::parameter_count() {
  std::size_t total = 0;
  for (auto* p : parameters()) total += p->value.numel();
  return total;
}

template <class T>
std::vector<std::string> Model<T>::tap_names() {
  return {"pre_first_norm", "pre_last_norm"};
}

template <class T>
std::vector<std::string> Model<T>::layer_kinds() const {
  return net_->layer_kinds();
}

template <class T>
void Model<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <class T>
Var<T> forward(Model<T>& model, Tape<T>& tape, const PartitionedBatch<T>& batch, Mode mode, Partition infer_partition) {
  ForwardContext<T> ctx;
  ctx.mode = mode;
  ctx.partition = batch.partition;
  ctx.infer_partition = infer_partition;
  return model.forward(tape, tape.constant(batch.data), ctx);
}

template class Model<float>;
template class Model<double>;
template Var<float> forward(Model<float>&, Tape<float>&, const PartitionedBatch<float>&, Mode, Partition);
template Var<double> forward(Model<double>&, Tape<double>&, const PartitionedBatch<double>&, Mode, Partition);

}  // namespace splitbn
