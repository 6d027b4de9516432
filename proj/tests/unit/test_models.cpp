#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <map>
#include <random>

#include "gradcheck.hpp"
#include "splitbn/models.hpp"

using namespace splitbn;
using splitbn::testing::numeric_gradient;
using splitbn::testing::random_tensor;
using splitbn::testing::relative_error;

namespace {

ArchitectureSpec convnet(NormType norm, const char* scale = "1") {
  ArchitectureSpec s;
  s.family = Family::convnet13;
  s.norm = norm;
  s.width_scale = Rational::parse(scale);
  return s;
}

ArchitectureSpec wrn(int depth, int width, NormType norm, const char* scale = "1") {
  ArchitectureSpec s;
  s.family = Family::wide_resnet;
  s.depth = depth;
  s.width = width;
  s.norm = norm;
  s.activation = Activation::relu;
  s.width_scale = Rational::parse(scale);
  return s;
}

// Counted straight from the architecture description: 3x3 convs without bias,
// a 1x1 projection whenever the width or stride changes, two norms per block.
std::size_t wrn_parameter_formula(std::size_t depth, std::size_t k, std::size_t classes) {
  const std::size_t n = (depth - 4) / 6;
  std::size_t total = 3 * 16 * 9;
  std::size_t in = 16;
  const std::size_t widths[] = {16 * k, 32 * k, 64 * k};
  for (std::size_t g = 0; g < 3; ++g) {
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t out = widths[g];
      const bool strided = b == 0 && g > 0;
      total += 2 * in + in * out * 9 + 2 * out + out * out * 9;
      if (in != out || strided) total += in * out;
      in = out;
    }
  }
  return total + 2 * in + in * classes + classes;
}

Tensor<double> images(std::size_t n, std::mt19937_64& gen) { return random_tensor({n, 3, 32, 32}, gen, 0.0, 1.0); }

std::vector<Partition> alternating(std::size_t n) {
  std::vector<Partition> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i % 2 ? Partition::unlabeled : Partition::labeled;
  return p;
}

// Worst per-tensor relative error of the model's parameter gradients against
// central differences of a random linear functional of the logits.
double model_gradient_error(Model<double>& model, const Tensor<double>& x, ForwardContext<double> ctx) {
  ctx.stats = StatsUpdate::suppress;
  std::mt19937_64 gen(99);
  Tensor<double> w = random_tensor({x.dim(0), static_cast<std::size_t>(model.spec().num_classes)}, gen);
  auto value = [&]() {
    Tape<double> t(ParameterMode::frozen);
    const Tensor<double>& o = model.forward(t, t.constant(x), ctx).value();
    double acc = 0.0;
    for (std::size_t k = 0; k < o.numel(); ++k) acc += o[k] * w[k];
    return acc;
  };
  model.zero_grad();
  Tape<double> tape;
  tape.backward(sum(mul(model.forward(tape, tape.constant(x), ctx), tape.constant(w))));
  double worst = 0.0;
  // Thousands of activations sit near a leaky-ReLU or max-pool kink; a 1e-5
  // step crosses some of them, a 1e-7 step practically never does.
  for (auto* p : model.parameters()) {
    const double err = relative_error(p->grad, numeric_gradient(p->value, value, 1e-7));
    EXPECT_LT(err, 1e-4) << p->name;
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

TEST(Rational, ParsesFractionsAndDecimals) {
  EXPECT_EQ(Rational::parse("1/4"), (Rational{1, 4}));
  EXPECT_EQ(Rational::parse("2/8"), (Rational{1, 4}));
  EXPECT_EQ(Rational::parse("0.25"), (Rational{1, 4}));
  EXPECT_EQ(Rational::parse("1"), (Rational{1, 1}));
  EXPECT_THROW(Rational::parse("0"), std::invalid_argument);
  EXPECT_THROW(Rational::parse("-1/2"), std::invalid_argument);
  EXPECT_THROW(Rational::parse("a/b"), std::invalid_argument);
  EXPECT_THROW(Rational::parse("1/4x"), std::invalid_argument);
  EXPECT_EQ(Rational::parse("1/4").scale(128), 32u);
  EXPECT_EQ(Rational::parse("1/1000").scale(128), 1u);
  EXPECT_EQ(Rational::parse("1").scale(37), 37u);
}

TEST(Architecture, InvalidDepthRejected) {
  for (int depth : {27, 29, 4, 0}) EXPECT_THROW(Model<float>(wrn(depth, 2, NormType::batch), 0), std::invalid_argument);
  EXPECT_THROW(Model<float>(wrn(28, 0, NormType::batch), 0), std::invalid_argument);
}

TEST(Architecture, UnnormalizedResidualNeedsOverride) {
  EXPECT_THROW(Model<float>(wrn(10, 1, NormType::none), 0), std::invalid_argument);
  auto spec = wrn(10, 1, NormType::none, "1/4");
  spec.allow_unnormalized = true;
  EXPECT_NO_THROW(Model<float>(spec, 0));
  EXPECT_NO_THROW(Model<float>(convnet(NormType::none, "1/8"), 0));
}

TEST(Architecture, WideResNet28x2ParameterCount) {
  Model<float> m(wrn(28, 2, NormType::batch), 1);
  EXPECT_EQ(m.parameter_count(), wrn_parameter_formula(28, 2, 10));
  EXPECT_EQ(m.parameter_count(), 1'467'610u);
  // Split normalization adds running statistics, never parameters.
  Model<float> s(wrn(28, 2, NormType::split), 1);
  EXPECT_EQ(s.parameter_count(), m.parameter_count());
  for (auto [d, k] : {std::pair{10, 1}, {16, 4}, {22, 3}})
    EXPECT_EQ(Model<float>(wrn(d, k, NormType::batch), 0).parameter_count(),
              wrn_parameter_formula(static_cast<std::size_t>(d), static_cast<std::size_t>(k), 10));
}

TEST(Architecture, ConvNetLayerListing) {
  Model<float> m(convnet(NormType::none), 0);
  const auto kinds = m.layer_kinds();
  auto count = [&](const char* k) { return std::count(kinds.begin(), kinds.end(), std::string(k)); };
  EXPECT_EQ(count("conv"), 9);
  EXPECT_EQ(count("max_pool"), 2);
  EXPECT_EQ(count("dropout"), 2);
  EXPECT_EQ(count("avg_pool"), 1);
  EXPECT_EQ(count("dense"), 1);
  EXPECT_EQ(count("norm"), 0);
  auto params = m.parameters();
  EXPECT_EQ(params.back()->name, "fc/bias");
  EXPECT_EQ(params[params.size() - 2]->value.shape(), (Shape{128, 10}));
  std::map<std::string, Shape> shapes;
  for (auto* p : params) shapes[p->name] = p->value.shape();
  EXPECT_EQ(shapes["conv1/kernel"], (Shape{128, 3, 3, 3}));
  EXPECT_EQ(shapes["conv7/kernel"], (Shape{512, 256, 3, 3}));
  EXPECT_EQ(shapes["conv8/kernel"], (Shape{256, 512, 1, 1}));
  EXPECT_EQ(shapes["conv9/kernel"], (Shape{128, 256, 1, 1}));
  EXPECT_TRUE(shapes.count("conv1/bias"));

  Model<float> bn(convnet(NormType::batch), 0);
  const auto bk = bn.layer_kinds();
  EXPECT_EQ(std::count(bk.begin(), bk.end(), std::string("norm")), 9);
  EXPECT_EQ(bn.norm_layers().size(), 9u);
}

TEST(Architecture, UnitWidthScaleIsIdentity) {
  Model<float> a(convnet(NormType::batch), 3), b(convnet(NormType::batch, "4/4"), 3);
  auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value.shape(), pb[i]->value.shape());
}

TEST(Architecture, WidthScalePreservesStructureAndTaps) {
  for (auto make : {+[](const char* s) { return convnet(NormType::split, s); },
                    +[](const char* s) { return wrn(10, 2, NormType::split, s); }}) {
    Model<double> full(make("1/2"), 0), small(make("1/8"), 0);
    EXPECT_EQ(full.layer_kinds(), small.layer_kinds());
    std::vector<std::string> seen;
    TapSink<double> sink = [&](const std::string& tap, const Tensor<double>&) { seen.push_back(tap); };
    std::mt19937_64 gen(1);
    Tape<double> tape;
    ForwardContext<double> ctx;
    ctx.taps = &sink;
    small.forward(tape, tape.constant(images(2, gen)), ctx);
    EXPECT_EQ(seen, Model<double>::tap_names());
  }
}

TEST(Forward, LogitsShapeAndInputValidation) {
  std::mt19937_64 gen(2);
  for (auto spec : {convnet(NormType::split, "1/16"), wrn(10, 1, NormType::batch, "1/4")}) {
    Model<float> m(spec, 0);
    Tape<float> tape;
    auto x = images(3, gen).cast<float>();
    EXPECT_EQ(m.forward(tape, tape.constant(x), {}).shape(), (Shape{3, 10}));
    EXPECT_THROW(m.forward(tape, tape.constant(Tensor<float>({3, 3, 28, 28})), {}), ShapeError);
    EXPECT_THROW(m.forward(tape, tape.constant(Tensor<float>({3, 1, 32, 32})), {}), ShapeError);
  }
}

TEST(Forward, UnnormalizedTrainAndInferAgreeWithoutDropout) {
  auto spec = convnet(NormType::none, "1/16");
  spec.dropout = 0.0;
  Model<double> m(spec, 5);
  std::mt19937_64 gen(3);
  auto x = images(4, gen);
  Tape<double> tape;
  ForwardContext<double> train, infer;
  infer.mode = Mode::infer;
  EXPECT_EQ(m.forward(tape, tape.constant(x), train).value().storage(),
            m.forward(tape, tape.constant(x), infer).value().storage());
}

TEST(Forward, RepeatedForwardIsBitIdentical) {
  std::mt19937_64 gen(4);
  auto x = images(4, gen).cast<float>();
  const auto part = alternating(4);
  ForwardContext<float> ctx;
  ctx.partition = part;
  ctx.dropout_seed = 77;
  Model<float> a(convnet(NormType::split, "1/16"), 9), b(convnet(NormType::split, "1/16"), 9);
  Tape<float> tape;
  const auto ya = a.forward(tape, tape.constant(x), ctx).value();
  const auto yb = b.forward(tape, tape.constant(x), ctx).value();
  EXPECT_EQ(ya.storage(), yb.storage());
  ctx.dropout_seed = 78;
  EXPECT_NE(a.forward(tape, tape.constant(x), ctx).value().storage(), ya.storage());
}

TEST(Forward, CopiesAreIndependent) {
  Model<float> a(convnet(NormType::split, "1/16"), 1);
  Model<float> b = a;
  a.parameters()[0]->value.fill(0.5f);
  EXPECT_NE(b.parameters()[0]->value[0], 0.5f);
  EXPECT_EQ(a.state().size(), b.state().size());
}

TEST(Forward, SplitLayersSeparateShiftedPartitions) {
  std::mt19937_64 gen(6);
  const std::size_t n = 16;
  auto x = images(n, gen);
  const auto part = alternating(n);
  for (std::size_t i = 0; i < n; ++i)
    if (part[i] == Partition::unlabeled)
      for (std::size_t k = 0; k < 3 * 32 * 32; ++k) x[i * 3 * 32 * 32 + k] += 2.0;

  Model<double> m(convnet(NormType::split, "1/16"), 2);
  Tensor<double> tapped;
  TapSink<double> sink = [&](const std::string& tap, const Tensor<double>& a) {
    if (tap == "pre_first_norm") tapped = a;
  };
  ForwardContext<double> ctx;
  ctx.partition = part;
  ctx.taps = &sink;
  Tape<double> tape;
  m.forward(tape, tape.constant(x), ctx);

  auto partition_means = [&](const Tensor<double>& a) {
    const std::size_t c = a.dim(1), s = a.dim(2) * a.dim(3);
    std::vector<std::array<double, 2>> m(c, {0, 0});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t k = 0; k < s; ++k) m[ch][static_cast<int>(part[i])] += a[(i * c + ch) * s + k];
    for (auto& v : m) v = {v[0] / (n / 2 * s), v[1] / (n / 2 * s)};
    return m;
  };
  bool differs = false;
  for (auto [l, u] : partition_means(tapped)) differs = differs || std::abs(l - u) > 1e-2;
  EXPECT_TRUE(differs);

  NormalizationState<double> first = *m.norm_layers()[0];
  Tape<double> t2;
  const Tensor<double> post = splitbn_train(t2.constant(tapped), part, first, StatsUpdate::suppress).value();
  for (auto [l, u] : partition_means(post)) EXPECT_NEAR(l, u, 1e-5);
}

TEST(Forward, SplitDegradesToVanillaOnSinglePartition) {
  std::mt19937_64 gen(8);
  auto x = images(4, gen).cast<float>();
  for (auto make : {+[](NormType t) { return convnet(t, "1/16"); }, +[](NormType t) { return wrn(10, 1, t, "1/4"); }}) {
    Model<float> split(make(NormType::split), 3), vanilla(make(NormType::batch), 3);
    ForwardContext<float> ctx;
    ctx.dropout_seed = 1;
    Tape<float> tape;
    EXPECT_EQ(split.forward(tape, tape.constant(x), ctx).value().storage(),
              vanilla.forward(tape, tape.constant(x), ctx).value().storage());
    ctx.mode = Mode::infer;
    EXPECT_EQ(split.forward(tape, tape.constant(x), ctx).value().storage(),
              vanilla.forward(tape, tape.constant(x), ctx).value().storage());
  }
}

TEST(Forward, InferenceNeedsTrainedStatistics) {
  Model<float> m(convnet(NormType::split, "1/16"), 0);
  ForwardContext<float> ctx;
  ctx.mode = Mode::infer;
  Tape<float> tape;
  EXPECT_THROW(m.forward(tape, tape.constant(Tensor<float>({2, 3, 32, 32})), ctx), std::logic_error);
}

TEST(Forward, StateNamesRunningStatisticsPerPartition) {
  Model<float> m(convnet(NormType::split, "1/16"), 0);
  auto st = m.state();
  std::vector<std::string> names;
  for (auto& e : st) names.push_back(e.name);
  EXPECT_NE(std::find(names.begin(), names.end(), "conv1/bn/running_mean/unlabeled"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "conv9/bn/running_var/labeled"), names.end());
  EXPECT_EQ(st.size(), m.parameters().size() + 9 * 4);
  std::sort(names.begin(), names.end());
  EXPECT_EQ(std::adjacent_find(names.begin(), names.end()), names.end());
}

TEST(ModelGradient, ConvNetTinyWidthsMatchFiniteDifferences) {
  std::mt19937_64 gen(10);
  const auto x = images(4, gen);
  const auto part = alternating(4);
  for (NormType norm : {NormType::split, NormType::batch, NormType::none}) {
    Model<double> m(convnet(norm, "1/64"), 11);
    ForwardContext<double> ctx;
    ctx.partition = part;
    ctx.dropout_seed = 5;
    EXPECT_LT(model_gradient_error(m, x, ctx), 1e-4) << to_string(norm);
  }
}

TEST(ModelGradient, WideResNetTinyWidthsMatchFiniteDifferences) {
  std::mt19937_64 gen(12);
  const auto x = images(4, gen);
  const auto part = alternating(4);
  Model<double> m(wrn(10, 1, NormType::split, "1/8"), 13);
  ForwardContext<double> ctx;
  ctx.partition = part;
  EXPECT_LT(model_gradient_error(m, x, ctx), 1e-4);
}
