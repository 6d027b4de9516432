#include <benchmark/benchmark.h>
#include <fmt/format.h>

#include <random>

#include "splitbn/data.hpp"
#include "splitbn/gemm.hpp"
#include "splitbn/models.hpp"
#include "splitbn/ops.hpp"
#include "splitbn/runtime.hpp"
#include "splitbn/ssl.hpp"

using namespace splitbn;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<float> d;
  Tensor<float> t(std::move(shape));
  for (auto& v : t.storage()) v = d(gen);
  return t;
}

PartitionedBatch<float> batch_of(std::size_t labeled, std::size_t unlabeled) {
  PartitionedBatch<float> b;
  b.data = random_tensor({labeled + unlabeled, 3, 32, 32}, 1);
  b.partition.assign(labeled, Partition::labeled);
  b.partition.insert(b.partition.end(), unlabeled, Partition::unlabeled);
  for (std::size_t i = 0; i < labeled; ++i) b.labels.push_back(static_cast<int>(i % 10));
  b.labels.resize(labeled + unlabeled, -1);
  return b;
}

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  Tensor<float> c({n, n});
  for (auto _ : state) {
    gemm(Trans::no, Trans::no, n, n, n, 1.0f, a.data(), n, b.data(), n, 0.0f, c.data(), n);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * static_cast<double>(n * n * n), benchmark::Counter::kIsIterationInvariantRate,
                         benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Gemm)->Arg(128)->Arg(512);

void BM_Conv3x3(benchmark::State& state) {
  const auto ch = static_cast<std::size_t>(state.range(0));
  auto x = random_tensor({100, ch, 32, 32}, 1), k = random_tensor({ch, ch, 3, 3}, 2);
  for (auto _ : state) {
    Tape<float> tape;
    auto xv = tape.variable(x), kv = tape.variable(k);
    auto y = conv2d(xv, kv, Padding::same);
    tape.backward(sum(y));
    benchmark::DoNotOptimize(tape.grad(kv).data());
  }
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_Normalization(benchmark::State& state) {
  const bool split = state.range(0) != 0;
  auto x = random_tensor({100, 32, 32, 32}, 3);
  NormalizationState<float> ns("bn", 32, split ? NormKind::split : NormKind::batch);
  std::vector<Partition> part(50, Partition::labeled);
  part.insert(part.end(), 50, Partition::unlabeled);
  for (auto _ : state) {
    Tape<float> tape;
    auto xv = tape.variable(x);
    auto y = split ? splitbn_train(xv, std::span<const Partition>(part), ns) : bn_train(xv, ns);
    tape.backward(sum(y));
    benchmark::DoNotOptimize(tape.grad(xv).data());
  }
  state.SetLabel(split ? "split" : "vanilla");
}
BENCHMARK(BM_Normalization)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  ArchitectureSpec spec;
  spec.family = Family::convnet13;
  const auto unlabeled = static_cast<std::size_t>(state.range(1));
  spec.norm = unlabeled > 0 ? NormType::split : NormType::batch;
  spec.width_scale = Rational::parse(state.range(0) == 4 ? "1/4" : "1/8");
  Model<float> model(spec, 1);
  const auto b = batch_of(50, unlabeled);
  SslConfig cfg;
  cfg.method = SslMethod::supervised;
  std::int64_t step = 0;
  for (auto _ : state) {
    model.zero_grad();
    Tape<float> tape;
    auto loss = total_loss(tape, model, static_cast<Model<float>*>(nullptr), b, cfg, step++, StepSeeds{});
    tape.backward(loss.total);
  }
  state.SetLabel(fmt::format("{} {}+{}", spec.width_scale.str(), 50, unlabeled));
}
BENCHMARK(BM_TrainStep)->Args({8, 50})->Args({4, 50})->Args({4, 0})->Unit(benchmark::kMillisecond);

void BM_Distort(benchmark::State& state) {
  const auto kind = static_cast<DistortionKind>(state.range(0));
  std::vector<float> image(kImageSize, 0.5f);
  Rng rng(1);
  for (auto _ : state) {
    distort(image.data(), kind, rng);
    benchmark::DoNotOptimize(image.data());
  }
  state.SetLabel(to_string(kind));
}
BENCHMARK(BM_Distort)->DenseRange(1, 7);

}  // namespace

int main(int argc, char** argv) {
  splitbn::configure_process(argv);
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
