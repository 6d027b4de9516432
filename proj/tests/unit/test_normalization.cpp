#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "splitbn/normalization.hpp"

using namespace splitbn;
using splitbn::testing::op_gradient_error;
using splitbn::testing::random_tensor;

namespace {

using L = Partition;

// Per-channel mean and biased variance of the rows selected by `mask`.
std::pair<std::vector<double>, std::vector<double>> channel_moments(const Tensor<double>& y,
                                                                    const std::vector<Partition>& part, Partition which) {
  const std::size_t n = y.dim(0), c = y.dim(1), s = y.numel() / (n * c);
  std::vector<double> m(c, 0), v(c, 0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (part[i] != which) continue;
    ++count;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < s; ++k) m[ch] += y[(i * c + ch) * s + k];
  }
  for (auto& x : m) x /= static_cast<double>(count * s);
  for (std::size_t i = 0; i < n; ++i) {
    if (part[i] != which) continue;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < s; ++k) {
        const double d = y[(i * c + ch) * s + k] - m[ch];
        v[ch] += d * d;
      }
  }
  for (auto& x : v) x /= static_cast<double>(count * s);
  return {m, v};
}

// Rows whose partition is unlabeled are drawn from N(shift, scale^2), labeled from N(0, 1).
Tensor<double> shifted_batch(const std::vector<Partition>& part, std::size_t c, std::size_t hw, double shift,
                             double scale, std::mt19937_64& gen) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor<double> x({part.size(), c, hw, hw});
  const std::size_t per = c * hw * hw;
  for (std::size_t i = 0; i < part.size(); ++i)
    for (std::size_t k = 0; k < per; ++k) {
      const double z = nd(gen);
      x[i * per + k] = part[i] == L::unlabeled ? shift + scale * z : z;
    }
  return x;
}

}  // namespace

TEST(BatchNorm, ConstantBatchMapsToZero) {
  NormalizationState<double> st("bn", 1, NormKind::batch);
  Tape<double> tape;
  auto y = bn_train(tape.constant(Tensor<double>({4, 1}, 3.5)), st);
  for (double v : y.value().storage()) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, HandEvaluatedStandardization) {
  NormalizationState<double> st("bn", 1, NormKind::batch, 0.1, 0.0);
  Tape<double> tape;
  auto y = bn_train(tape.constant(Tensor<double>({4, 1}, {1, 2, 3, 4})), st);
  // mean 2.5, biased variance 1.25
  const std::vector<double> expected{-1.3416407864998738, -0.4472135954999579, 0.4472135954999579,
                                     1.3416407864998738};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.value()[i], expected[i], 1e-12);
}

TEST(BatchNorm, AffineIsTransparentOnStandardizedInput) {
  NormalizationState<double> st("bn", 1, NormKind::batch, 0.1, 0.0);
  st.alpha.value.fill(2.0);
  st.beta.value.fill(5.0);
  // Already zero mean / unit biased variance.
  Tensor<double> x({4, 1}, {-1.3416407864998738, -0.4472135954999579, 0.4472135954999579, 1.3416407864998738});
  Tape<double> tape;
  auto y = bn_train(tape.constant(x), st);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.value()[i], 2 * x[i] + 5, 1e-12);
}

TEST(BatchNorm, SingleExampleRejected) {
  NormalizationState<double> st("layer7", 2, NormKind::batch);
  Tape<double> tape;
  EXPECT_THROW(bn_train(tape.constant(Tensor<double>({1, 2}, 1.0)), st), std::invalid_argument);
}

TEST(BatchNorm, RunningStatisticsFollowMomentumRule) {
  NormalizationState<double> st("bn", 2, NormKind::batch, 0.1, 1e-5);
  Tensor<double> x({2, 2}, {1.0, 10.0, 3.0, 14.0});
  Tape<double> tape;
  bn_train(tape.constant(x), st);
  EXPECT_NEAR(st.running[0].mean[0], 0.1 * 2.0, 1e-15);
  EXPECT_NEAR(st.running[0].mean[1], 0.1 * 12.0, 1e-15);
  EXPECT_NEAR(st.running[0].var[0], 0.9 + 0.1 * 1.0, 1e-15);
  EXPECT_NEAR(st.running[0].var[1], 0.9 + 0.1 * 4.0, 1e-15);
  EXPECT_TRUE(st.running[0].updated);
}

TEST(BatchNorm, SuppressedUpdateLeavesStatisticsAlone) {
  NormalizationState<double> st("bn", 1, NormKind::batch);
  Tape<double> tape;
  bn_train(tape.constant(Tensor<double>({3, 1}, {1, 2, 4})), st, StatsUpdate::suppress);
  EXPECT_FALSE(st.running[0].updated);
  EXPECT_EQ(st.running[0].mean[0], 0.0);
  EXPECT_EQ(st.running[0].var[0], 1.0);
}

TEST(SplitBatchNorm, ConstantPartitionsEachCenterOnTheirOwnMean) {
  NormalizationState<double> st("sbn", 1, NormKind::split);
  std::vector<Partition> part{L::labeled, L::unlabeled, L::labeled, L::unlabeled};
  Tensor<double> x({4, 1}, {5, -3, 5, -3});
  Tape<double> tape;
  auto y = splitbn_train(tape.constant(x), part, st);
  for (double v : y.value().storage()) EXPECT_EQ(v, 0.0);
}

TEST(SplitBatchNorm, HandEvaluatedPerPartition) {
  NormalizationState<double> st("sbn", 1, NormKind::split, 0.1, 0.0);
  std::vector<Partition> part{L::labeled, L::labeled, L::unlabeled, L::unlabeled};
  Tape<double> tape;
  auto y = splitbn_train(tape.constant(Tensor<double>({4, 1}, {0, 2, 10, 30})), part, st);
  const std::vector<double> expected{-1, 1, -1, 1};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.value()[i], expected[i], 1e-15);
}

TEST(SplitBatchNorm, IdenticalPartitionsMatchVanilla) {
  std::mt19937_64 gen(3);
  Tensor<double> half = random_tensor({5, 3, 2, 2}, gen);
  Tensor<double> both({10, 3, 2, 2});
  std::copy(half.storage().begin(), half.storage().end(), both.storage().begin());
  std::copy(half.storage().begin(), half.storage().end(), both.storage().begin() + half.numel());
  std::vector<Partition> part(10, L::labeled);
  for (std::size_t i = 5; i < 10; ++i) part[i] = L::unlabeled;

  NormalizationState<double> split("s", 3, NormKind::split);
  NormalizationState<double> vanilla("v", 3, NormKind::batch);
  Tape<double> tape;
  const Tensor<double>& ys = splitbn_train(tape.constant(both), part, split).value();
  const Tensor<double>& yv = bn_train(tape.constant(half), vanilla).value();
  for (std::size_t i = 0; i < half.numel(); ++i) {
    EXPECT_NEAR(ys[i], yv[i], 1e-12);
    EXPECT_NEAR(ys[half.numel() + i], yv[i], 1e-12);
  }
}

TEST(SplitBatchNorm, SingletonPartitionRejected) {
  NormalizationState<double> st("block2/bn1", 1, NormKind::split);
  std::vector<Partition> part{L::labeled, L::labeled, L::unlabeled};
  Tape<double> tape;
  try {
    splitbn_train(tape.constant(Tensor<double>({3, 1}, {1, 2, 3})), part, st);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("unlabeled"), std::string::npos);
  }
}

TEST(SplitBatchNorm, AbsentPartitionDegradesToVanillaAndKeepsItsStatistics) {
  std::mt19937_64 gen(4);
  Tensor<double> x = random_tensor({6, 2, 3, 3}, gen);
  std::vector<Partition> part(6, L::labeled);
  NormalizationState<double> split("s", 2, NormKind::split);
  NormalizationState<double> vanilla("v", 2, NormKind::batch);
  Tape<double> tape;
  const Tensor<double>& ys = splitbn_train(tape.constant(x), part, split).value();
  const Tensor<double>& yv = bn_train(tape.constant(x), vanilla).value();
  EXPECT_EQ(ys.storage(), yv.storage());
  EXPECT_TRUE(split.stats_for(L::labeled).updated);
  EXPECT_FALSE(split.stats_for(L::unlabeled).updated);
  EXPECT_EQ(split.stats_for(L::unlabeled).mean.storage(), std::vector<double>(2, 0.0));
  EXPECT_EQ(split.stats_for(L::unlabeled).var.storage(), std::vector<double>(2, 1.0));
  EXPECT_EQ(split.stats_for(L::labeled).mean.storage(), vanilla.running[0].mean.storage());
}

TEST(SplitBatchNorm, PartitionsUpdateIndependently) {
  std::mt19937_64 gen(5);
  std::vector<Partition> part{L::labeled, L::unlabeled, L::labeled, L::unlabeled, L::unlabeled};
  Tensor<double> x = shifted_batch(part, 2, 2, 4.0, 3.0, gen);
  NormalizationState<double> st("s", 2, NormKind::split, 0.5, 1e-5);
  Tape<double> tape;
  splitbn_train(tape.constant(x), part, st);
  auto [ml, vl] = channel_moments(x, part, L::labeled);
  auto [mu, vu] = channel_moments(x, part, L::unlabeled);
  for (std::size_t ch = 0; ch < 2; ++ch) {
    EXPECT_NEAR(st.stats_for(L::labeled).mean[ch], 0.5 * ml[ch], 1e-12);
    EXPECT_NEAR(st.stats_for(L::labeled).var[ch], 0.5 + 0.5 * vl[ch], 1e-12);
    EXPECT_NEAR(st.stats_for(L::unlabeled).mean[ch], 0.5 * mu[ch], 1e-12);
    EXPECT_NEAR(st.stats_for(L::unlabeled).var[ch], 0.5 + 0.5 * vu[ch], 1e-12);
  }
}

TEST(SplitBatchNorm, ChannelOrderDoesNotMatter) {
  std::mt19937_64 gen(6);
  std::vector<Partition> part{L::labeled, L::labeled, L::unlabeled, L::unlabeled};
  Tensor<double> x = random_tensor({4, 3}, gen);
  Tensor<double> swapped(x.shape());
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t ch = 0; ch < 3; ++ch) swapped[i * 3 + ch] = x[i * 3 + (2 - ch)];
  NormalizationState<double> a("a", 3, NormKind::split), b("b", 3, NormKind::split);
  Tape<double> tape;
  splitbn_train(tape.constant(x), part, a);
  splitbn_train(tape.constant(swapped), part, b);
  for (auto p : {L::labeled, L::unlabeled})
    for (std::size_t ch = 0; ch < 3; ++ch) {
      EXPECT_EQ(a.stats_for(p).mean[ch], b.stats_for(p).mean[2 - ch]);
      EXPECT_EQ(a.stats_for(p).var[ch], b.stats_for(p).var[2 - ch]);
    }
}

TEST(SplitBatchNorm, SingleSharedAffinePair) {
  NormalizationState<double> st("s", 7, NormKind::split);
  EXPECT_EQ(st.running.size(), 2u);
  EXPECT_EQ(st.alpha.value.shape(), (Shape{7}));
  EXPECT_EQ(st.beta.value.shape(), (Shape{7}));
  // Both partitions' outputs respond to the same alpha.
  st.alpha.value.fill(3.0);
  std::vector<Partition> part{L::labeled, L::labeled, L::unlabeled, L::unlabeled};
  Tape<double> tape;
  Tensor<double> x({4, 7});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<double>((i * 37) % 11);
  NormalizationState<double> ref("r", 7, NormKind::split);
  const Tensor<double>& y3 = splitbn_train(tape.constant(x), part, st).value();
  const Tensor<double>& y1 = splitbn_train(tape.constant(x), part, ref).value();
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y3[i], 3.0 * y1[i], 1e-12);
}

TEST(SplitBatchNorm, PerPartitionMomentsAreStandardized) {
  std::mt19937_64 gen(21);
  std::uniform_int_distribution<int> sizes(8, 20);
  std::uniform_real_distribution<double> shifts(-6.0, 6.0);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t nl = static_cast<std::size_t>(sizes(gen)), nu = static_cast<std::size_t>(sizes(gen));
    std::vector<Partition> part(nl, L::labeled);
    part.insert(part.end(), nu, L::unlabeled);
    std::shuffle(part.begin(), part.end(), gen);
    const double shift = shifts(gen);
    Tensor<double> x = shifted_batch(part, 3, 2, shift, 2.0, gen);
    NormalizationState<double> st("s", 3, NormKind::split);
    Tape<double> tape;
    const Tensor<double>& y = splitbn_train(tape.constant(x), part, st).value();
    for (auto p : {L::labeled, L::unlabeled}) {
      auto [m, v] = channel_moments(y, part, p);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        EXPECT_LT(std::abs(m[ch]), 1e-5);
        EXPECT_NEAR(v[ch], 1.0, 1e-3);
      }
    }
  }
}

TEST(SplitBatchNorm, VanillaLeavesShiftedHalfOffCenter) {
  std::mt19937_64 gen(22);
  std::vector<Partition> part(16, L::labeled);
  for (std::size_t i = 8; i < 16; ++i) part[i] = L::unlabeled;
  Tensor<double> x = shifted_batch(part, 2, 3, 1.5, 1.0, gen);
  NormalizationState<double> vanilla("v", 2, NormKind::batch);
  NormalizationState<double> split("s", 2, NormKind::split);
  Tape<double> tape;
  const Tensor<double>& yv = bn_train(tape.constant(x), vanilla).value();
  const Tensor<double>& ys = splitbn_train(tape.constant(x), part, split).value();
  auto [mvl, vvl] = channel_moments(yv, part, L::labeled);
  auto [mvu, vvu] = channel_moments(yv, part, L::unlabeled);
  for (std::size_t ch = 0; ch < 2; ++ch) EXPECT_GT(std::max(std::abs(mvl[ch]), std::abs(mvu[ch])), 0.1);
  for (auto p : {L::labeled, L::unlabeled}) {
    auto [m, v] = channel_moments(ys, part, p);
    for (std::size_t ch = 0; ch < 2; ++ch) EXPECT_LT(std::abs(m[ch]), 1e-5);
  }
}

TEST(SplitBatchNorm, GradientsMatchFiniteDifferences) {
  std::mt19937_64 gen(31);
  const std::vector<Partition> mixed{L::labeled, L::unlabeled, L::labeled, L::unlabeled, L::labeled};
  const std::vector<Partition> labeled_only(4, L::labeled);
  for (const auto* part : {&mixed, &labeled_only}) {
    const double err = op_gradient_error(
        {random_tensor({part->size(), 3, 2, 2}, gen), random_tensor({3}, gen, 0.5, 2.0), random_tensor({3}, gen)},
        [part](Tape<double>&, const std::vector<Var<double>>& v) {
          NormalizationState<double> st("s", 3, NormKind::split);
          return splitbn_train(v[0], *part, v[1], v[2], st);
        });
    EXPECT_LT(err, 1e-4);
  }
  const double vanilla = op_gradient_error(
      {random_tensor({5, 3}, gen), random_tensor({3}, gen, 0.5, 2.0), random_tensor({3}, gen)},
      [](Tape<double>&, const std::vector<Var<double>>& v) {
        NormalizationState<double> st("b", 3, NormKind::batch);
        return bn_train(v[0], v[1], v[2], st);
      });
  EXPECT_LT(vanilla, 1e-4);
}

TEST(BatchNormInfer, IdentityStatisticsPassInputThrough) {
  NormalizationState<double> st("bn", 2, NormKind::batch);
  st.running[0].updated = true;
  std::mt19937_64 gen(1);
  Tensor<double> x = random_tensor({3, 2, 2, 2}, gen);
  Tape<double> tape;
  const Tensor<double>& y = bn_infer(tape.constant(x), st, L::labeled).value();
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y[i], x[i], 1e-5);
}

TEST(BatchNormInfer, LabeledStatisticsCenterByTrainingMean) {
  // Constant labeled batches of mean m: after k updates running mean = m (1 - (1 - momentum)^k).
  constexpr double m = 2.5;
  constexpr int steps = 200;
  NormalizationState<double> st("s", 1, NormKind::split);
  std::vector<Partition> part(4, L::labeled);
  for (int k = 0; k < steps; ++k) {
    Tape<double> tape;
    splitbn_train(tape.constant(Tensor<double>({4, 1}, {m - 1, m + 1, m - 1, m + 1})), part, st);
  }
  const double closed = m * (1.0 - std::pow(0.9, steps));
  EXPECT_NEAR(st.stats_for(L::labeled).mean[0], closed, 1e-12);
  Tape<double> tape;
  st.stats_for(L::unlabeled).updated = true;
  const Tensor<double>& y = bn_infer(tape.constant(Tensor<double>({2, 1}, {m, m + 3})), st, L::labeled).value();
  const double var = st.stats_for(L::labeled).var[0];
  EXPECT_NEAR(y[0], (m - closed) / std::sqrt(var + 1e-5), 1e-12);
  EXPECT_NEAR(y[1], (m + 3 - closed) / std::sqrt(var + 1e-5), 1e-12);
  const Tensor<double>& yu = bn_infer(tape.constant(Tensor<double>({2, 1}, {m, m + 3})), st, L::unlabeled).value();
  EXPECT_NEAR(yu[0], m / std::sqrt(1.0 + 1e-5), 1e-12);
}

TEST(BatchNormInfer, VanillaIgnoresPartitionChoice) {
  NormalizationState<double> st("bn", 2, NormKind::batch);
  std::mt19937_64 gen(2);
  Tape<double> tape;
  bn_train(tape.constant(random_tensor({6, 2}, gen)), st);
  Tensor<double> x = random_tensor({3, 2}, gen);
  EXPECT_EQ(bn_infer(tape.constant(x), st, L::labeled).value().storage(),
            bn_infer(tape.constant(x), st, L::unlabeled).value().storage());
}

TEST(BatchNormInfer, NeverUpdatedStatisticsRejectedWithLayerName) {
  NormalizationState<double> st("group3/block1/bn2", 2, NormKind::split);
  Tape<double> tape;
  try {
    bn_infer(tape.constant(Tensor<double>({2, 2})), st, L::labeled);
    FAIL();
  } catch (const std::logic_error& e) {
    EXPECT_NE(std::string(e.what()).find("group3/block1/bn2"), std::string::npos);
  }
}

TEST(BatchNormInfer, GradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(33);
  NormalizationState<double> st("s", 3, NormKind::split);
  Tape<double> warm;
  std::vector<Partition> part{L::labeled, L::labeled, L::unlabeled, L::unlabeled};
  splitbn_train(warm.constant(random_tensor({4, 3}, gen)), part, st);
  const double err = op_gradient_error(
      {random_tensor({3, 3, 2, 2}, gen), random_tensor({3}, gen), random_tensor({3}, gen)},
      [&st](Tape<double>&, const std::vector<Var<double>>& v) { return bn_infer(v[0], v[1], v[2], st, L::unlabeled); });
  EXPECT_LT(err, 1e-6);
}

TEST(PartitionedBatchTest, ValidationCatchesInconsistencies) {
  PartitionedBatch<double> b{Tensor<double>({3, 1}), {L::labeled, L::unlabeled, L::labeled}, {1, -1, 0}};
  EXPECT_NO_THROW(b.validate());
  EXPECT_EQ(b.count(L::labeled), 2u);
  b.labels[1] = 4;
  EXPECT_THROW(b.validate(), std::invalid_argument);
  b.labels[1] = -1;
  b.labels[0] = -1;
  EXPECT_THROW(b.validate(), std::invalid_argument);
  b.partition.pop_back();
  EXPECT_THROW(b.validate(), ShapeError);
}
