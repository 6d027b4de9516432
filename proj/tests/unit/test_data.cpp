#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <unistd.h>

#include "splitbn/data.hpp"
#include "splitbn/gemm.hpp"
#include "splitbn/synthetic.hpp"

using namespace splitbn;
namespace fs = std::filesystem;

namespace {

ImageDataset synthetic_dataset(std::size_t per_class, std::uint64_t seed, std::vector<int> classes = {}) {
  if (classes.empty()) classes = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<std::uint8_t> bytes(classes.size() * per_class * kCifarRecord);
  Rng rng(seed);
  std::size_t row = 0;
  for (std::size_t i = 0; i < per_class; ++i)
    for (int c : classes) {
      bytes[row * kCifarRecord] = static_cast<std::uint8_t>(c);
      synthetic_image(c, rng, bytes.data() + row * kCifarRecord + 1);
      ++row;
    }
  return parse_cifar_records(bytes, "synthetic");
}

std::vector<float> random_image(Rng& rng) {
  std::vector<float> img(kImageSize);
  for (auto& v : img) v = static_cast<float>(rng.uniform());
  return img;
}

class SyntheticDir : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / fmt_dir();
    SyntheticSpec spec;
    spec.train_per_class = 120;
    spec.test_per_class = 20;
    spec.train_files = 3;
    spec.seed = 42;
    write_synthetic_cifar(dir_, spec);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
  static std::string fmt_dir() { return "splitbn_data_test_" + std::to_string(::getpid()); }
  static fs::path dir_;
};

fs::path SyntheticDir::dir_;

}  // namespace

TEST(CifarFormat, RecordLayout) {
  std::vector<std::uint8_t> rec(kCifarRecord, 0);
  rec[0] = 6;
  rec[1] = 255;                // R at (0, 0)
  rec[1 + 1024 + 33] = 51;     // G at (1, 1)
  rec[1 + 2048 + 1023] = 128;  // B at (31, 31)
  auto d = parse_cifar_records(rec, "one");
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.labels[0], 6);
  EXPECT_EQ(d.images.shape(), (Shape{1, 3, 32, 32}));
  EXPECT_EQ(d.images.at({0, 0, 0, 0}), 1.0f);
  EXPECT_FLOAT_EQ(d.images.at({0, 1, 1, 1}), 0.2f);
  EXPECT_FLOAT_EQ(d.images.at({0, 2, 31, 31}), 128.0f / 255.0f);
  EXPECT_EQ(d.images.at({0, 0, 0, 1}), 0.0f);
}

TEST(CifarFormat, TruncatedFileReportsOffset) {
  std::vector<std::uint8_t> bytes(2 * kCifarRecord + 100, 0);
  try {
    parse_cifar_records(bytes, "batch");
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("offset 6146"), std::string::npos) << e.what();
  }
}

TEST(CifarFormat, BadLabelReportsOffset) {
  std::vector<std::uint8_t> bytes(3 * kCifarRecord, 0);
  bytes[kCifarRecord] = 10;
  try {
    parse_cifar_records(bytes, "batch");
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("offset 3073"), std::string::npos) << e.what();
  }
}

TEST_F(SyntheticDir, LoaderCarvesBalancedValidation) {
  ASSERT_TRUE(find_cifar_dir(dir_).has_value());
  auto splits = load_cifar10(dir_, 20, 3);
  EXPECT_EQ(splits.train.size() + splits.val.size(), 1200u);
  EXPECT_EQ(splits.val.size(), 200u);
  EXPECT_EQ(splits.test.size(), 200u);
  std::vector<int> per(10, 0);
  for (int l : splits.val.labels) per[static_cast<std::size_t>(l)]++;
  for (int c : per) EXPECT_EQ(c, 20);
  splits.train.validate();
  // Same seed, same carve.
  auto again = load_cifar10(dir_, 20, 3);
  EXPECT_EQ(again.val.labels, splits.val.labels);
  EXPECT_EQ(again.val.images.storage(), splits.val.images.storage());
  EXPECT_THROW(load_cifar10(dir_, 500, 3), std::runtime_error);
  EXPECT_THROW(load_cifar10(dir_ / "missing", 20, 3), std::runtime_error);
}

TEST(Preprocess, GcnOfConstantImageIsZero) {
  std::vector<float> img(kImageSize, 0.37f);
  gcn_image(img.data());
  for (float v : img) EXPECT_EQ(v, 0.0f);
  Rng rng(1);
  auto x = random_image(rng);
  gcn_image(x.data());
  double m = 0, s = 0;
  for (float v : x) m += v;
  m /= kImageSize;
  for (float v : x) s += (v - m) * (v - m);
  EXPECT_NEAR(m, 0.0, 1e-6);
  EXPECT_NEAR(s / kImageSize, 1.0, 1e-5);
}

TEST(Preprocess, ZcaStateMachine) {
  ZcaState unfitted;
  auto d = synthetic_dataset(2, 1);
  EXPECT_THROW(zca_apply(unfitted, d), std::logic_error);
  gcn(d);
  auto z = zca_fit(d, 1e-2);
  zca_apply(z, d);
  EXPECT_TRUE(d.whitened);
  EXPECT_THROW(zca_apply(z, d), std::logic_error);
  std::vector<ImageDataset*> none;
  EXPECT_THROW(gcn_zca_fit_apply(d, none), std::logic_error);
}

TEST(Preprocess, ZcaWhitensTheFitSet) {
  // More images than dimensions, so the fit covariance has full rank.
  auto d = synthetic_dataset(600, 2);
  ASSERT_EQ(d.size(), 6000u);
  auto test = synthetic_dataset(5, 3);
  std::vector<ImageDataset*> others{&test};
  const ZcaState z = gcn_zca_fit_apply(d, others, 1e-2);
  EXPECT_TRUE(test.whitened);
  const std::size_t n = z.dim, m = d.size();
  double asym = 0.0;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = r + 1; c < n; ++c) asym = std::max(asym, std::abs(z.whiten[r * n + c] - z.whiten[c * n + r]));
  EXPECT_LT(asym, 1e-8);

  std::vector<double> mean(n, 0.0), x(m * n), cov(n * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < n; ++k) mean[k] += d.image(i)[k];
  for (auto& v : mean) v /= static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < n; ++k) x[i * n + k] = d.image(i)[k] - mean[k];
  gemm(Trans::yes, Trans::no, n, n, m, 1.0 / static_cast<double>(m), x.data(), n, x.data(), n, 0.0, cov.data(), n);
  double worst = 0.0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      if (a != b) worst = std::max(worst, std::abs(cov[a * n + b]));
  EXPECT_LT(worst, 5e-2);
}

TEST(Preprocess, ZcaFitSubsample) {
  auto d = synthetic_dataset(3, 4);
  gcn(d);
  auto z = zca_fit(d, 1e-2, 10);
  auto first = d.subset(std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, "first");
  auto ref = zca_fit(first, 1e-2);
  EXPECT_EQ(z.mean, ref.mean);
  EXPECT_EQ(z.whiten, ref.whiten);
  EXPECT_THROW(zca_fit(d, 0.0), std::invalid_argument);
}

TEST(Split, MismatchSelectsOutOfPoolClasses) {
  auto base = synthetic_dataset(60, 4);
  CifarSplits splits{base, synthetic_dataset(3, 5), synthetic_dataset(3, 6)};
  const std::set<int> pool{2, 3, 4, 5, 6, 7};
  for (int p : {0, 25, 50, 75, 100}) {
    SplitPlan plan;
    plan.mismatch_percent = p;
    plan.labels_per_class = 20;
    plan.seed = 7;
    auto s = make_split(splits, plan);
    const int expected_out = static_cast<int>(std::lround(p / 100.0 * 4));
    int out = 0;
    for (int c : s.unlabeled_class_ids) out += pool.count(c) ? 0 : 1;
    EXPECT_EQ(out, expected_out) << p;
    EXPECT_EQ(s.unlabeled_class_ids.size(), 4u);
    std::size_t out_examples = 0;
    for (int c : s.unlabeled_source) out_examples += pool.count(c) ? 0 : 1;
    EXPECT_EQ(out_examples * 4, s.unlabeled.size() * static_cast<std::size_t>(expected_out)) << p;
    EXPECT_EQ(s.labeled.size(), 120u);
    for (int l : s.unlabeled.labels) EXPECT_EQ(l, -1);
    for (int l : s.labeled.labels) EXPECT_TRUE(l >= 0 && l < 6);
    EXPECT_EQ(s.labeled.class_names.size(), 6u);
    std::set<std::size_t> a(s.labeled_index.begin(), s.labeled_index.end());
    for (auto i : s.unlabeled_index) EXPECT_FALSE(a.count(i));
    EXPECT_EQ(a.size(), s.labeled_index.size());
  }
}

TEST(Split, DeterministicAndSeedSensitive) {
  auto base = synthetic_dataset(40, 8);
  CifarSplits splits{base, synthetic_dataset(2, 9), synthetic_dataset(2, 10)};
  SplitPlan plan;
  plan.mismatch_percent = 50;
  plan.labels_per_class = 10;
  plan.seed = 3;
  auto a = make_split(splits, plan), b = make_split(splits, plan);
  EXPECT_EQ(a.labeled_index, b.labeled_index);
  EXPECT_EQ(a.unlabeled_index, b.unlabeled_index);
  plan.seed = 4;
  EXPECT_NE(make_split(splits, plan).labeled_index, a.labeled_index);
}

TEST(Split, InsufficientExamplesRejectedWithCounts) {
  auto base = synthetic_dataset(10, 11);
  CifarSplits splits{base, synthetic_dataset(1, 12), synthetic_dataset(1, 13)};
  SplitPlan plan;
  plan.labels_per_class = 11;
  try {
    make_split(splits, plan);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("has 10 training examples, 11 labels"), std::string::npos) << e.what();
  }
  plan.labels_per_class = 5;
  plan.unlabeled_per_class = 9;
  EXPECT_THROW(make_split(splits, plan), std::invalid_argument);
  plan.unlabeled_per_class = 0;
  plan.mismatch_percent = 120;
  EXPECT_THROW(make_split(splits, plan), std::invalid_argument);
}

TEST(ClassGroups, ParseAndRegroup) {
  std::istringstream in("# merged\nvehicles: 0, 1, 8, 9\n\nanimals: 3,5  # cats and dogs\n");
  auto groups = parse_class_groups(in);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups[0].name, "vehicles");
  EXPECT_EQ(groups[0].members, (std::vector<int>{0, 1, 8, 9}));
  EXPECT_EQ(groups[1].members, (std::vector<int>{3, 5}));
  auto d = regroup(synthetic_dataset(2, 14), groups);
  EXPECT_EQ(d.size(), 12u);
  EXPECT_EQ(d.class_names, (std::vector<std::string>{"vehicles", "animals"}));
  for (int l : d.labels) EXPECT_TRUE(l == 0 || l == 1);

  for (const char* bad : {"novalue\n", "a: 1, x\n", ": 1\n", "a:\n", "a: 1\nb: 1\n"}) {
    std::istringstream s(bad);
    EXPECT_THROW(parse_class_groups(s), std::invalid_argument) << bad;
  }
}

TEST(Distortion, InvertValueAndInvolution) {
  std::vector<float> img(kImageSize, 0.3f);
  Rng rng(1);
  distort(img.data(), DistortionKind::invert, rng);
  EXPECT_NEAR(img[0], 0.7f, 1e-7);
  auto x = random_image(rng), y = x;
  distort(y.data(), DistortionKind::invert, rng);
  distort(y.data(), DistortionKind::invert, rng);
  for (std::size_t k = 0; k < kImageSize; ++k) EXPECT_NEAR(y[k], x[k], 6e-8);
}

TEST(Distortion, Rotate90Definition) {
  std::vector<float> img(kImageSize);
  for (std::size_t k = 0; k < kImageSize; ++k) img[k] = static_cast<float>(k) / kImageSize;
  auto rot = img;
  Rng rng(2);
  distort(rot.data(), DistortionKind::rotate90, rng);
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t c = 0; c < 32; ++c) EXPECT_EQ(rot[ch * 1024 + r * 32 + c], img[ch * 1024 + c * 32 + (31 - r)]);
  // The top-right corner moves to the top-left under a counterclockwise turn.
  EXPECT_EQ(rot[0], img[31]);
  for (int i = 0; i < 3; ++i) distort(rot.data(), DistortionKind::rotate90, rng);
  EXPECT_EQ(rot, img);
}

TEST(Distortion, GrayscaleIsIdempotentLuminance) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_image(rng);
    auto g = x;
    distort(g.data(), DistortionKind::grayscale, rng);
    EXPECT_NEAR(g[5], 0.299 * x[5] + 0.587 * x[1024 + 5] + 0.114 * x[2048 + 5], 1e-7);
    EXPECT_EQ(g[5], g[1024 + 5]);
    auto gg = g;
    distort(gg.data(), DistortionKind::grayscale, rng);
    EXPECT_EQ(gg, g);
  }
}

TEST(Distortion, OcclusionZeroesExactly196PixelsPerChannel) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> img(kImageSize, 0.5f);
    distort(img.data(), DistortionKind::occlusion, rng);
    for (std::size_t ch = 0; ch < 3; ++ch)
      EXPECT_EQ(std::count(img.begin() + ch * 1024, img.begin() + (ch + 1) * 1024, 0.0f), 196);
  }
}

TEST(Distortion, SaltPepperFractionsWithinThreeSigma) {
  Rng rng(5);
  const std::size_t images = 1'000'000 / 1024 + 1;
  std::size_t white = 0, black = 0, total = 0;
  for (std::size_t i = 0; i < images; ++i) {
    std::vector<float> img(kImageSize, 0.5f);
    distort(img.data(), DistortionKind::salt_pepper, rng);
    for (std::size_t k = 0; k < 1024; ++k) {
      white += img[k] == 1.0f;
      black += img[k] == 0.0f;
      EXPECT_TRUE(img[k] == img[1024 + k] && img[k] == img[2048 + k]);
    }
    total += 1024;
  }
  const double sigma = std::sqrt(0.1 * 0.9 / static_cast<double>(total));
  EXPECT_NEAR(static_cast<double>(white) / total, 0.1, 3 * sigma);
  EXPECT_NEAR(static_cast<double>(black) / total, 0.1, 3 * sigma);
}

TEST(Distortion, EveryKindStaysInUnitRange) {
  Rng rng(6);
  for (auto kind : {DistortionKind::none, DistortionKind::grayscale, DistortionKind::uniform_noise,
                    DistortionKind::salt_pepper, DistortionKind::invert, DistortionKind::rotate90,
                    DistortionKind::random_contrast, DistortionKind::occlusion}) {
    for (int trial = 0; trial < 20; ++trial) {
      auto x = random_image(rng);
      if (trial % 2) std::fill(x.begin(), x.begin() + 500, 1.0f);
      distort(x.data(), kind, rng);
      for (float v : x) ASSERT_TRUE(v >= 0.0f && v <= 1.0f) << to_string(kind);
    }
    EXPECT_EQ(parse_distortion(to_string(kind)), kind);
  }
  auto x = random_image(rng), y = x;
  distort(y.data(), DistortionKind::none, rng);
  EXPECT_EQ(x, y);
  EXPECT_THROW(parse_distortion("blur"), std::invalid_argument);
}

TEST(Distortion, UniformNoiseBoundedByRange) {
  Rng rng(7);
  std::vector<float> img(kImageSize, 0.5f);
  distort(img.data(), DistortionKind::uniform_noise, rng);
  for (float v : img) EXPECT_LE(std::abs(v - 0.5f), 0.2f + 1e-6f);
}

TEST(Distortion, RandomContrastKeepsChannelMeans) {
  Rng rng(8);
  std::vector<float> img(kImageSize);
  for (auto& v : img) v = static_cast<float>(rng.uniform(0.4, 0.6));
  auto out = img;
  distort(out.data(), DistortionKind::random_contrast, rng);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double a = 0, b = 0, sa = 0, sb = 0;
    for (std::size_t k = 0; k < 1024; ++k) a += img[ch * 1024 + k], b += out[ch * 1024 + k];
    EXPECT_NEAR(a / 1024, b / 1024, 1e-5);
    for (std::size_t k = 0; k < 1024; ++k)
      sa += std::abs(img[ch * 1024 + k] - a / 1024), sb += std::abs(out[ch * 1024 + k] - b / 1024);
    const double f = sb / sa;
    EXPECT_GE(f, 0.2 - 1e-4);
    EXPECT_LE(f, 0.8 + 1e-4);
  }
}

TEST(Augment, PolicyParsing) {
  auto p = AugmentPolicy::parse("flip, translate2,gaussian0.15");
  EXPECT_TRUE(p.flip);
  EXPECT_TRUE(p.translate);
  EXPECT_EQ(p.max_shift, 2);
  EXPECT_DOUBLE_EQ(p.gaussian_sigma, 0.15);
  EXPECT_EQ(AugmentPolicy::parse(p.str()).str(), p.str());
  EXPECT_TRUE(AugmentPolicy::parse("none").empty());
  EXPECT_TRUE(AugmentPolicy::parse("").empty());
  EXPECT_THROW(AugmentPolicy::parse("mixup"), std::invalid_argument);
  EXPECT_THROW(AugmentPolicy::parse("translatex"), std::invalid_argument);
}

TEST(Augment, IdentitiesAndEdgeReplication) {
  Rng rng(9);
  auto x = random_image(rng);
  auto y = x;
  augment(y.data(), AugmentPolicy{}, rng);
  EXPECT_EQ(x, y);
  translate(y.data(), 0, 0);
  EXPECT_EQ(x, y);
  flip_horizontal(y.data());
  EXPECT_NE(x, y);
  EXPECT_EQ(y[0], x[31]);
  flip_horizontal(y.data());
  EXPECT_EQ(x, y);

  translate(y.data(), 2, -1);
  for (std::size_t r = 0; r < 32; ++r)
    for (std::size_t c = 0; c < 32; ++c) {
      const std::size_t sr = r < 2 ? 0 : r - 2, sc = std::min<std::size_t>(c + 1, 31);
      EXPECT_EQ(y[r * 32 + c], x[sr * 32 + sc]);
    }
}

TEST(Augment, GaussianNoiseHasRequestedSpread) {
  Rng rng(10);
  std::vector<float> img(kImageSize, 0.0f);
  AugmentPolicy p;
  p.gaussian_sigma = 0.15;
  augment(img.data(), p, rng);
  double s = 0;
  for (float v : img) s += v * v;
  EXPECT_NEAR(std::sqrt(s / kImageSize), 0.15, 0.01);
}

TEST(Batches, EpochSamplerVisitsEveryIndexOncePerEpoch) {
  EpochSampler s(37, 1);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::vector<std::size_t> seen;
    for (int i = 0; i < 37; ++i) seen.push_back(s.next());
    std::sort(seen.begin(), seen.end());
    for (std::size_t i = 0; i < 37; ++i) EXPECT_EQ(seen[i], i);
  }
  EXPECT_EQ(s.epoch(), 2u);
}

TEST(Batches, CompositionAndPartitions) {
  auto labeled = synthetic_dataset(10, 15, {0, 1});
  auto unlabeled = synthetic_dataset(30, 16, {2, 3});
  for (auto& l : unlabeled.labels) l = -1;
  Preprocessor raw;
  BatchComposer c(labeled, &unlabeled, {50, 50}, DistortionKind::none, AugmentPolicy{}, raw, 3);
  auto b = c.next().batch;
  b.validate();
  EXPECT_EQ(b.count(Partition::labeled), 50u);
  EXPECT_EQ(b.count(Partition::unlabeled), 50u);
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(b.partition[i], Partition::labeled);

  BatchComposer pure(labeled, nullptr, {100, 0}, DistortionKind::none, AugmentPolicy{}, raw, 3);
  auto p = pure.next().batch;
  EXPECT_EQ(p.count(Partition::labeled), 100u);
  EXPECT_THROW(BatchComposer(labeled, &unlabeled, {1, 50}, DistortionKind::none, AugmentPolicy{}, raw, 3),
               std::invalid_argument);
  EXPECT_THROW(BatchComposer(labeled, &unlabeled, {50, 1}, DistortionKind::none, AugmentPolicy{}, raw, 3),
               std::invalid_argument);
  EXPECT_THROW(BatchComposer(labeled, nullptr, {50, 50}, DistortionKind::none, AugmentPolicy{}, raw, 3),
               std::invalid_argument);
}

TEST(Batches, EachLabeledExampleOncePerEpoch) {
  auto labeled = synthetic_dataset(10, 17, {0, 1, 2, 3});  // 40 images
  Preprocessor raw;
  BatchComposer c(labeled, nullptr, {10, 0}, DistortionKind::none, AugmentPolicy{}, raw, 5);
  std::multiset<std::vector<float>> seen;
  for (int i = 0; i < 4; ++i) {
    auto b = c.next().batch;
    for (std::size_t r = 0; r < 10; ++r)
      seen.insert(std::vector<float>(b.data.data() + r * kImageSize, b.data.data() + (r + 1) * kImageSize));
  }
  for (std::size_t i = 0; i < labeled.size(); ++i)
    EXPECT_EQ(seen.count(std::vector<float>(labeled.image(i), labeled.image(i) + kImageSize)), 1u);
}

TEST(Batches, DistortionReachesUnlabeledRowsOnly) {
  auto labeled = synthetic_dataset(2, 18, {0, 1});
  auto unlabeled = synthetic_dataset(2, 19, {2, 3});
  Preprocessor raw;
  BatchComposer none(labeled, &unlabeled, {4, 4}, DistortionKind::none, AugmentPolicy{}, raw, 7);
  BatchComposer inv(labeled, &unlabeled, {4, 4}, DistortionKind::invert, AugmentPolicy{}, raw, 7);
  auto a = none.next().batch, b = inv.next().batch;
  for (std::size_t k = 0; k < 4 * kImageSize; ++k) EXPECT_EQ(a.data[k], b.data[k]);
  for (std::size_t k = 4 * kImageSize; k < 8 * kImageSize; ++k) EXPECT_NEAR(b.data[k], 1.0f - a.data[k], 1e-7);
  // With no distortion the unlabeled rows are dataset images untouched.
  std::set<std::vector<float>> pool;
  for (std::size_t i = 0; i < unlabeled.size(); ++i)
    pool.insert(std::vector<float>(unlabeled.image(i), unlabeled.image(i) + kImageSize));
  for (std::size_t r = 4; r < 8; ++r)
    EXPECT_TRUE(pool.count(std::vector<float>(a.data.data() + r * kImageSize, a.data.data() + (r + 1) * kImageSize)));
}

TEST(Batches, SameSeedSameBatches) {
  auto labeled = synthetic_dataset(5, 20, {0, 1});
  auto unlabeled = synthetic_dataset(5, 21, {2, 3});
  Preprocessor raw;
  const auto policy = AugmentPolicy::parse("flip,translate2,gaussian0.15");
  BatchComposer a(labeled, &unlabeled, {4, 4}, DistortionKind::salt_pepper, policy, raw, 9, true);
  BatchComposer b(labeled, &unlabeled, {4, 4}, DistortionKind::salt_pepper, policy, raw, 9, true);
  for (int i = 0; i < 3; ++i) {
    auto x = a.next(), y = b.next();
    EXPECT_EQ(x.batch.data.storage(), y.batch.data.storage());
    ASSERT_TRUE(x.second_view.has_value());
    EXPECT_EQ(x.second_view->storage(), y.second_view->storage());
    EXPECT_NE(x.second_view->storage(), x.batch.data.storage());
  }
}
