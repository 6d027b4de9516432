#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splitbn/normalization.hpp"
#include "splitbn/rng.hpp"

namespace splitbn {

inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kSide = 32;
inline constexpr std::size_t kImageSize = kChannels * kSide * kSide;
inline constexpr std::size_t kCifarRecord = 1 + kImageSize;

/// Images are N x 3 x 32 x 32, channel planes in R, G, B order. Raw images hold
/// values in [0, 1]; labels are class indices, or -1 where stripped.
struct ImageDataset {
  Tensor<float> images;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  std::string split;
  bool whitened = false;

  std::size_t size() const { return labels.size(); }
  float* image(std::size_t i) { return images.data() + i * kImageSize; }
  const float* image(std::size_t i) const { return images.data() + i * kImageSize; }
  /// Throws when sizes disagree or a label is outside [-1, num_classes).
  void validate() const;
  /// Rows `idx` in order, same class names.
  ImageDataset subset(std::span<const std::size_t> idx, std::string split_name) const;
};

struct CifarSplits {
  ImageDataset train;
  ImageDataset val;
  ImageDataset test;
};

/// Parses concatenated CIFAR-10 binary records (1 label byte, then 1024 R,
/// 1024 G, 1024 B bytes). `source` names the input in error messages, which
/// carry the byte offset of the bad record.
ImageDataset parse_cifar_records(std::span<const std::uint8_t> bytes, const std::string& source);
ImageDataset read_cifar_file(const std::filesystem::path& file);

/// Reads data_batch_1..5.bin and test_batch.bin from `root` (or from
/// root/cifar-10-batches-bin) and carves `val_per_class` examples of every
/// class out of the training files, chosen by `seed`.
CifarSplits load_cifar10(const std::filesystem::path& root, std::size_t val_per_class, std::uint64_t seed);

/// Directory holding the binary batches under `root`, if any.
std::optional<std::filesystem::path> find_cifar_dir(const std::filesystem::path& root);

const std::vector<std::string>& cifar10_class_names();

// ---- preprocessing ------------------------------------------------------------

/// Per image: subtract its mean, divide by its standard deviation (floored at 1e-8).
void gcn_image(float* image, std::size_t n = kImageSize);
void gcn(ImageDataset& data);

struct ZcaState {
  std::vector<double> mean;     // per-pixel mean of the GCN'd fit set
  std::vector<double> whiten;   // row-major dim x dim, symmetric
  double regularizer = 1e-2;
  std::size_t dim = 0;
  bool fitted() const { return dim != 0; }
};

/// W = U (L + lambda I)^{-1/2} U^T from the covariance of `data` (already GCN'd).
/// `max_samples` > 0 fits on the first that many images.
ZcaState zca_fit(const ImageDataset& data, double regularizer = 1e-2, std::size_t max_samples = 0);
void zca_apply_image(const ZcaState& zca, float* image);
/// Whitens in place and flags the dataset; whitening twice is rejected.
void zca_apply(const ZcaState& zca, ImageDataset& data);

enum class Preprocessing { raw, gcn_zca };
Preprocessing parse_preprocessing(const std::string& s);
const char* to_string(Preprocessing p);

/// GCN then ZCA with the state fitted on the training images, or nothing for raw.
struct Preprocessor {
  Preprocessing mode = Preprocessing::raw;
  ZcaState zca;

  void apply_image(float* image) const;
  void apply(ImageDataset& data) const;
};

/// GCN + ZCA fitted on `train` (or its first `max_samples`), applied to `train` and every entry of `others`.
ZcaState gcn_zca_fit_apply(ImageDataset& train, std::span<ImageDataset* const> others, double regularizer = 1e-2,
                           std::size_t max_samples = 0);

// ---- labeled / unlabeled split ----------------------------------------------

struct SplitPlan {
  /// Classes to learn; labels are renumbered 0..k-1 in this order.
  std::vector<int> supervised_classes{2, 3, 4, 5, 6, 7};
  /// Candidates for out-of-pool unlabeled classes; empty means every other class.
  std::vector<int> outside_classes{};
  int unlabeled_classes = 4;
  int mismatch_percent = 0;
  std::size_t labels_per_class = 400;
  /// Cap per unlabeled class; 0 takes the largest balanced amount.
  std::size_t unlabeled_per_class = 0;
  std::uint64_t seed = 0;

  /// round(mismatch_percent / 100 * unlabeled_classes)
  int outside_count() const;
  void validate() const;
};

struct SplitResult {
  ImageDataset labeled;
  ImageDataset unlabeled;  // labels stripped to -1
  ImageDataset val;
  ImageDataset test;
  std::vector<int> unlabeled_class_ids;  // original class ids drawn from
  std::vector<int> unlabeled_source;     // original class of each unlabeled example
  std::vector<std::size_t> labeled_index;    // rows of the train split
  std::vector<std::size_t> unlabeled_index;  // rows of the train split
};

SplitResult make_split(const CifarSplits& data, const SplitPlan& plan);

// ---- class grouping -----------------------------------------------------------

struct ClassGroup {
  std::string name;
  std::vector<int> members;
};

/// One group per non-empty line, `name: id, id, ...`; '#' starts a comment.
std::vector<ClassGroup> parse_class_groups(std::istream& in);
/// Relabels to group indices and drops examples of classes outside every group.
ImageDataset regroup(const ImageDataset& data, const std::vector<ClassGroup>& groups);

// ---- distortions --------------------------------------------------------------

enum class DistortionKind { none, grayscale, uniform_noise, salt_pepper, invert, rotate90, random_contrast, occlusion };
DistortionKind parse_distortion(const std::string& s);
const char* to_string(DistortionKind k);

/// Distorts one 3 x side x side image with values in [0, 1]; the result stays in [0, 1].
void distort(float* image, DistortionKind kind, Rng& rng, std::size_t side = kSide);

// ---- augmentation -------------------------------------------------------------

struct AugmentPolicy {
  bool flip = false;
  bool translate = false;
  int max_shift = 2;
  double gaussian_sigma = 0.0;

  /// Comma list of "flip", "translate<k>", "gaussian<sigma>"; "none" or "" is empty.
  static AugmentPolicy parse(const std::string& text);
  std::string str() const;
  bool empty() const { return !flip && !translate && gaussian_sigma == 0.0; }
};

void flip_horizontal(float* image, std::size_t side = kSide);
/// Shifts content by (dy, dx); vacated pixels replicate the nearest edge.
void translate(float* image, int dy, int dx, std::size_t side = kSide);
void augment(float* image, const AugmentPolicy& policy, Rng& rng, std::size_t side = kSide);

// ---- batch composition --------------------------------------------------------

/// Without-replacement draws, reshuffled at every epoch boundary.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::uint64_t seed);
  std::size_t next();
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  void shuffle();
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
  Rng rng_;
};

struct BatchSizes {
  std::size_t labeled = 50;
  std::size_t unlabeled = 50;
};

struct ComposedBatch {
  PartitionedBatch<float> batch;
  /// Second independently augmented view of the same examples (for a teacher), if requested.
  std::optional<Tensor<float>> second_view;
};

/// Builds partitioned batches: labeled rows first, then unlabeled. Unlabeled
/// rows are distorted on raw pixels; all rows are then preprocessed and augmented.
class BatchComposer {
 public:
  BatchComposer(const ImageDataset& labeled, const ImageDataset* unlabeled, BatchSizes sizes,
                DistortionKind distortion, AugmentPolicy policy, const Preprocessor& pre, std::uint64_t seed,
                bool second_view = false);

  ComposedBatch next();
  const EpochSampler& labeled_sampler() const { return labeled_sampler_; }

 private:
  const ImageDataset& labeled_;
  const ImageDataset* unlabeled_;
  ImageDataset labeled_ready_;
  std::optional<ImageDataset> unlabeled_ready_;
  BatchSizes sizes_;
  DistortionKind distortion_;
  AugmentPolicy policy_;
  const Preprocessor& pre_;
  bool second_view_;
  EpochSampler labeled_sampler_;
  std::optional<EpochSampler> unlabeled_sampler_;
  Rng rng_;
};

}  // namespace splitbn
