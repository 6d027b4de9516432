#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>
#include <stdexcept>

#include "splitbn/data.hpp"

namespace splitbn {

const std::vector<std::string>& cifar10_class_names() {
  static const std::vector<std::string> names{"airplane", "automobile", "bird",  "cat",  "deer",
                                              "dog",      "frog",       "horse", "ship", "truck"};
  return names;
}

void ImageDataset::validate() const {
  if (images.rank() != 4 || images.dim(0) != labels.size() || images.dim(1) != kChannels || images.dim(2) != kSide ||
      images.dim(3) != kSide)
    throw ShapeError(fmt::format("dataset '{}': images {} with {} labels", split, shape_string(images.shape()),
                                 labels.size()));
  const int k = static_cast<int>(class_names.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < -1 || labels[i] >= k)
      throw std::invalid_argument(fmt::format("dataset '{}': label {} at row {} outside [-1, {})", split, labels[i], i, k));
}

ImageDataset ImageDataset::subset(std::span<const std::size_t> idx, std::string split_name) const {
  ImageDataset out;
  out.class_names = class_names;
  out.split = std::move(split_name);
  out.whitened = whitened;
  if (idx.empty()) {
    out.images = Tensor<float>();
    return out;
  }
  out.images = Tensor<float>({idx.size(), kChannels, kSide, kSide});
  out.labels.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= size()) throw std::out_of_range(fmt::format("subset row {} of {}", idx[i], size()));
    std::copy_n(image(idx[i]), kImageSize, out.image(i));
    out.labels.push_back(labels[idx[i]]);
  }
  return out;
}

ImageDataset parse_cifar_records(std::span<const std::uint8_t> bytes, const std::string& source) {
  if (bytes.size() % kCifarRecord != 0) {
    const std::size_t complete = bytes.size() / kCifarRecord;
    throw std::runtime_error(fmt::format("{}: truncated record at byte offset {} ({} bytes, records are {} bytes)",
                                         source, complete * kCifarRecord, bytes.size(), kCifarRecord));
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  ImageDataset out;
  out.class_names = cifar10_class_names();
  out.split = source;
  if (n == 0) return out;
  out.images = Tensor<float>({n, kChannels, kSide, kSide});
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kCifarRecord;
    if (rec[0] > 9)
      throw std::runtime_error(
          fmt::format("{}: label byte {} > 9 at byte offset {}", source, static_cast<int>(rec[0]), i * kCifarRecord));
    out.labels[i] = rec[0];
    float* img = out.image(i);
    for (std::size_t k = 0; k < kImageSize; ++k) img[k] = static_cast<float>(rec[1 + k]) / 255.0f;
  }
  return out;
}

ImageDataset read_cifar_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", file.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_cifar_records(bytes, file.string());
}

std::optional<std::filesystem::path> find_cifar_dir(const std::filesystem::path& root) {
  for (const auto& dir : {root, root / "cifar-10-batches-bin"})
    if (std::filesystem::exists(dir / "data_batch_1.bin") && std::filesystem::exists(dir / "test_batch.bin")) return dir;
  return std::nullopt;
}

namespace {

ImageDataset concat(std::vector<ImageDataset>& parts, std::string split) {
  std::size_t n = 0;
  for (auto& p : parts) n += p.size();
  ImageDataset out;
  out.class_names = cifar10_class_names();
  out.split = std::move(split);
  out.images = Tensor<float>({n, kChannels, kSide, kSide});
  std::size_t row = 0;
  for (auto& p : parts) {
    if (p.size() == 0) continue;
    std::copy(p.images.storage().begin(), p.images.storage().end(), out.image(row));
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    row += p.size();
  }
  return out;
}

}  // namespace

CifarSplits load_cifar10(const std::filesystem::path& root, std::size_t val_per_class, std::uint64_t seed) {
  const auto dir = find_cifar_dir(root);
  if (!dir) throw std::runtime_error(fmt::format("no CIFAR-10 binary batches under {}", root.string()));
  std::vector<ImageDataset> parts;
  for (int b = 1; b <= 5; ++b) {
    const auto file = *dir / fmt::format("data_batch_{}.bin", b);
    if (std::filesystem::exists(file)) parts.push_back(read_cifar_file(file));
  }
  ImageDataset all = concat(parts, "train");
  std::vector<ImageDataset> test_parts;
  test_parts.push_back(read_cifar_file(*dir / "test_batch.bin"));
  CifarSplits out;
  out.test = concat(test_parts, "test");

  // Validation: the first val_per_class rows of each class under a seeded permutation.
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 0xCA11));
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<std::size_t> taken(10, 0), val, train;
  for (auto i : order) {
    auto& t = taken[static_cast<std::size_t>(all.labels[i])];
    if (t < val_per_class) {
      val.push_back(i);
      ++t;
    } else {
      train.push_back(i);
    }
  }
  for (std::size_t c = 0; c < 10; ++c)
    if (taken[c] < val_per_class)
      throw std::runtime_error(fmt::format("class {} has only {} training examples, {} requested for validation", c,
                                           taken[c], val_per_class));
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  out.val = all.subset(val, "val");
  out.train = all.subset(train, "train");
  return out;
}

}  // namespace splitbn
