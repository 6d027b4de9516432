#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "splitbn/data.hpp"

namespace splitbn {

AugmentPolicy AugmentPolicy::parse(const std::string& text) {
  AugmentPolicy p;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok.erase(std::remove_if(tok.begin(), tok.end(), [](unsigned char c) { return std::isspace(c); }), tok.end());
    if (tok.empty() || tok == "none") continue;
    try {
      if (tok == "flip") {
        p.flip = true;
      } else if (tok.rfind("translate", 0) == 0) {
        p.translate = true;
        const std::string n = tok.substr(9);
        if (!n.empty()) {
          std::size_t used = 0;
          p.max_shift = std::stoi(n, &used);
          if (used != n.size() || p.max_shift < 0) throw std::invalid_argument(tok);
        }
      } else if (tok.rfind("gaussian", 0) == 0) {
        const std::string s = tok.substr(8);
        std::size_t used = 0;
        p.gaussian_sigma = s.empty() ? 0.15 : std::stod(s, &used);
        if ((!s.empty() && used != s.size()) || p.gaussian_sigma < 0) throw std::invalid_argument(tok);
      } else {
        throw std::invalid_argument(tok);
      }
    } catch (const std::logic_error&) {
      throw std::invalid_argument(fmt::format("unknown augmentation '{}' in '{}'", tok, text));
    }
  }
  return p;
}

std::string AugmentPolicy::str() const {
  std::vector<std::string> parts;
  if (flip) parts.emplace_back("flip");
  if (translate) parts.push_back(fmt::format("translate{}", max_shift));
  if (gaussian_sigma > 0) parts.push_back(fmt::format("gaussian{}", gaussian_sigma));
  if (parts.empty()) return "none";
  std::string out = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) out += "," + parts[i];
  return out;
}

void flip_horizontal(float* image, std::size_t side) {
  for (std::size_t ch = 0; ch < kChannels; ++ch)
    for (std::size_t r = 0; r < side; ++r) {
      float* row = image + (ch * side + r) * side;
      std::reverse(row, row + side);
    }
}

void translate(float* image, int dy, int dx, std::size_t side) {
  if (dy == 0 && dx == 0) return;
  const auto last = static_cast<std::int64_t>(side) - 1;
  std::vector<float> tmp(side * side);
  for (std::size_t ch = 0; ch < kChannels; ++ch) {
    float* p = image + ch * side * side;
    for (std::int64_t r = 0; r <= last; ++r)
      for (std::int64_t c = 0; c <= last; ++c) {
        const auto sr = std::clamp<std::int64_t>(r - dy, 0, last);
        const auto sc = std::clamp<std::int64_t>(c - dx, 0, last);
        tmp[static_cast<std::size_t>(r * (last + 1) + c)] = p[sr * (last + 1) + sc];
      }
    std::copy(tmp.begin(), tmp.end(), p);
  }
}

void augment(float* image, const AugmentPolicy& policy, Rng& rng, std::size_t side) {
  if (policy.flip && rng.bernoulli(0.5)) flip_horizontal(image, side);
  if (policy.translate) {
    const auto dy = static_cast<int>(rng.uniform_int(-policy.max_shift, policy.max_shift));
    const auto dx = static_cast<int>(rng.uniform_int(-policy.max_shift, policy.max_shift));
    translate(image, dy, dx, side);
  }
  if (policy.gaussian_sigma > 0) {
    for (std::size_t k = 0; k < kChannels * side * side; ++k)
      image[k] += static_cast<float>(rng.normal(0.0, policy.gaussian_sigma));
  }
}

EpochSampler::EpochSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
  if (n == 0) throw std::invalid_argument("cannot sample from an empty set");
  std::iota(order_.begin(), order_.end(), 0);
  shuffle();
}

void EpochSampler::shuffle() { std::shuffle(order_.begin(), order_.end(), rng_.engine()); }

std::size_t EpochSampler::next() {
  if (pos_ == order_.size()) {
    shuffle();
    pos_ = 0;
    ++epoch_;
  }
  return order_[pos_++];
}

BatchComposer::BatchComposer(const ImageDataset& labeled, const ImageDataset* unlabeled, BatchSizes sizes,
                             DistortionKind distortion, AugmentPolicy policy, const Preprocessor& pre,
                             std::uint64_t seed, bool second_view)
    : labeled_(labeled),
      unlabeled_(unlabeled),
      sizes_(sizes),
      distortion_(distortion),
      policy_(policy),
      pre_(pre),
      second_view_(second_view),
      labeled_sampler_(labeled.size() ? labeled.size() : 1, mix_seed(seed, 1)),
      rng_(mix_seed(seed, 3)) {
  if (labeled.size() == 0) throw std::invalid_argument("labeled set is empty");
  if (sizes.labeled < 2) throw std::invalid_argument(fmt::format("labeled batch size {} is below 2", sizes.labeled));
  if (sizes.unlabeled == 1) throw std::invalid_argument("unlabeled batch size 1 is below 2");
  if (sizes.unlabeled > 0 && (!unlabeled || unlabeled->size() == 0))
    throw std::invalid_argument("unlabeled batch size is positive but the unlabeled set is empty");
  labeled_ready_ = labeled;
  pre_.apply(labeled_ready_);
  if (sizes.unlabeled > 0) {
    unlabeled_sampler_.emplace(unlabeled->size(), mix_seed(seed, 2));
    if (distortion == DistortionKind::none) {
      unlabeled_ready_ = *unlabeled;
      pre_.apply(*unlabeled_ready_);
    }
  }
}

ComposedBatch BatchComposer::next() {
  const std::size_t n = sizes_.labeled + sizes_.unlabeled;
  ComposedBatch out;
  auto& b = out.batch;
  b.data = Tensor<float>({n, kChannels, kSide, kSide});
  if (second_view_) out.second_view.emplace(b.data.shape());
  b.partition.reserve(n);
  b.labels.reserve(n);
  std::vector<float> base(kImageSize);
  auto finish_row = [&](std::size_t row) {
    float* dst = b.data.data() + row * kImageSize;
    if (second_view_) {
      float* alt = out.second_view->data() + row * kImageSize;
      std::copy(base.begin(), base.end(), alt);
      augment(alt, policy_, rng_);
    }
    std::copy(base.begin(), base.end(), dst);
    augment(dst, policy_, rng_);
  };
  for (std::size_t i = 0; i < sizes_.labeled; ++i) {
    const std::size_t idx = labeled_sampler_.next();
    std::copy_n(labeled_ready_.image(idx), kImageSize, base.begin());
    finish_row(i);
    b.partition.push_back(Partition::labeled);
    b.labels.push_back(labeled_ready_.labels[idx]);
  }
  for (std::size_t i = 0; i < sizes_.unlabeled; ++i) {
    const std::size_t idx = unlabeled_sampler_->next();
    if (unlabeled_ready_) {
      std::copy_n(unlabeled_ready_->image(idx), kImageSize, base.begin());
    } else {
      std::copy_n(unlabeled_->image(idx), kImageSize, base.begin());
      distort(base.data(), distortion_, rng_);
      pre_.apply_image(base.data());
    }
    finish_row(sizes_.labeled + i);
    b.partition.push_back(Partition::unlabeled);
    b.labels.push_back(-1);
  }
  return out;
}

}  // namespace splitbn
