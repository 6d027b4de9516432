#include <fmt/format.h>

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "splitbn/data.hpp"

namespace splitbn {

namespace {

struct KindName {
  DistortionKind kind;
  const char* name;
};

constexpr KindName kKinds[] = {
    {DistortionKind::none, "none"},
    {DistortionKind::grayscale, "grayscale"},
    {DistortionKind::uniform_noise, "uniform_noise"},
    {DistortionKind::salt_pepper, "salt_pepper"},
    {DistortionKind::invert, "invert"},
    {DistortionKind::rotate90, "rotate90"},
    {DistortionKind::random_contrast, "random_contrast"},
    {DistortionKind::occlusion, "occlusion"},
};

constexpr double kNoiseRange = 0.2;
constexpr double kSaltPepper = 0.10;
constexpr double kContrastLo = 0.2, kContrastHi = 0.8;
constexpr std::size_t kOcclusion = 14;

float clip01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

DistortionKind parse_distortion(const std::string& s) {
  for (const auto& k : kKinds)
    if (s == k.name) return k.kind;
  throw std::invalid_argument(fmt::format("unknown distortion '{}'", s));
}

const char* to_string(DistortionKind k) {
  for (const auto& e : kKinds)
    if (e.kind == k) return e.name;
  return "?";
}

void distort(float* image, DistortionKind kind, Rng& rng, std::size_t side) {
  const std::size_t plane = side * side;
  float* r = image;
  float* g = image + plane;
  float* b = image + 2 * plane;
  switch (kind) {
    case DistortionKind::none:
      return;
    case DistortionKind::grayscale:
      for (std::size_t k = 0; k < plane; ++k) {
        const float lum = clip01(0.299 * r[k] + 0.587 * g[k] + 0.114 * b[k]);
        r[k] = g[k] = b[k] = lum;
      }
      return;
    case DistortionKind::uniform_noise:
      for (std::size_t k = 0; k < 3 * plane; ++k) image[k] = clip01(image[k] + rng.uniform(-kNoiseRange, kNoiseRange));
      return;
    case DistortionKind::salt_pepper:
      for (std::size_t k = 0; k < plane; ++k) {
        const double u = rng.uniform();
        if (u < kSaltPepper) {
          r[k] = g[k] = b[k] = 1.0f;
        } else if (u < 2 * kSaltPepper) {
          r[k] = g[k] = b[k] = 0.0f;
        }
      }
      return;
    case DistortionKind::invert:
      for (std::size_t k = 0; k < 3 * plane; ++k) image[k] = 1.0f - image[k];
      return;
    case DistortionKind::rotate90: {
      // Counterclockwise: out[r][c] = in[c][side - 1 - r].
      std::vector<float> tmp(plane);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        float* p = image + ch * plane;
        for (std::size_t row = 0; row < side; ++row)
          for (std::size_t col = 0; col < side; ++col) tmp[row * side + col] = p[col * side + (side - 1 - row)];
        std::copy(tmp.begin(), tmp.end(), p);
      }
      return;
    }
    case DistortionKind::random_contrast: {
      const double f = rng.uniform(kContrastLo, kContrastHi);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        float* p = image + ch * plane;
        double mean = 0.0;
        for (std::size_t k = 0; k < plane; ++k) mean += p[k];
        mean /= static_cast<double>(plane);
        for (std::size_t k = 0; k < plane; ++k) p[k] = clip01(mean + f * (p[k] - mean));
      }
      return;
    }
    case DistortionKind::occlusion: {
      if (side < kOcclusion) throw std::invalid_argument(fmt::format("occlusion needs side >= {}", kOcclusion));
      const auto top = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(side - kOcclusion)));
      const auto left = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(side - kOcclusion)));
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t row = top; row < top + kOcclusion; ++row)
          std::fill_n(image + ch * plane + row * side + left, kOcclusion, 0.0f);
      return;
    }
  }
}

}  // namespace splitbn
