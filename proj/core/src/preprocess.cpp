#include <fmt/format.h>
#include <lapacke.h>

#include <cmath>
#include <stdexcept>

#include "splitbn/data.hpp"
#include "splitbn/gemm.hpp"

namespace splitbn {

Preprocessing parse_preprocessing(const std::string& s) {
  if (s == "raw") return Preprocessing::raw;
  if (s == "gcn_zca") return Preprocessing::gcn_zca;
  throw std::invalid_argument(fmt::format("unknown preprocessing '{}'", s));
}

const char* to_string(Preprocessing p) { return p == Preprocessing::raw ? "raw" : "gcn_zca"; }

void gcn_image(float* image, std::size_t n) {
  double mean = 0.0;
  for (std::size_t k = 0; k < n; ++k) mean += image[k];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t k = 0; k < n; ++k) var += (image[k] - mean) * (image[k] - mean);
  const double sd = std::max(std::sqrt(var / static_cast<double>(n)), 1e-8);
  for (std::size_t k = 0; k < n; ++k) image[k] = static_cast<float>((image[k] - mean) / sd);
}

void gcn(ImageDataset& data) {
  for (std::size_t i = 0; i < data.size(); ++i) gcn_image(data.image(i));
}

ZcaState zca_fit(const ImageDataset& data, double regularizer, std::size_t max_samples) {
  if (!(regularizer > 0.0)) throw std::invalid_argument("zca regularizer must be positive");
  const std::size_t n = max_samples ? std::min(max_samples, data.size()) : data.size();
  if (n < 2) throw std::invalid_argument(fmt::format("zca_fit needs at least 2 images, got {}", n));
  const std::size_t d = kImageSize;
  ZcaState z;
  z.dim = d;
  z.regularizer = regularizer;
  z.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) z.mean[k] += data.image(i)[k];
  for (auto& m : z.mean) m /= static_cast<double>(n);

  std::vector<double> centered(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) centered[i * d + k] = data.image(i)[k] - z.mean[k];
  std::vector<double> cov(d * d);
  gemm(Trans::yes, Trans::no, d, d, n, 1.0 / static_cast<double>(n), centered.data(), d, centered.data(), d, 0.0,
       cov.data(), d);
  centered.clear();
  centered.shrink_to_fit();

  // cov is overwritten by the eigenvectors (columns, row-major storage).
  std::vector<double> eig(d);
  const lapack_int info = LAPACKE_dsyevd(LAPACK_ROW_MAJOR, 'V', 'U', static_cast<lapack_int>(d), cov.data(),
                                         static_cast<lapack_int>(d), eig.data());
  if (info != 0) throw std::runtime_error(fmt::format("covariance eigendecomposition failed (info {})", info));

  std::vector<double> scaled(cov);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) scaled[r * d + c] /= std::sqrt(std::max(eig[c], 0.0) + regularizer);
  z.whiten.assign(d * d, 0.0);
  gemm(Trans::no, Trans::yes, d, d, d, 1.0, scaled.data(), d, cov.data(), d, 0.0, z.whiten.data(), d);
  // Symmetrize away rounding.
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = r + 1; c < d; ++c) {
      const double v = 0.5 * (z.whiten[r * d + c] + z.whiten[c * d + r]);
      z.whiten[r * d + c] = z.whiten[c * d + r] = v;
    }
  return z;
}

void zca_apply_image(const ZcaState& zca, float* image) {
  if (!zca.fitted()) throw std::logic_error("ZCA applied before it was fitted");
  const std::size_t d = zca.dim;
  std::vector<double> x(d), y(d);
  for (std::size_t k = 0; k < d; ++k) x[k] = image[k] - zca.mean[k];
  gemm(Trans::no, Trans::no, 1, d, d, 1.0, x.data(), d, zca.whiten.data(), d, 0.0, y.data(), d);
  for (std::size_t k = 0; k < d; ++k) image[k] = static_cast<float>(y[k]);
}

void zca_apply(const ZcaState& zca, ImageDataset& data) {
  if (!zca.fitted()) throw std::logic_error("ZCA applied before it was fitted");
  if (data.whitened) throw std::logic_error(fmt::format("dataset '{}' is already whitened", data.split));
  const std::size_t d = zca.dim, chunk = 256;
  std::vector<double> x(chunk * d), y(chunk * d);
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t m = std::min(chunk, data.size() - start);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < d; ++k) x[i * d + k] = data.image(start + i)[k] - zca.mean[k];
    // W is symmetric, so rows times W equal W times columns.
    gemm(Trans::no, Trans::no, m, d, d, 1.0, x.data(), d, zca.whiten.data(), d, 0.0, y.data(), d);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < d; ++k) data.image(start + i)[k] = static_cast<float>(y[i * d + k]);
  }
  data.whitened = true;
}

void Preprocessor::apply_image(float* image) const {
  if (mode == Preprocessing::raw) return;
  gcn_image(image);
  zca_apply_image(zca, image);
}

void Preprocessor::apply(ImageDataset& data) const {
  if (mode == Preprocessing::raw) return;
  gcn(data);
  zca_apply(zca, data);
}

ZcaState gcn_zca_fit_apply(ImageDataset& train, std::span<ImageDataset* const> others, double regularizer,
                           std::size_t max_samples) {
  if (train.whitened) throw std::logic_error(fmt::format("dataset '{}' is already whitened", train.split));
  gcn(train);
  ZcaState z = zca_fit(train, regularizer, max_samples);
  zca_apply(z, train);
  for (ImageDataset* o : others) {
    if (o->whitened) throw std::logic_error(fmt::format("dataset '{}' is already whitened", o->split));
    gcn(*o);
    zca_apply(z, *o);
  }
  return z;
}

}  // namespace splitbn
