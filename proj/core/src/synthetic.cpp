#include "splitbn/synthetic.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "splitbn/data.hpp"

namespace splitbn {

namespace {

struct ClassLook {
  double angle;      // grating orientation, radians
  double frequency;  // cycles per image
  double tint[3];
  double blob[3];
};

ClassLook look(int label) {
  const double k = label;
  ClassLook c{};
  c.angle = k * std::numbers::pi / 10.0;
  c.frequency = 2.0 + (label % 3);
  const double hue = 2.0 * std::numbers::pi * ((label * 3) % 10) / 10.0;
  for (int ch = 0; ch < 3; ++ch) {
    c.tint[ch] = 0.5 + 0.25 * std::cos(hue + ch * 2.0 * std::numbers::pi / 3.0);
    c.blob[ch] = 0.5 + 0.45 * std::cos(hue + std::numbers::pi + ch * 2.0 * std::numbers::pi / 3.0);
  }
  return c;
}

void write_records(const std::filesystem::path& file, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", file.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> make_records(std::size_t per_class, Rng& rng) {
  std::vector<int> labels;
  for (int c = 0; c < 10; ++c) labels.insert(labels.end(), per_class, c);
  std::shuffle(labels.begin(), labels.end(), rng.engine());
  std::vector<std::uint8_t> bytes(labels.size() * kCifarRecord);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    bytes[i * kCifarRecord] = static_cast<std::uint8_t>(labels[i]);
    synthetic_image(labels[i], rng, bytes.data() + i * kCifarRecord + 1);
  }
  return bytes;
}

}  // namespace

void synthetic_image(int label, Rng& rng, std::uint8_t* out) {
  if (label < 0 || label > 9) throw std::invalid_argument(fmt::format("synthetic class {} outside [0, 9]", label));
  const ClassLook c = look(label);
  const double angle = c.angle + rng.normal(0.0, 0.12);
  const double freq = c.frequency * rng.uniform(0.85, 1.15);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double contrast = rng.uniform(0.15, 0.35);
  const double brightness = rng.normal(0.0, 0.06);
  const double by = rng.uniform(6.0, 26.0), bx = rng.uniform(6.0, 26.0), br = rng.uniform(3.0, 6.0);
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (std::size_t r = 0; r < kSide; ++r)
    for (std::size_t col = 0; col < kSide; ++col) {
      const double u = (ca * static_cast<double>(col) + sa * static_cast<double>(r)) / static_cast<double>(kSide);
      const double wave = contrast * std::sin(2.0 * std::numbers::pi * freq * u + phase);
      const double d2 = (static_cast<double>(r) - by) * (static_cast<double>(r) - by) +
                        (static_cast<double>(col) - bx) * (static_cast<double>(col) - bx);
      const double blob = std::exp(-d2 / (2.0 * br * br));
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double v = c.tint[ch] + wave + brightness;
        v = (1.0 - blob) * v + blob * c.blob[ch];
        v += rng.normal(0.0, 0.08);
        out[ch * kSide * kSide + r * kSide + col] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
}

void write_synthetic_cifar(const std::filesystem::path& dir, const SyntheticSpec& spec) {
  if (spec.train_files == 0) throw std::invalid_argument("need at least one training file");
  std::filesystem::create_directories(dir);
  Rng rng(mix_seed(spec.seed, 0x5EED));
  const auto train = make_records(spec.train_per_class, rng);
  const std::size_t records = train.size() / kCifarRecord;
  for (std::size_t f = 0; f < spec.train_files; ++f) {
    const std::size_t lo = records * f / spec.train_files, hi = records * (f + 1) / spec.train_files;
    write_records(dir / fmt::format("data_batch_{}.bin", f + 1),
                  std::vector<std::uint8_t>(train.begin() + static_cast<long>(lo * kCifarRecord),
                                            train.begin() + static_cast<long>(hi * kCifarRecord)));
  }
  write_records(dir / "test_batch.bin", make_records(spec.test_per_class, rng));
  std::ofstream meta(dir / "batches.meta.txt");
  for (const auto& n : cifar10_class_names()) meta << n << "\n";
}

}  // namespace splitbn
