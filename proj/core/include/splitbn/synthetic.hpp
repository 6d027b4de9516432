#pragma once

#include <cstdint>
#include <filesystem>

#include "splitbn/rng.hpp"

namespace splitbn {

/// Procedural stand-in for CIFAR-10 written in the same binary layout. Each of
/// the 10 classes is an oriented grating with a class tint and a coloured
/// blob, jittered per image and overlaid with pixel noise.
struct SyntheticSpec {
  std::size_t train_per_class = 1000;
  std::size_t test_per_class = 200;
  std::size_t train_files = 5;
  std::uint64_t seed = 0;
};

/// One 3072-byte image of class `label` in the record's R, G, B plane order.
void synthetic_image(int label, Rng& rng, std::uint8_t* out);

/// Writes data_batch_1..N.bin, test_batch.bin and batches.meta.txt into `dir`.
void write_synthetic_cifar(const std::filesystem::path& dir, const SyntheticSpec& spec);

}  // namespace splitbn
