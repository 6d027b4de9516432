#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "splitbn/models.hpp"

namespace splitbn {

/// Layout (all integers little-endian):
///   magic "SBNCKPT\0" (8 bytes), u32 version (1), u64 step, f64 val_accuracy,
///   u32 block count, then per block:
///     u32 name length, name bytes, u32 rank, u64 dims[rank], f32 values[prod(dims)].
/// Blocks hold every StateEntry of the student by name, the teacher's under a
/// "teacher/" prefix, and one scalar "<layer>/updated[/<partition>]" per
/// running-statistics pair (1 once trained, else 0).
struct CheckpointInfo {
  std::size_t step = 0;
  double val_accuracy = 0.0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointBlock {
  std::vector<std::size_t> shape;
  std::vector<float> values;
};

struct CheckpointFile {
  CheckpointInfo info;
  std::vector<std::string> order;
  std::map<std::string, CheckpointBlock> blocks;
};

CheckpointFile read_checkpoint(const std::filesystem::path& file);
/// Header fields only.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& file);
void write_checkpoint(const std::filesystem::path& file, const CheckpointFile& ckpt);

/// Writes via a temporary file and rename.
template <class T>
void save_checkpoint(const std::filesystem::path& file, const CheckpointInfo& info, Model<T>& student,
                     Model<T>* teacher = nullptr);

/// Every block the models need must be present with the stored shape; blocks
/// nobody asked for are errors, except the teacher's when `teacher` is null.
template <class T>
CheckpointInfo load_checkpoint(const std::filesystem::path& file, Model<T>& student, Model<T>* teacher = nullptr);

extern template void save_checkpoint(const std::filesystem::path&, const CheckpointInfo&, Model<float>&,
                                     Model<float>*);
extern template void save_checkpoint(const std::filesystem::path&, const CheckpointInfo&, Model<double>&,
                                     Model<double>*);
extern template CheckpointInfo load_checkpoint(const std::filesystem::path&, Model<float>&, Model<float>*);
extern template CheckpointInfo load_checkpoint(const std::filesystem::path&, Model<double>&, Model<double>*);

}  // namespace splitbn
