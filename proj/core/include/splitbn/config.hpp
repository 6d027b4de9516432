#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

#include "splitbn/data.hpp"
#include "splitbn/models.hpp"
#include "splitbn/optim.hpp"
#include "splitbn/ssl.hpp"

namespace splitbn {

/// Raised for malformed config text; `line` is 0 for overrides and validation.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& source, std::size_t line, const std::string& message);
  std::size_t line;
};

/// Everything that determines one experiment. Defaults are the class-mismatch
/// setting on CIFAR-10: WRN-28-2, GCN + ZCA, 500000 steps.
struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  int repeats = 2;
  std::size_t total_steps = 500000;
  std::size_t eval_every = 5000;
  std::size_t probe_every = 500;
  std::size_t log_every = 100;
  std::size_t eval_batch = 500;
  /// Running statistics split layers use when evaluating.
  Partition eval_partition = Partition::labeled;
  LrSchedule lr{};
  BatchSizes batch{};
  bool teacher_second_view = false;

  ArchitectureSpec architecture = default_architecture();
  SslConfig ssl = default_ssl();

  std::string data_root;  // empty: SPLITBN_DATA_ROOT
  std::string class_groups;  // optional grouping file; supervised classes then index groups
  Preprocessing preprocessing = Preprocessing::gcn_zca;
  double zca_regularizer = 1e-2;
  std::size_t zca_max_samples = 0;
  AugmentPolicy augment = AugmentPolicy::parse("flip,translate2,gaussian0.15");
  std::size_t val_per_class = 500;
  SplitPlan split{};

  DistortionKind distortion = DistortionKind::none;

  static ArchitectureSpec default_architecture();
  static SslConfig default_ssl();

  /// Throws ConfigError naming the offending key.
  void validate() const;
  /// data_root, else the SPLITBN_DATA_ROOT environment variable, else empty.
  std::filesystem::path resolved_data_root() const;
};

/// Sections [run], [architecture], [ssl], [data], [distortion] of `key = value`
/// lines. '#' and ';' start comments. Unknown and repeated keys are errors.
/// Keys that are absent keep their defaults.
ExperimentConfig parse_config(std::istream& in, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& file);

/// Applies "section.key=value".
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

/// Canonical text form: every key, in table order. parse_config(to_ini(c)) == c.
std::string to_ini(const ExperimentConfig& cfg);

/// "section.key" for every key, in table order.
std::vector<std::string> config_keys();

}  // namespace splitbn
