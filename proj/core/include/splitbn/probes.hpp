#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "splitbn/models.hpp"
#include "splitbn/ssl.hpp"

namespace splitbn {

enum class StatGroup { labeled, unlabeled, all };
const char* to_string(StatGroup g);
StatGroup parse_stat_group(const std::string& s);

struct ActivationStat {
  std::size_t step = 0;
  std::string tap;
  StatGroup group = StatGroup::all;
  double mean = 0.0;
  double std = 0.0;       // population standard deviation
  std::size_t count = 0;  // elements pooled
};

/// Mean and std over every element of the rows in each group. Groups with no
/// rows are omitted; `all` is always present.
template <class T>
std::vector<ActivationStat> partition_moments(const Tensor<T>& activation, std::span<const Partition> partition,
                                              const std::string& tap, std::size_t step);

/// One train-mode forward with running-statistic updates suppressed and no
/// parameter gradients, observing `taps` (empty means every tap).
template <class T>
std::vector<ActivationStat> collect_stats(Model<T>& model, const PartitionedBatch<T>& batch, std::size_t step,
                                          std::span<const std::string> taps = {}, std::uint64_t dropout_seed = 0);

/// One metrics row. Column order in CSV: step,kind,name,group,value.
struct MetricRow {
  std::size_t step = 0;
  std::string kind;   // "loss", "schedule", "accuracy", "act_mean", "act_std"
  std::string name;   // loss term, schedule value, accuracy split or tap
  std::string group;  // stat group for activations, empty otherwise
  double value = 0.0;
};

/// Single-writer CSV stream with a line-delimited JSON mirror. Steps must be
/// strictly increasing per (kind, name, group).
class MetricsStream {
 public:
  /// Writes `<stem>.csv` and `<stem>.jsonl`, truncating both.
  explicit MetricsStream(const std::filesystem::path& stem);

  void write(const MetricRow& row);
  void write(const std::vector<ActivationStat>& stats);
  void flush();

  static constexpr const char* kHeader = "step,kind,name,group,value";

 private:
  std::ofstream csv_;
  std::ofstream jsonl_;
  std::map<std::tuple<std::string, std::string, std::string>, std::size_t> last_step_;
};

/// Loss terms, warmup coefficient and learning rate for one step.
void record_losses(MetricsStream& out, std::size_t step, const LossComponents& components, double lr);

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& csv);

/// |mean_labeled - mean_unlabeled| for `tap` at `step`, or at the latest step
/// carrying both groups when `step` is empty.
std::optional<double> divergence(std::span<const MetricRow> rows, const std::string& tap,
                                 std::optional<std::size_t> step = std::nullopt);
std::optional<double> divergence(std::span<const ActivationStat> stats, const std::string& tap);

}  // namespace splitbn
