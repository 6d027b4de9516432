#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splitbn/checkpoint.hpp"
#include "splitbn/config.hpp"
#include "splitbn/probes.hpp"

namespace splitbn {

/// Loaded and preprocessed data shared read-only by every repeat.
struct ExperimentData {
  CifarSplits raw;  // train / val / test as stored, after any class grouping
  Preprocessor pre;
};

/// Reads CIFAR-10 from cfg.resolved_data_root() and fits the preprocessing.
ExperimentData load_experiment_data(const ExperimentConfig& cfg);

/// Model description for `cfg`, with num_classes taken from the supervised classes.
ArchitectureSpec model_spec(const ExperimentConfig& cfg);

/// Argmax accuracy over `data` in inference mode, `batch` images at a time.
/// Throws for an empty dataset or rows without labels.
double evaluate(Model<float>& model, const ImageDataset& data, std::size_t batch = 500,
                Partition choice = Partition::labeled);

struct RunResult {
  std::filesystem::path dir;
  int repeat = 0;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  std::size_t best_step = 0;
  double best_val = 0.0;
  double test_accuracy = 0.0;
};

/// Raised when the loss or a gradient stops being finite; `dir/abort.json` holds the record.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(std::size_t step, const std::string& what);
  std::size_t step;
};

using LogFn = std::function<void(const std::string&)>;

/// Seed of repeat `k`.
std::uint64_t repeat_seed(std::uint64_t seed, int repeat);

/// The split of repeat `k` with preprocessed validation and test sets, as train_run builds it.
struct RunSplit {
  SplitResult split;
  ImageDataset val;
  ImageDataset test;
  /// Whether batches carry unlabeled rows (never for the supervised method).
  bool use_unlabeled = false;
};
RunSplit make_run_split(const ExperimentConfig& cfg, const ExperimentData& data, int repeat);

/// Batches of repeat `k` as train_run draws them when `stream` is 3.
BatchComposer make_composer(const ExperimentConfig& cfg, const ExperimentData& data, const RunSplit& split, int repeat,
                            std::uint64_t stream);

/// One seeded training run into `dir`: config.ini, metrics.{csv,jsonl},
/// checkpoints/step_<n>.ckpt whenever validation accuracy improves, result.json.
/// Evaluates at step 0 after calibrating the running statistics on one batch,
/// then every eval_every steps and at the end.
RunResult train_run(const ExperimentConfig& cfg, const ExperimentData& data, const std::filesystem::path& dir,
                    int repeat, const LogFn& log = {});

/// All repeats under out_root/<name>/repeat_<k>, then out_root/<name>/summary.csv.
std::vector<RunResult> train(const ExperimentConfig& cfg, const std::filesystem::path& out_root,
                             const LogFn& log = {});

struct BestCheckpoint {
  std::filesystem::path file;
  CheckpointInfo info;
};

/// Checkpoints in `run_dir`/checkpoints, ordered by step.
std::vector<BestCheckpoint> list_checkpoints(const std::filesystem::path& run_dir);

/// Highest validation accuracy, earliest step on ties. Throws when there is none.
BestCheckpoint select_best(std::span<const BestCheckpoint> checkpoints);
BestCheckpoint select_best(const std::filesystem::path& run_dir);

/// Mean and half the spread; for two repeats this is the paper's "a ± b".
struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double half_range = 0.0;
  /// Percentages with one decimal, e.g. "77.0 ± 0.4".
  std::string str() const;
};

Summary summarize(std::span<const double> values);

/// Reads result.json of each run directory and returns test accuracies in order.
std::vector<double> read_test_accuracies(std::span<const std::filesystem::path> run_dirs);

}  // namespace splitbn
