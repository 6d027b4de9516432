// splitbn: train, evaluate, probe and summarize experiments.

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "splitbn/runner.hpp"
#include "splitbn/runtime.hpp"
#include "splitbn/synthetic.hpp"

using namespace splitbn;
namespace fs = std::filesystem;

namespace {

ExperimentConfig configure(const std::string& file, const std::vector<std::string>& sets,
                           const std::string& data_root) {
  ExperimentConfig cfg = file.empty() ? ExperimentConfig{} : load_config(file);
  for (const auto& s : sets) apply_override(cfg, s);
  if (!data_root.empty()) cfg.data_root = data_root;
  return cfg;
}

struct RunInfo {
  ExperimentConfig cfg;
  int repeat = 0;
};

RunInfo open_run(const fs::path& dir, const std::string& data_root) {
  RunInfo r{configure((dir / "config.ini").string(), {}, data_root), 0};
  std::ifstream in(dir / "result.json");
  if (in) r.repeat = nlohmann::json::parse(in).at("repeat").get<int>();
  return r;
}

/// Run directories given directly or as experiment directories holding repeat_<k>.
std::vector<fs::path> expand_runs(const std::vector<std::string>& args) {
  std::vector<fs::path> out;
  for (const auto& a : args) {
    const fs::path p(a);
    if (fs::exists(p / "result.json")) {
      out.push_back(p);
      continue;
    }
    std::vector<fs::path> repeats;
    if (fs::is_directory(p))
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_directory() && e.path().filename().string().rfind("repeat_", 0) == 0 &&
            fs::exists(e.path() / "result.json"))
          repeats.push_back(e.path());
    if (repeats.empty()) throw std::runtime_error(fmt::format("{}: no result.json and no finished repeat_<k>", a));
    std::sort(repeats.begin(), repeats.end());
    out.insert(out.end(), repeats.begin(), repeats.end());
  }
  return out;
}

void log_line(const std::string& m) { std::cerr << m << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  configure_process(argv);
  CLI::App app{"Split batch normalization laboratory"};
  app.require_subcommand(1);

  std::string data_root;
  app.add_option("--data-root", data_root, "CIFAR-10 binary directory (default: config, then SPLITBN_DATA_ROOT)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train every repeat of an experiment");
  std::string config_file, out_dir = "runs";
  std::vector<std::string> sets;
  int only_repeat = -1;
  bool quiet = false;
  train_cmd->add_option("config", config_file, "Experiment config file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("-s,--set", sets, "Override a key: section.key=value (repeatable)");
  train_cmd->add_option("-o,--out", out_dir, "Output root; runs go to <out>/<name>/repeat_<k>");
  train_cmd->add_option("--repeat", only_repeat, "Run only this repeat (for parallel processes)");
  train_cmd->add_flag("-q,--quiet", quiet, "No progress lines");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate the best checkpoint of a run");
  std::string run_dir, checkpoint;
  eval_cmd->add_option("run-dir", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--checkpoint", checkpoint, "Evaluate this checkpoint instead of the best");

  // probe
  auto* probe_cmd = app.add_subcommand("probe", "Labeled/unlabeled activation statistics of a run");
  std::size_t probe_batches = 1;
  probe_cmd->add_option("run-dir", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  probe_cmd->add_option("--batches", probe_batches, "Fresh batches to probe with the best checkpoint (0: only report metrics)");

  // summarize
  auto* sum_cmd = app.add_subcommand("summarize", "Mean ± half-range of test accuracy");
  std::vector<std::string> run_dirs;
  sum_cmd->add_option("run-dirs", run_dirs, "Run or experiment directories")->required();

  // synth-data
  auto* synth_cmd = app.add_subcommand("synth-data", "Write a procedural dataset in CIFAR-10 binary layout");
  std::string synth_dir;
  SyntheticSpec synth;
  synth_cmd->add_option("dir", synth_dir, "Output directory")->required();
  synth_cmd->add_option("--train-per-class", synth.train_per_class);
  synth_cmd->add_option("--test-per-class", synth.test_per_class);
  synth_cmd->add_option("--files", synth.train_files, "Number of training batch files");
  synth_cmd->add_option("--seed", synth.seed);

  // config
  auto* cfg_cmd = app.add_subcommand("config", "Print the canonical config (defaults when no file is given)");
  std::string show_file;
  cfg_cmd->add_option("config", show_file, "Experiment config file")->check(CLI::ExistingFile);
  cfg_cmd->add_option("-s,--set", sets, "Override a key: section.key=value (repeatable)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      const auto cfg = configure(config_file, sets, data_root);
      cfg.validate();
      const LogFn log = quiet ? LogFn{} : LogFn{log_line};
      if (only_repeat >= 0) {
        if (only_repeat >= cfg.repeats) throw std::invalid_argument(fmt::format("repeat {} of {}", only_repeat, cfg.repeats));
        const auto data = load_experiment_data(cfg);
        const auto r = train_run(cfg, data, fs::path(out_dir) / cfg.name / fmt::format("repeat_{}", only_repeat),
                                 only_repeat, log);
        fmt::print("{}\ttest {:.4f}\tval {:.4f}\tstep {}\n", r.dir.string(), r.test_accuracy, r.best_val, r.best_step);
      } else {
        const auto results = train(cfg, out_dir, log);
        std::vector<double> tests;
        for (const auto& r : results) {
          fmt::print("{}\ttest {:.4f}\tval {:.4f}\tstep {}\n", r.dir.string(), r.test_accuracy, r.best_val, r.best_step);
          tests.push_back(r.test_accuracy);
        }
        fmt::print("{}\t{}\n", cfg.name, summarize(tests).str());
      }
    } else if (*eval_cmd) {
      const auto run = open_run(run_dir, data_root);
      const auto data = load_experiment_data(run.cfg);
      const auto rs = make_run_split(run.cfg, data, run.repeat);
      const BestCheckpoint best = checkpoint.empty() ? select_best(fs::path(run_dir))
                                                     : BestCheckpoint{checkpoint, read_checkpoint_info(checkpoint)};
      Model<float> model(model_spec(run.cfg), 0);
      load_checkpoint(best.file, model, static_cast<Model<float>*>(nullptr));
      const double val = evaluate(model, rs.val, run.cfg.eval_batch, run.cfg.eval_partition);
      const double test = evaluate(model, rs.test, run.cfg.eval_batch, run.cfg.eval_partition);
      nlohmann::json j{{"checkpoint", best.file.string()},
                       {"step", best.info.step},
                       {"recorded_val_accuracy", best.info.val_accuracy},
                       {"val_accuracy", val},
                       {"test_accuracy", test}};
      fmt::print("{}\n", j.dump());
    } else if (*probe_cmd) {
      const fs::path dir(run_dir);
      const auto rows = read_metrics_csv(dir / "metrics.csv");
      for (const auto& tap : Model<float>::tap_names())
        if (auto d = divergence(rows, tap))
          fmt::print("metrics\t{}\tD = {:.6g}\n", tap, *d);
      if (probe_batches > 0) {
        const auto run = open_run(dir, data_root);
        const auto data = load_experiment_data(run.cfg);
        const auto rs = make_run_split(run.cfg, data, run.repeat);
        auto composer = make_composer(run.cfg, data, rs, run.repeat, 0x9B0BE);
        const auto best = select_best(dir);
        Model<float> model(model_spec(run.cfg), 0);
        load_checkpoint(best.file, model, static_cast<Model<float>*>(nullptr));
        MetricsStream out(dir / "probe");
        std::vector<ActivationStat> all;
        for (std::size_t b = 0; b < probe_batches; ++b) {
          auto stats = collect_stats(model, composer.next().batch, best.info.step + b);
          out.write(stats);
          all.insert(all.end(), stats.begin(), stats.end());
        }
        for (const auto& tap : Model<float>::tap_names())
          if (auto d = divergence(all, tap))
            fmt::print("checkpoint step {}\t{}\tD = {:.6g}\n", best.info.step, tap, *d);
        fmt::print("wrote {}\n", (dir / "probe.csv").string());
      }
    } else if (*sum_cmd) {
      const auto dirs = expand_runs(run_dirs);
      const auto tests = read_test_accuracies(dirs);
      for (std::size_t i = 0; i < dirs.size(); ++i) fmt::print("{}\t{:.4f}\n", dirs[i].string(), tests[i]);
      fmt::print("{}\n", summarize(tests).str());
    } else if (*synth_cmd) {
      write_synthetic_cifar(synth_dir, synth);
      fmt::print("wrote {}\n", synth_dir);
    } else if (*cfg_cmd) {
      auto cfg = configure(show_file, sets, "");
      cfg.validate();
      fmt::print("{}", to_ini(cfg));
    }
  } catch (const std::exception& e) {
    fmt::print(stderr, "splitbn: {}\n", e.what());
    return 1;
  }
  return 0;
}
