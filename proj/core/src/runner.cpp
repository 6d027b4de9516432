#include "splitbn/runner.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <regex>

#include "json.hpp"

namespace splitbn {

namespace fs = std::filesystem;

TrainingAborted::TrainingAborted(std::size_t s, const std::string& what) : std::runtime_error(what), step(s) {}

namespace {

// Seed streams of one run.
enum Stream : std::uint64_t { kModel = 1, kSplit = 2, kBatches = 3, kCalibration = 4, kSteps = 5 };

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", file.string()));
  out << text;
}

/// Sets every running statistic to the statistics of one train-mode batch.
void calibrate(Model<float>& model, const PartitionedBatch<float>& batch, std::uint64_t dropout_seed) {
  std::vector<float> momentum;
  for (auto* n : model.norm_layers()) {
    momentum.push_back(n->momentum);
    n->momentum = 1.0f;
  }
  {
    Tape<float> tape(ParameterMode::frozen);
    ForwardContext<float> ctx;
    ctx.mode = Mode::train;
    ctx.partition = batch.partition;
    ctx.dropout_seed = dropout_seed;
    model.forward(tape, tape.constant(batch.data), ctx);
  }
  std::size_t i = 0;
  for (auto* n : model.norm_layers()) n->momentum = momentum[i++];
}

std::string checkpoint_name(std::size_t step) { return fmt::format("step_{:09d}.ckpt", step); }

}  // namespace

std::uint64_t repeat_seed(std::uint64_t seed, int repeat) { return mix_seed(seed, 1000 + static_cast<std::uint64_t>(repeat)); }

ArchitectureSpec model_spec(const ExperimentConfig& cfg) {
  ArchitectureSpec a = cfg.architecture;
  a.num_classes = static_cast<int>(cfg.split.supervised_classes.size());
  return a;
}

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  const fs::path root = cfg.resolved_data_root();
  if (root.empty()) throw std::runtime_error("no data root: set data.data_root or SPLITBN_DATA_ROOT");
  ExperimentData d;
  d.raw = load_cifar10(root, cfg.val_per_class, mix_seed(cfg.seed, 0xDA7A));
  if (!cfg.class_groups.empty()) {
    std::ifstream in(cfg.class_groups);
    if (!in) throw std::runtime_error(fmt::format("cannot open class groups {}", cfg.class_groups));
    const auto groups = parse_class_groups(in);
    d.raw.train = regroup(d.raw.train, groups);
    d.raw.val = regroup(d.raw.val, groups);
    d.raw.test = regroup(d.raw.test, groups);
  }
  d.pre.mode = cfg.preprocessing;
  if (cfg.preprocessing == Preprocessing::gcn_zca) {
    const std::size_t n = cfg.zca_max_samples ? std::min(cfg.zca_max_samples, d.raw.train.size()) : d.raw.train.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    ImageDataset fit = d.raw.train.subset(idx, "zca_fit");
    gcn(fit);
    d.pre.zca = zca_fit(fit, cfg.zca_regularizer);
  }
  return d;
}

double evaluate(Model<float>& model, const ImageDataset& data, std::size_t batch, Partition choice) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: dataset is empty");
  if (batch == 0) throw std::invalid_argument("evaluate: batch size is 0");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    const std::size_t n = std::min(batch, data.size() - start);
    Tensor<float> x({n, kChannels, kSide, kSide});
    std::memcpy(x.data(), data.image(start), n * kImageSize * sizeof(float));
    Tape<float> tape(ParameterMode::frozen);
    ForwardContext<float> ctx;
    ctx.mode = Mode::infer;
    ctx.infer_partition = choice;
    const auto& logits = model.forward(tape, tape.constant(std::move(x)), ctx).value();
    const std::size_t k = logits.dim(1);
    for (std::size_t r = 0; r < n; ++r) {
      const int label = data.labels[start + r];
      if (label < 0) throw std::invalid_argument(fmt::format("evaluate: row {} has no label", start + r));
      const float* row = logits.data() + r * k;
      if (static_cast<int>(std::max_element(row, row + k) - row) == label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

RunSplit make_run_split(const ExperimentConfig& cfg, const ExperimentData& data, int repeat) {
  SplitPlan plan = cfg.split;
  plan.seed = mix_seed(repeat_seed(cfg.seed, repeat), kSplit);
  RunSplit rs{make_split(data.raw, plan), {}, {}, false};
  rs.val = rs.split.val;
  rs.test = rs.split.test;
  data.pre.apply(rs.val);
  data.pre.apply(rs.test);
  // A supervised run never looks at unlabeled rows, so its batches and
  // statistics match a run without an unlabeled stream.
  rs.use_unlabeled = cfg.ssl.method != SslMethod::supervised && cfg.batch.unlabeled > 0;
  return rs;
}

BatchComposer make_composer(const ExperimentConfig& cfg, const ExperimentData& data, const RunSplit& rs, int repeat,
                            std::uint64_t stream) {
  const BatchSizes sizes{cfg.batch.labeled, rs.use_unlabeled ? cfg.batch.unlabeled : 0};
  const bool second_view = cfg.teacher_second_view && cfg.ssl.method == SslMethod::mean_teacher;
  return BatchComposer(rs.split.labeled, rs.use_unlabeled ? &rs.split.unlabeled : nullptr, sizes, cfg.distortion,
                       cfg.augment, data.pre, mix_seed(repeat_seed(cfg.seed, repeat), stream), second_view);
}

RunResult train_run(const ExperimentConfig& cfg, const ExperimentData& data, const fs::path& dir, int repeat,
                    const LogFn& log) {
  cfg.validate();
  const auto say = [&](const std::string& m) {
    if (log) log(m);
  };
  const std::uint64_t seed = repeat_seed(cfg.seed, repeat);
  fs::create_directories(dir);
  fs::remove_all(dir / "checkpoints");
  fs::remove(dir / "abort.json");
  write_text(dir / "config.ini", to_ini(cfg));

  const RunSplit rs = make_run_split(cfg, data, repeat);
  BatchComposer composer = make_composer(cfg, data, rs, repeat, kBatches);

  Model<float> student(model_spec(cfg), mix_seed(seed, kModel));
  calibrate(student, make_composer(cfg, data, rs, repeat, kCalibration).next().batch, mix_seed(seed, kCalibration));
  std::optional<Model<float>> teacher;
  if (cfg.ssl.method == SslMethod::mean_teacher) teacher.emplace(student);
  Model<float>* teacher_ptr = teacher ? &*teacher : nullptr;
  Adam<float> adam(student.parameters());

  MetricsStream metrics(dir / "metrics");
  double best_val = -1.0;
  auto eval_and_save = [&](std::size_t step) {
    const double acc = evaluate(student, rs.val, cfg.eval_batch, cfg.eval_partition);
    metrics.write({step, "accuracy", "val", "", acc});
    metrics.flush();
    if (acc > best_val) {
      best_val = acc;
      save_checkpoint(dir / "checkpoints" / checkpoint_name(step), {step, acc}, student, teacher_ptr);
    }
    say(fmt::format("[repeat {}] step {} val {:.4f} (best {:.4f})", repeat, step, acc, best_val));
  };
  auto abort = [&](std::size_t step, const LossComponents& c, const std::string& why) {
    nlohmann::json j{{"step", step},
                     {"reason", why},
                     {"classification", fmt::format("{}", c.classification)},
                     {"auxiliary", fmt::format("{}", c.auxiliary)},
                     {"coefficient", c.coefficient},
                     {"total", fmt::format("{}", c.total)}};
    write_text(dir / "abort.json", j.dump(2) + "\n");
    metrics.flush();
    throw TrainingAborted(step, fmt::format("run aborted at step {}: {}", step, why));
  };

  eval_and_save(0);
  const std::uint64_t step_base = mix_seed(seed, kSteps);
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t s = 0; s < cfg.total_steps; ++s) {
    const StepSeeds seeds{mix_seed(step_base, 3 * s), mix_seed(step_base, 3 * s + 1), mix_seed(step_base, 3 * s + 2)};
    ComposedBatch cb = composer.next();
    if (s % cfg.probe_every == 0) metrics.write(collect_stats(student, cb.batch, s, {}, seeds.student_dropout));

    const double lr = lr_at(s, cfg.lr);
    student.zero_grad();
    Tape<float> tape;
    auto loss = total_loss(tape, student, teacher_ptr, cb.batch, cfg.ssl, static_cast<std::int64_t>(s), seeds,
                           cb.second_view ? &*cb.second_view : nullptr);
    if (s % cfg.log_every == 0 || !std::isfinite(loss.components.total)) record_losses(metrics, s, loss.components, lr);
    if (!std::isfinite(loss.components.total)) abort(s, loss.components, "non-finite loss");
    tape.backward(loss.total);
    try {
      adam.step(lr);
    } catch (const NonFiniteError& e) {
      abort(s, loss.components, e.what());
    }
    if (teacher) ema_update(*teacher, student, cfg.ssl.ema_decay);

    if (s % cfg.log_every == 0) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      say(fmt::format("[repeat {}] step {} loss {:.4f} (cls {:.4f} aux {:.4f} x {:.3f}) lr {:g} {:.1f}s", repeat, s,
                      loss.components.total, loss.components.classification, loss.components.auxiliary,
                      loss.components.coefficient, lr, secs));
    }
    if ((s + 1) % cfg.eval_every == 0 || s + 1 == cfg.total_steps) eval_and_save(s + 1);
  }

  const BestCheckpoint best = select_best(dir);
  Model<float> chosen(model_spec(cfg), 0);
  load_checkpoint(best.file, chosen, static_cast<Model<float>*>(nullptr));
  RunResult r;
  r.dir = dir;
  r.repeat = repeat;
  r.seed = seed;
  r.steps = cfg.total_steps;
  r.best_step = best.info.step;
  r.best_val = best.info.val_accuracy;
  r.test_accuracy = evaluate(chosen, rs.test, cfg.eval_batch, cfg.eval_partition);
  metrics.write({r.best_step, "accuracy", "test", "", r.test_accuracy});
  metrics.flush();
  nlohmann::json j{{"repeat", repeat},
                   {"seed", seed},
                   {"steps", r.steps},
                   {"best_step", r.best_step},
                   {"checkpoint", best.file.filename().string()},
                   {"val_accuracy", r.best_val},
                   {"test_accuracy", r.test_accuracy}};
  write_text(dir / "result.json", j.dump(2) + "\n");
  say(fmt::format("[repeat {}] best step {} val {:.4f} test {:.4f}", repeat, r.best_step, r.best_val,
                  r.test_accuracy));
  return r;
}

std::vector<RunResult> train(const ExperimentConfig& cfg, const fs::path& out_root, const LogFn& log) {
  cfg.validate();
  const ExperimentData data = load_experiment_data(cfg);
  const fs::path root = out_root / cfg.name;
  std::vector<RunResult> results;
  std::vector<double> tests;
  std::string runs = "repeat,seed,best_step,val_accuracy,test_accuracy\n";
  for (int k = 0; k < cfg.repeats; ++k) {
    results.push_back(train_run(cfg, data, root / fmt::format("repeat_{}", k), k, log));
    const auto& r = results.back();
    tests.push_back(r.test_accuracy);
    runs += fmt::format("{},{},{},{},{}\n", k, r.seed, r.best_step, r.best_val, r.test_accuracy);
  }
  const Summary s = summarize(tests);
  write_text(root / "runs.csv", runs);
  write_text(root / "summary.csv", fmt::format("name,repeats,test_mean,test_half_range,summary\n{},{},{},{},{}\n",
                                               cfg.name, s.count, s.mean, s.half_range, s.str()));
  return results;
}

std::vector<BestCheckpoint> list_checkpoints(const fs::path& run_dir) {
  std::vector<BestCheckpoint> out;
  const fs::path dir = run_dir / "checkpoints";
  if (!fs::is_directory(dir)) return out;
  static const std::regex pattern(R"(step_\d+\.ckpt)");
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && std::regex_match(e.path().filename().string(), pattern))
      out.push_back({e.path(), read_checkpoint_info(e.path())});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.info.step < b.info.step; });
  return out;
}

BestCheckpoint select_best(std::span<const BestCheckpoint> checkpoints) {
  if (checkpoints.empty()) throw std::invalid_argument("select_best: no checkpoints");
  const BestCheckpoint* best = &checkpoints[0];
  for (const auto& c : checkpoints)
    if (c.info.val_accuracy > best->info.val_accuracy ||
        (c.info.val_accuracy == best->info.val_accuracy && c.info.step < best->info.step))
      best = &c;
  return *best;
}

BestCheckpoint select_best(const fs::path& run_dir) {
  const auto all = list_checkpoints(run_dir);
  if (all.empty()) throw std::invalid_argument(fmt::format("select_best: no checkpoints in {}", run_dir.string()));
  return select_best(std::span<const BestCheckpoint>(all));
}

std::string Summary::str() const { return fmt::format("{:.1f} ± {:.1f}", 100.0 * mean, 100.0 * half_range); }

Summary summarize(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("summarize: no values");
  Summary s;
  s.count = values.size();
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  s.half_range = (*hi - *lo) / 2.0;
  return s;
}

std::vector<double> read_test_accuracies(std::span<const fs::path> run_dirs) {
  std::vector<double> out;
  for (const auto& d : run_dirs) {
    std::ifstream in(d / "result.json");
    if (!in) throw std::runtime_error(fmt::format("{}: no result.json", d.string()));
    out.push_back(nlohmann::json::parse(in).at("test_accuracy").get<double>());
  }
  return out;
}

}  // namespace splitbn
