#include "splitbn/probes.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace splitbn {

const char* to_string(StatGroup g) {
  switch (g) {
    case StatGroup::labeled: return "labeled";
    case StatGroup::unlabeled: return "unlabeled";
    case StatGroup::all: return "all";
  }
  return "?";
}

StatGroup parse_stat_group(const std::string& s) {
  if (s == "labeled") return StatGroup::labeled;
  if (s == "unlabeled") return StatGroup::unlabeled;
  if (s == "all") return StatGroup::all;
  throw std::invalid_argument(fmt::format("unknown stat group '{}'", s));
}

template <class T>
std::vector<ActivationStat> partition_moments(const Tensor<T>& activation, std::span<const Partition> partition,
                                              const std::string& tap, std::size_t step) {
  if (activation.rank() == 0 || activation.dim(0) != partition.size())
    throw ShapeError(fmt::format("tap '{}': activation {} with {} partition tags", tap,
                                 shape_string(activation.shape()), partition.size()));
  const std::size_t rows = partition.size(), per = rows ? activation.numel() / rows : 0;
  // Two passes in double per group for accuracy.
  double sum[2] = {0.0, 0.0};
  std::size_t n[2] = {0, 0};
  for (std::size_t r = 0; r < rows; ++r) {
    const auto g = static_cast<std::size_t>(partition[r]);
    const T* p = activation.data() + r * per;
    for (std::size_t k = 0; k < per; ++k) sum[g] += static_cast<double>(p[k]);
    n[g] += per;
  }
  const double mean[2] = {n[0] ? sum[0] / static_cast<double>(n[0]) : 0.0, n[1] ? sum[1] / static_cast<double>(n[1]) : 0.0};
  const double mean_all = (sum[0] + sum[1]) / static_cast<double>(n[0] + n[1]);
  double ss[2] = {0.0, 0.0}, ss_all = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto g = static_cast<std::size_t>(partition[r]);
    const T* p = activation.data() + r * per;
    for (std::size_t k = 0; k < per; ++k) {
      const double v = static_cast<double>(p[k]);
      ss[g] += (v - mean[g]) * (v - mean[g]);
      ss_all += (v - mean_all) * (v - mean_all);
    }
  }
  std::vector<ActivationStat> out;
  for (std::size_t g = 0; g < 2; ++g)
    if (n[g])
      out.push_back({step, tap, g == 0 ? StatGroup::labeled : StatGroup::unlabeled, mean[g],
                     std::sqrt(ss[g] / static_cast<double>(n[g])), n[g]});
  out.push_back({step, tap, StatGroup::all, mean_all, std::sqrt(ss_all / static_cast<double>(n[0] + n[1])), n[0] + n[1]});
  return out;
}

template <class T>
std::vector<ActivationStat> collect_stats(Model<T>& model, const PartitionedBatch<T>& batch, std::size_t step,
                                          std::span<const std::string> taps, std::uint64_t dropout_seed) {
  batch.validate();
  const auto known = Model<T>::tap_names();
  std::vector<std::string> wanted(taps.begin(), taps.end());
  if (wanted.empty()) wanted = known;
  for (const auto& t : wanted)
    if (std::find(known.begin(), known.end(), t) == known.end())
      throw std::invalid_argument(fmt::format("unknown tap '{}'", t));

  std::vector<ActivationStat> out;
  const TapSink<T> sink = [&](const std::string& tap, const Tensor<T>& activation) {
    if (std::find(wanted.begin(), wanted.end(), tap) == wanted.end()) return;
    auto stats = partition_moments(activation, std::span<const Partition>(batch.partition), tap, step);
    out.insert(out.end(), stats.begin(), stats.end());
  };
  Tape<T> tape(ParameterMode::frozen);
  ForwardContext<T> ctx;
  ctx.mode = Mode::train;
  ctx.partition = batch.partition;
  ctx.stats = StatsUpdate::suppress;
  ctx.dropout_seed = dropout_seed;
  ctx.taps = &sink;
  model.forward(tape, tape.constant(batch.data), ctx);
  return out;
}

template std::vector<ActivationStat> partition_moments(const Tensor<float>&, std::span<const Partition>,
                                                       const std::string&, std::size_t);
template std::vector<ActivationStat> partition_moments(const Tensor<double>&, std::span<const Partition>,
                                                       const std::string&, std::size_t);
template std::vector<ActivationStat> collect_stats(Model<float>&, const PartitionedBatch<float>&, std::size_t,
                                                   std::span<const std::string>, std::uint64_t);
template std::vector<ActivationStat> collect_stats(Model<double>&, const PartitionedBatch<double>&, std::size_t,
                                                   std::span<const std::string>, std::uint64_t);

MetricsStream::MetricsStream(const std::filesystem::path& stem) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  auto csv = stem, jsonl = stem;
  csv += ".csv";
  jsonl += ".jsonl";
  csv_.open(csv, std::ios::trunc);
  jsonl_.open(jsonl, std::ios::trunc);
  if (!csv_ || !jsonl_) throw std::runtime_error(fmt::format("cannot open metrics files at {}", stem.string()));
  csv_ << kHeader << '\n';
}

void MetricsStream::write(const MetricRow& row) {
  for (const std::string* field : {&row.kind, &row.name, &row.group})
    if (field->find_first_of(",\n\"") != std::string::npos)
      throw std::invalid_argument(fmt::format("metrics field '{}' contains a separator", *field));
  if (row.kind.empty() || row.name.empty()) throw std::invalid_argument("metrics row needs kind and name");
  const auto key = std::make_tuple(row.kind, row.name, row.group);
  if (auto it = last_step_.find(key); it != last_step_.end() && row.step <= it->second)
    throw std::logic_error(fmt::format("metrics {}/{}/{}: step {} after step {}", row.kind, row.name, row.group,
                                       row.step, it->second));
  last_step_[key] = row.step;
  csv_ << fmt::format("{},{},{},{},{}\n", row.step, row.kind, row.name, row.group, row.value);
  nlohmann::json j{{"step", row.step}, {"kind", row.kind}, {"name", row.name}, {"group", row.group}};
  if (std::isfinite(row.value))
    j["value"] = row.value;
  else
    j["value"] = fmt::format("{}", row.value);
  jsonl_ << j.dump() << '\n';
}

void MetricsStream::write(const std::vector<ActivationStat>& stats) {
  for (const auto& s : stats) write({s.step, "act_mean", s.tap, to_string(s.group), s.mean});
  for (const auto& s : stats) write({s.step, "act_std", s.tap, to_string(s.group), s.std});
}

void MetricsStream::flush() {
  csv_.flush();
  jsonl_.flush();
}

void record_losses(MetricsStream& out, std::size_t step, const LossComponents& c, double lr) {
  out.write({step, "loss", "classification", "", c.classification});
  out.write({step, "loss", "auxiliary", "", c.auxiliary});
  out.write({step, "loss", "total", "", c.total});
  out.write({step, "schedule", "coefficient", "", c.coefficient});
  out.write({step, "schedule", "lr", "", lr});
}

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", csv.string()));
  std::string line;
  if (!std::getline(in, line) || line != MetricsStream::kHeader)
    throw std::runtime_error(fmt::format("{}: missing header '{}'", csv.string(), MetricsStream::kHeader));
  std::vector<MetricRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 5) throw std::runtime_error(fmt::format("{}:{}: expected 5 fields", csv.string(), lineno));
    try {
      rows.push_back({std::stoull(f[0]), f[1], f[2], f[3], std::stod(f[4])});
    } catch (const std::logic_error&) {
      throw std::runtime_error(fmt::format("{}:{}: bad number", csv.string(), lineno));
    }
  }
  return rows;
}

std::optional<double> divergence(std::span<const MetricRow> rows, const std::string& tap,
                                 std::optional<std::size_t> step) {
  std::map<std::size_t, std::pair<std::optional<double>, std::optional<double>>> by_step;
  for (const auto& r : rows) {
    if (r.kind != "act_mean" || r.name != tap) continue;
    if (step && r.step != *step) continue;
    if (r.group == "labeled") by_step[r.step].first = r.value;
    if (r.group == "unlabeled") by_step[r.step].second = r.value;
  }
  for (auto it = by_step.rbegin(); it != by_step.rend(); ++it)
    if (it->second.first && it->second.second) return std::abs(*it->second.first - *it->second.second);
  return std::nullopt;
}

std::optional<double> divergence(std::span<const ActivationStat> stats, const std::string& tap) {
  std::vector<MetricRow> rows;
  for (const auto& s : stats) rows.push_back({s.step, "act_mean", s.tap, to_string(s.group), s.mean});
  return divergence(rows, tap);
}

}  // namespace splitbn
