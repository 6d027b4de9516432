#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "splitbn/data.hpp"

namespace splitbn {

int SplitPlan::outside_count() const {
  return static_cast<int>(std::lround(mismatch_percent / 100.0 * unlabeled_classes));
}

void SplitPlan::validate() const {
  if (supervised_classes.size() < 2) throw std::invalid_argument("split needs at least 2 supervised classes");
  if (mismatch_percent < 0 || mismatch_percent > 100)
    throw std::invalid_argument(fmt::format("mismatch {}% outside [0, 100]", mismatch_percent));
  if (unlabeled_classes < 0) throw std::invalid_argument("unlabeled_classes must be non-negative");
  if (labels_per_class == 0) throw std::invalid_argument("labels_per_class must be positive");
  auto sorted = supervised_classes;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw std::invalid_argument(fmt::format("duplicate supervised class in {}", supervised_classes));
  const int inside = unlabeled_classes - outside_count();
  if (inside > static_cast<int>(supervised_classes.size()))
    throw std::invalid_argument(fmt::format("{} in-pool unlabeled classes requested from {} supervised classes", inside,
                                            supervised_classes.size()));
}

namespace {

// k entries of `pool` chosen by a seeded shuffle, in the pool's order.
std::vector<int> choose(std::vector<int> pool, int k, Rng& rng) {
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  std::vector<int> out;
  for (auto i : idx) out.push_back(pool[i]);
  return out;
}

ImageDataset restrict_and_relabel(const ImageDataset& data, const std::vector<int>& classes, const std::string& split) {
  std::map<int, int> remap;
  for (std::size_t i = 0; i < classes.size(); ++i) remap[classes[i]] = static_cast<int>(i);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (remap.count(data.labels[i])) rows.push_back(i);
  ImageDataset out = data.subset(rows, split);
  for (auto& l : out.labels) l = remap.at(l);
  out.class_names.clear();
  for (int c : classes)
    out.class_names.push_back(c < static_cast<int>(data.class_names.size()) ? data.class_names[static_cast<std::size_t>(c)]
                                                                            : std::to_string(c));
  return out;
}

}  // namespace

SplitResult make_split(const CifarSplits& data, const SplitPlan& plan) {
  plan.validate();
  const auto& train = data.train;
  const int num_classes = static_cast<int>(train.class_names.size());
  for (int c : plan.supervised_classes)
    if (c < 0 || c >= num_classes) throw std::invalid_argument(fmt::format("class {} not in the dataset", c));

  std::vector<int> outside = plan.outside_classes;
  if (outside.empty()) {
    for (int c = 0; c < num_classes; ++c)
      if (std::find(plan.supervised_classes.begin(), plan.supervised_classes.end(), c) == plan.supervised_classes.end())
        outside.push_back(c);
  }
  for (int c : outside)
    if (std::find(plan.supervised_classes.begin(), plan.supervised_classes.end(), c) != plan.supervised_classes.end())
      throw std::invalid_argument(fmt::format("outside class {} is also supervised", c));
  const int n_out = plan.outside_count(), n_in = plan.unlabeled_classes - n_out;
  if (n_out > static_cast<int>(outside.size()))
    throw std::invalid_argument(fmt::format("{} out-of-pool classes requested, {} available", n_out, outside.size()));

  Rng rng(mix_seed(plan.seed, 0x5B17));
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (auto i : order) by_class[static_cast<std::size_t>(train.labels[i])].push_back(i);
  }

  SplitResult out;
  std::vector<std::size_t> next(static_cast<std::size_t>(num_classes), 0);
  for (int c : plan.supervised_classes) {
    auto& rows = by_class[static_cast<std::size_t>(c)];
    if (rows.size() < plan.labels_per_class)
      throw std::invalid_argument(fmt::format("class {} has {} training examples, {} labels requested", c, rows.size(),
                                              plan.labels_per_class));
    out.labeled_index.insert(out.labeled_index.end(), rows.begin(), rows.begin() + static_cast<long>(plan.labels_per_class));
    next[static_cast<std::size_t>(c)] = plan.labels_per_class;
  }

  std::vector<int> chosen = choose(plan.supervised_classes, n_in, rng);
  const auto outs = choose(outside, n_out, rng);
  chosen.insert(chosen.end(), outs.begin(), outs.end());
  out.unlabeled_class_ids = chosen;

  if (!chosen.empty()) {
    std::size_t per = std::numeric_limits<std::size_t>::max();
    for (int c : chosen) per = std::min(per, by_class[static_cast<std::size_t>(c)].size() - next[static_cast<std::size_t>(c)]);
    if (plan.unlabeled_per_class) {
      if (per < plan.unlabeled_per_class) {
        std::vector<std::string> counts;
        for (int c : chosen)
          counts.push_back(fmt::format("{}:{}", c, by_class[static_cast<std::size_t>(c)].size() - next[static_cast<std::size_t>(c)]));
        throw std::invalid_argument(fmt::format("unlabeled classes have {} remaining examples, {} per class requested",
                                                fmt::join(counts, " "), plan.unlabeled_per_class));
      }
      per = plan.unlabeled_per_class;
    }
    if (per == 0) throw std::invalid_argument("no examples left for the unlabeled set");
    for (int c : chosen) {
      auto& rows = by_class[static_cast<std::size_t>(c)];
      const auto start = rows.begin() + static_cast<long>(next[static_cast<std::size_t>(c)]);
      out.unlabeled_index.insert(out.unlabeled_index.end(), start, start + static_cast<long>(per));
      out.unlabeled_source.insert(out.unlabeled_source.end(), per, c);
    }
  }

  std::sort(out.labeled_index.begin(), out.labeled_index.end());
  out.labeled = restrict_and_relabel(train.subset(out.labeled_index, "labeled"), plan.supervised_classes, "labeled");
  // Keep source classes aligned with the sorted unlabeled rows.
  {
    std::vector<std::pair<std::size_t, int>> rows;
    for (std::size_t i = 0; i < out.unlabeled_index.size(); ++i) rows.emplace_back(out.unlabeled_index[i], out.unlabeled_source[i]);
    std::sort(rows.begin(), rows.end());
    for (std::size_t i = 0; i < rows.size(); ++i) std::tie(out.unlabeled_index[i], out.unlabeled_source[i]) = rows[i];
  }
  if (!out.unlabeled_index.empty()) {
    out.unlabeled = train.subset(out.unlabeled_index, "unlabeled");
    for (auto& l : out.unlabeled.labels) l = -1;
  } else {
    out.unlabeled.split = "unlabeled";
  }
  out.unlabeled.class_names = out.labeled.class_names;
  out.val = restrict_and_relabel(data.val, plan.supervised_classes, "val");
  out.test = restrict_and_relabel(data.test, plan.supervised_classes, "test");
  return out;
}

std::vector<ClassGroup> parse_class_groups(std::istream& in) {
  std::vector<ClassGroup> groups;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw std::invalid_argument(fmt::format("class groups line {}: missing ':'", lineno));
    ClassGroup g{trim(line.substr(0, colon)), {}};
    if (g.name.empty()) throw std::invalid_argument(fmt::format("class groups line {}: empty name", lineno));
    std::stringstream ids(line.substr(colon + 1));
    std::string tok;
    while (std::getline(ids, tok, ',')) {
      tok = trim(tok);
      std::size_t used = 0;
      int id = -1;
      try {
        id = std::stoi(tok, &used);
      } catch (const std::logic_error&) {
        used = 0;
      }
      if (tok.empty() || used != tok.size() || id < 0)
        throw std::invalid_argument(fmt::format("class groups line {}: bad class id '{}'", lineno, tok));
      g.members.push_back(id);
    }
    if (g.members.empty()) throw std::invalid_argument(fmt::format("class groups line {}: no class ids", lineno));
    groups.push_back(std::move(g));
  }
  std::map<int, std::string> owner;
  for (const auto& g : groups)
    for (int id : g.members)
      if (!owner.emplace(id, g.name).second)
        throw std::invalid_argument(fmt::format("class {} appears in both '{}' and '{}'", id, owner[id], g.name));
  return groups;
}

ImageDataset regroup(const ImageDataset& data, const std::vector<ClassGroup>& groups) {
  std::map<int, int> to_group;
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (int id : groups[g].members) to_group[id] = static_cast<int>(g);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (to_group.count(data.labels[i])) rows.push_back(i);
  ImageDataset out = data.subset(rows, data.split);
  for (auto& l : out.labels) l = to_group.at(l);
  out.class_names.clear();
  for (const auto& g : groups) out.class_names.push_back(g.name);
  return out;
}

}  // namespace splitbn
