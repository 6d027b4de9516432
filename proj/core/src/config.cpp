#include "splitbn/config.hpp"

#include <fmt/format.h>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace splitbn {

ConfigError::ConfigError(const std::string& source, std::size_t l, const std::string& message)
    : std::runtime_error(l ? fmt::format("{}:{}: {}", source, l, message) : fmt::format("{}: {}", source, message)),
      line(l) {}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class I>
I parse_int(const std::string& s) {
  I v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw std::invalid_argument(fmt::format("'{}' is not an integer", s));
  return v;
}

double parse_real(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw std::invalid_argument(fmt::format("'{}' is not a number", s));
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw std::invalid_argument(fmt::format("'{}' is not true or false", s));
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(parse_int<int>(tok));
  }
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

Partition parse_partition(const std::string& s) {
  if (s == "labeled") return Partition::labeled;
  if (s == "unlabeled") return Partition::unlabeled;
  throw std::invalid_argument(fmt::format("unknown partition '{}'", s));
}

std::string real(double v) { return fmt::format("{}", v); }
std::string boolean(bool v) { return v ? "true" : "false"; }

struct Key {
  const char* section;
  const char* name;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define SBN_INT(sec, key, field)                                                                \
  Key {                                                                                         \
    sec, key, [](const ExperimentConfig& c) { return std::to_string(c.field); },                \
        [](ExperimentConfig& c, const std::string& v) { c.field = parse_int<decltype(c.field)>(v); } \
  }
#define SBN_REAL(sec, key, field)                                                    \
  Key {                                                                              \
    sec, key, [](const ExperimentConfig& c) { return real(c.field); },               \
        [](ExperimentConfig& c, const std::string& v) { c.field = parse_real(v); }   \
  }
#define SBN_BOOL(sec, key, field)                                                    \
  Key {                                                                              \
    sec, key, [](const ExperimentConfig& c) { return boolean(c.field); },            \
        [](ExperimentConfig& c, const std::string& v) { c.field = parse_bool(v); }   \
  }
#define SBN_ENUM(sec, key, field, parser)                                              \
  Key {                                                                                \
    sec, key, [](const ExperimentConfig& c) { return std::string(to_string(c.field)); }, \
        [](ExperimentConfig& c, const std::string& v) { c.field = parser(v); }         \
  }

const std::vector<Key>& key_table() {
  static const std::vector<Key> table{
      Key{"run", "name", [](const ExperimentConfig& c) { return c.name; },
          [](ExperimentConfig& c, const std::string& v) {
            if (v.empty() || v.find_first_of("/\\ ") != std::string::npos)
              throw std::invalid_argument(fmt::format("'{}' is not a usable run name", v));
            c.name = v;
          }},
      SBN_INT("run", "seed", seed),
      SBN_INT("run", "repeats", repeats),
      SBN_INT("run", "total_steps", total_steps),
      SBN_INT("run", "eval_every", eval_every),
      SBN_INT("run", "probe_every", probe_every),
      SBN_INT("run", "log_every", log_every),
      SBN_INT("run", "eval_batch", eval_batch),
      SBN_ENUM("run", "eval_partition", eval_partition, parse_partition),
      SBN_REAL("run", "lr", lr.lr),
      SBN_REAL("run", "lr_decay_factor", lr.decay_factor),
      SBN_INT("run", "lr_decay_at", lr.decay_at),
      SBN_INT("run", "lr_decay_every", lr.decay_every),
      SBN_INT("run", "labeled_batch", batch.labeled),
      SBN_INT("run", "unlabeled_batch", batch.unlabeled),
      SBN_BOOL("run", "teacher_second_view", teacher_second_view),

      SBN_ENUM("architecture", "family", architecture.family, parse_family),
      SBN_INT("architecture", "depth", architecture.depth),
      SBN_INT("architecture", "width", architecture.width),
      SBN_ENUM("architecture", "norm", architecture.norm, parse_norm),
      SBN_ENUM("architecture", "activation", architecture.activation, parse_activation),
      SBN_REAL("architecture", "leaky_slope", architecture.leaky_slope),
      Key{"architecture", "width_scale", [](const ExperimentConfig& c) { return c.architecture.width_scale.str(); },
          [](ExperimentConfig& c, const std::string& v) { c.architecture.width_scale = Rational::parse(v); }},
      SBN_REAL("architecture", "dropout", architecture.dropout),
      SBN_BOOL("architecture", "allow_unnormalized", architecture.allow_unnormalized),

      SBN_ENUM("ssl", "method", ssl.method, parse_method),
      SBN_REAL("ssl", "max_coefficient", ssl.max_coefficient),
      SBN_INT("ssl", "warmup_steps", ssl.warmup_steps),
      SBN_ENUM("ssl", "ramp", ssl.ramp, parse_ramp),
      SBN_REAL("ssl", "ema_decay", ssl.ema_decay),
      SBN_REAL("ssl", "vat_epsilon", ssl.vat_epsilon),
      SBN_REAL("ssl", "vat_xi", ssl.vat_xi),
      SBN_INT("ssl", "vat_power_iterations", ssl.vat_power_iterations),
      SBN_BOOL("ssl", "consistency_on_all", ssl.consistency_on_all),

      Key{"data", "data_root", [](const ExperimentConfig& c) { return c.data_root; },
          [](ExperimentConfig& c, const std::string& v) { c.data_root = v; }},
      Key{"data", "class_groups", [](const ExperimentConfig& c) { return c.class_groups; },
          [](ExperimentConfig& c, const std::string& v) { c.class_groups = v; }},
      SBN_ENUM("data", "preprocessing", preprocessing, parse_preprocessing),
      SBN_REAL("data", "zca_regularizer", zca_regularizer),
      SBN_INT("data", "zca_max_samples", zca_max_samples),
      Key{"data", "augment", [](const ExperimentConfig& c) { return c.augment.str(); },
          [](ExperimentConfig& c, const std::string& v) { c.augment = AugmentPolicy::parse(v); }},
      SBN_INT("data", "val_per_class", val_per_class),
      Key{"data", "supervised_classes", [](const ExperimentConfig& c) { return join(c.split.supervised_classes); },
          [](ExperimentConfig& c, const std::string& v) { c.split.supervised_classes = parse_ints(v); }},
      Key{"data", "outside_classes", [](const ExperimentConfig& c) { return join(c.split.outside_classes); },
          [](ExperimentConfig& c, const std::string& v) { c.split.outside_classes = parse_ints(v); }},
      SBN_INT("data", "unlabeled_classes", split.unlabeled_classes),
      SBN_INT("data", "mismatch_percent", split.mismatch_percent),
      SBN_INT("data", "labels_per_class", split.labels_per_class),
      SBN_INT("data", "unlabeled_per_class", split.unlabeled_per_class),

      SBN_ENUM("distortion", "kind", distortion, parse_distortion),
  };
  return table;
}

#undef SBN_INT
#undef SBN_REAL
#undef SBN_BOOL
#undef SBN_ENUM

const Key* find_key(const std::string& section, const std::string& name) {
  for (const auto& k : key_table())
    if (section == k.section && name == k.name) return &k;
  return nullptr;
}

void set_key(ExperimentConfig& cfg, const std::string& source, std::size_t line, const std::string& section,
             const std::string& name, const std::string& value) {
  const Key* k = find_key(section, name);
  if (!k) throw ConfigError(source, line, fmt::format("unknown key '{}.{}'", section, name));
  try {
    k->set(cfg, value);
  } catch (const std::exception& e) {
    throw ConfigError(source, line, fmt::format("{}.{}: {}", section, name, e.what()));
  }
}

}  // namespace

ArchitectureSpec ExperimentConfig::default_architecture() {
  ArchitectureSpec a;
  a.family = Family::wide_resnet;
  a.depth = 28;
  a.width = 2;
  a.norm = NormType::batch;
  return a;
}

SslConfig ExperimentConfig::default_ssl() {
  SslConfig s;
  s.warmup_steps = 200000;
  return s;
}

void ExperimentConfig::validate() const {
  auto fail = [&](const std::string& m) { throw ConfigError(name, 0, m); };
  if (repeats < 1) fail("run.repeats must be at least 1");
  if (eval_every == 0) fail("run.eval_every must be positive");
  if (probe_every == 0) fail("run.probe_every must be positive");
  if (log_every == 0) fail("run.log_every must be positive");
  if (eval_batch == 0) fail("run.eval_batch must be positive");
  if (!(lr.lr > 0.0)) fail("run.lr must be positive");
  if (!(lr.decay_factor > 0.0)) fail("run.lr_decay_factor must be positive");
  if (lr.decay_every == 0 && lr.decay_at > total_steps)
    fail(fmt::format("run.lr_decay_at ({}) exceeds run.total_steps ({})", lr.decay_at, total_steps));
  if (batch.labeled < 2) fail("run.labeled_batch must be at least 2");
  if (batch.unlabeled == 1) fail("run.unlabeled_batch must be 0 or at least 2");
  if (ssl.method != SslMethod::supervised && batch.unlabeled == 0 && !ssl.consistency_on_all)
    fail("consistency restricted to unlabeled rows needs run.unlabeled_batch > 0");
  if (!(zca_regularizer > 0.0)) fail("data.zca_regularizer must be positive");
  if (val_per_class == 0) fail("data.val_per_class must be positive");
  try {
    ArchitectureSpec a = architecture;
    a.num_classes = static_cast<int>(split.supervised_classes.size());
    a.validate();
    ssl.validate();
    split.validate();
    AugmentPolicy::parse(augment.str());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    fail(e.what());
  }
}

std::filesystem::path ExperimentConfig::resolved_data_root() const {
  if (!data_root.empty()) return data_root;
  if (const char* env = std::getenv("SPLITBN_DATA_ROOT"); env && *env) return env;
  return {};
}

ExperimentConfig parse_config(std::istream& in, const std::string& source) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::string section, raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find_first_of("#;");
    const std::string text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (text.empty()) continue;
    if (text.front() == '[') {
      if (text.back() != ']') throw ConfigError(source, line, "unterminated section header");
      section = trim(text.substr(1, text.size() - 2));
      static const std::set<std::string> sections{"run", "architecture", "ssl", "data", "distortion"};
      if (!sections.count(section)) throw ConfigError(source, line, fmt::format("unknown section '{}'", section));
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError(source, line, "expected 'key = value'");
    if (section.empty()) throw ConfigError(source, line, "key outside any section");
    const std::string key = trim(text.substr(0, eq)), value = trim(text.substr(eq + 1));
    if (!seen.insert(section + "." + key).second)
      throw ConfigError(source, line, fmt::format("'{}.{}' given twice", section, key));
    set_key(cfg, source, line, section, key, value);
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError(file.string(), 0, "cannot open");
  return parse_config(in, file.string());
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("override", 0, fmt::format("'{}' is not section.key=value", assignment));
  set_key(cfg, "override", 0, trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
          trim(assignment.substr(eq + 1)));
}

std::string to_ini(const ExperimentConfig& cfg) {
  std::string out, section;
  for (const auto& k : key_table()) {
    if (section != k.section) {
      if (!section.empty()) out += '\n';
      section = k.section;
      out += fmt::format("[{}]\n", section);
    }
    out += fmt::format("{} = {}\n", k.name, k.get(cfg));
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.push_back(fmt::format("{}.{}", k.section, k.name));
  return out;
}

}  // namespace splitbn
