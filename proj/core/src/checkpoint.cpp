#include "splitbn/checkpoint.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

namespace splitbn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'B', 'N', 'C', 'K', 'P', 'T', '\0'};
const std::string kTeacher = "teacher/";

template <class V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class V>
V get(std::istream& in, const std::string& source) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw std::runtime_error(fmt::format("{}: truncated at byte {}", source, static_cast<long long>(in.gcount())));
  return v;
}

template <class T>
void add_model(CheckpointFile& ck, Model<T>& model, const std::string& prefix) {
  for (const auto& e : model.state()) {
    CheckpointBlock b{e.tensor->shape(), {}};
    b.values.reserve(e.tensor->numel());
    for (T v : e.tensor->storage()) b.values.push_back(static_cast<float>(v));
    ck.order.push_back(prefix + e.name);
    ck.blocks.emplace(prefix + e.name, std::move(b));
  }
  for (auto* n : model.norm_layers())
    for (std::size_t i = 0; i < n->running.size(); ++i) {
      const std::string name = prefix + n->name + "/updated" +
                               (n->kind == NormKind::split ? "/" + std::string(to_string(static_cast<Partition>(i))) : "");
      ck.order.push_back(name);
      ck.blocks.emplace(name, CheckpointBlock{{1}, {n->running[i].updated ? 1.0f : 0.0f}});
    }
}

template <class T>
void restore_model(const CheckpointFile& ck, Model<T>& model, const std::string& prefix, std::set<std::string>& used,
                   const std::string& source) {
  auto block = [&](const std::string& name) -> const CheckpointBlock& {
    auto it = ck.blocks.find(name);
    if (it == ck.blocks.end()) throw std::runtime_error(fmt::format("{}: missing block '{}'", source, name));
    used.insert(name);
    return it->second;
  };
  for (const auto& e : model.state()) {
    const auto& b = block(prefix + e.name);
    if (b.shape != e.tensor->shape())
      throw ShapeError(fmt::format("{}: block '{}' has shape {}, model expects {}", source, prefix + e.name,
                                   shape_string(b.shape), shape_string(e.tensor->shape())));
    auto& dst = e.tensor->storage();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(b.values[i]);
  }
  for (auto* n : model.norm_layers())
    for (std::size_t i = 0; i < n->running.size(); ++i) {
      const std::string name = prefix + n->name + "/updated" +
                               (n->kind == NormKind::split ? "/" + std::string(to_string(static_cast<Partition>(i))) : "");
      const auto& b = block(name);
      if (b.values.size() != 1) throw ShapeError(fmt::format("{}: block '{}' is not a scalar", source, name));
      n->running[i].updated = b.values[0] != 0.0f;
    }
}

CheckpointInfo read_header(std::istream& in, const std::string& source) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(fmt::format("{}: not a checkpoint", source));
  const auto version = get<std::uint32_t>(in, source);
  if (version != kCheckpointVersion)
    throw std::runtime_error(fmt::format("{}: unsupported version {}", source, version));
  CheckpointInfo info;
  info.step = get<std::uint64_t>(in, source);
  info.val_accuracy = get<double>(in, source);
  return info;
}

}  // namespace

CheckpointInfo read_checkpoint_info(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open checkpoint {}", file.string()));
  return read_header(in, file.string());
}

CheckpointFile read_checkpoint(const std::filesystem::path& file) {
  const std::string source = file.string();
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open checkpoint {}", source));
  CheckpointFile ck;
  ck.info = read_header(in, source);
  const auto count = get<std::uint32_t>(in, source);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = get<std::uint32_t>(in, source);
    if (len > 4096) throw std::runtime_error(fmt::format("{}: block {} has a {}-byte name", source, k, len));
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw std::runtime_error(fmt::format("{}: truncated block name", source));
    const auto rank = get<std::uint32_t>(in, source);
    if (rank > 8) throw std::runtime_error(fmt::format("{}: block '{}' has rank {}", source, name, rank));
    CheckpointBlock b;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      b.shape.push_back(get<std::uint64_t>(in, source));
      numel *= b.shape.back();
    }
    if (numel > (std::size_t(1) << 32)) throw std::runtime_error(fmt::format("{}: block '{}' too large", source, name));
    b.values.resize(numel);
    if (!in.read(reinterpret_cast<char*>(b.values.data()), static_cast<std::streamsize>(numel * sizeof(float))))
      throw std::runtime_error(fmt::format("{}: truncated data in block '{}'", source, name));
    if (!ck.blocks.emplace(name, std::move(b)).second)
      throw std::runtime_error(fmt::format("{}: duplicate block '{}'", source, name));
    ck.order.push_back(name);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error(fmt::format("{}: trailing bytes", source));
  return ck;
}

void write_checkpoint(const std::filesystem::path& file, const CheckpointFile& ck) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  auto tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", tmp.string()));
    out.write(kMagic, 8);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, ck.info.step);
    put<double>(out, ck.info.val_accuracy);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.order.size()));
    for (const auto& name : ck.order) {
      const auto& b = ck.blocks.at(name);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(b.shape.size()));
      for (auto d : b.shape) put<std::uint64_t>(out, d);
      out.write(reinterpret_cast<const char*>(b.values.data()),
                static_cast<std::streamsize>(b.values.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error(fmt::format("write to {} failed", tmp.string()));
  }
  std::filesystem::rename(tmp, file);
}

template <class T>
void save_checkpoint(const std::filesystem::path& file, const CheckpointInfo& info, Model<T>& student,
                     Model<T>* teacher) {
  CheckpointFile ck;
  ck.info = info;
  add_model(ck, student, "");
  if (teacher) add_model(ck, *teacher, kTeacher);
  write_checkpoint(file, ck);
}

template <class T>
CheckpointInfo load_checkpoint(const std::filesystem::path& file, Model<T>& student, Model<T>* teacher) {
  const auto ck = read_checkpoint(file);
  std::set<std::string> used;
  restore_model(ck, student, "", used, file.string());
  if (teacher) restore_model(ck, *teacher, kTeacher, used, file.string());
  for (const auto& name : ck.order)
    if (!used.count(name) && !(teacher == nullptr && name.rfind(kTeacher, 0) == 0))
      throw std::runtime_error(fmt::format("{}: block '{}' does not belong to the model", file.string(), name));
  return ck.info;
}

template void save_checkpoint(const std::filesystem::path&, const CheckpointInfo&, Model<float>&, Model<float>*);
template void save_checkpoint(const std::filesystem::path&, const CheckpointInfo&, Model<double>&, Model<double>*);
template CheckpointInfo load_checkpoint(const std::filesystem::path&, Model<float>&, Model<float>*);
template CheckpointInfo load_checkpoint(const std::filesystem::path&, Model<double>&, Model<double>*);

}  // namespace splitbn
