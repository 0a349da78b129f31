#include "mvmae/checkpoint.hpp"

#include "mvmae/errors.hpp"

#include <array>
#include <fstream>

namespace mvmae {

namespace {

constexpr std::array<char, 8> kMagic{'M', 'V', 'M', 'A', 'E', 'C', 'K', '1'};

template <class T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(std::ifstream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw SchemaError("truncated checkpoint (" + what + ")");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  const nlohmann::json meta{{"backbone", ckpt.metadata.backbone},
                            {"seed", ckpt.metadata.seed},
                            {"step", ckpt.metadata.step},
                            {"objective", ckpt.metadata.objective},
                            {"extra", ckpt.metadata.extra}};
  const std::string text = meta.dump();
  out.write(kMagic.data(), kMagic.size());
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put<std::uint64_t>(out, ckpt.params.entries().size());
  for (const auto& [name, p] : ckpt.params.entries()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::int64_t>(out, p.value.rows());
    put<std::int64_t>(out, p.value.cols());
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.size() * static_cast<Eigen::Index>(sizeof(double))));
  }
  if (!out) throw ConfigError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("checkpoint not found: " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw SchemaError("not a checkpoint file: " + path.string());
  }
  const auto meta_len = take<std::uint64_t>(in, "metadata length");
  std::string text(meta_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(meta_len))) throw SchemaError("truncated checkpoint metadata");

  Checkpoint ckpt;
  try {
    const auto meta = nlohmann::json::parse(text);
    ckpt.metadata.backbone = meta.at("backbone");
    ckpt.metadata.seed = meta.at("seed").get<std::uint64_t>();
    ckpt.metadata.step = meta.at("step").get<std::int64_t>();
    ckpt.metadata.objective = meta.at("objective").get<std::string>();
    ckpt.metadata.extra = meta.at("extra");
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad checkpoint metadata: ") + e.what());
  }

  const auto count = take<std::uint64_t>(in, "entry count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = take<std::uint32_t>(in, "name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw SchemaError("truncated checkpoint name");
    const auto rows = take<std::int64_t>(in, "rows");
    const auto cols = take<std::int64_t>(in, "cols");
    if (rows < 0 || cols < 0) throw SchemaError("negative array shape in checkpoint");
    ag::Matrix m(rows, cols);
    if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
      throw SchemaError("truncated checkpoint array " + name);
    }
    ckpt.params.add(name, std::move(m));
  }
  return ckpt;
}

std::size_t load_parameters(ParameterStore& into, const ParameterStore& from, const std::string& prefix) {
  std::size_t copied = 0;
  for (const auto& [name, p] : from.entries()) {
    if (!name.starts_with(prefix) || !into.contains(name)) continue;
    ag::Parameter& dst = into.at(name);
    if (dst.value.rows() != p.value.rows() || dst.value.cols() != p.value.cols()) {
      throw ContractError("checkpoint array " + name + " has a different shape");
    }
    dst.value = p.value;
    ++copied;
  }
  return copied;
}

}  // namespace mvmae
