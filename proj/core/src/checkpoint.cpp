#include "panoloc/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace panoloc {

namespace {

constexpr char kMagic[8] = {'P', 'L', 'C', 'K', 'P', 'T', '0', '\n'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  // The metadata must parse and carry a version.
  const auto meta = nlohmann::json::parse(ckpt.meta_json);
  if (!meta.contains("version")) {
    throw std::invalid_argument("save_checkpoint: metadata lacks mandatory 'version' field");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t meta_len = ckpt.meta_json.size();
  write_pod(out, meta_len);
  out.write(ckpt.meta_json.data(), static_cast<std::streamsize>(meta_len));
  const std::uint32_t n = static_cast<std::uint32_t>(ckpt.tensors.size());
  write_pod(out, n);
  for (const auto& [name, tensor] : ckpt.tensors) {
    const std::uint32_t name_len = static_cast<std::uint32_t>(name.size());
    write_pod(out, name_len);
    out.write(name.data(), name_len);
    const std::uint32_t rank = static_cast<std::uint32_t>(tensor.rank());
    write_pod(out, rank);
    for (int i = 0; i < tensor.rank(); ++i) {
      write_pod(out, static_cast<std::int64_t>(tensor.dim(i)));
    }
    out.write(reinterpret_cast<const char*>(tensor.data()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failure on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file");
  }
  Checkpoint ckpt;
  const std::uint64_t meta_len = read_pod<std::uint64_t>(in);
  ckpt.meta_json.resize(meta_len);
  in.read(ckpt.meta_json.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw std::runtime_error("load_checkpoint: truncated metadata");

  const auto meta = nlohmann::json::parse(ckpt.meta_json, nullptr, false);
  if (meta.is_discarded() || !meta.contains("version")) {
    throw std::runtime_error("load_checkpoint: invalid metadata (missing version)");
  }
  if (meta.at("version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error("load_checkpoint: unsupported checkpoint version");
  }

  const std::uint32_t n = read_pod<std::uint32_t>(in);
  for (std::uint32_t t = 0; t < n; ++t) {
    const std::uint32_t name_len = read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t rank = read_pod<std::uint32_t>(in);
    std::vector<long> shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<long>(read_pod<std::int64_t>(in));
    }
    Tensor tensor(shape);
    in.read(reinterpret_cast<char*>(tensor.data()),
            static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
    if (!in) throw std::runtime_error("load_checkpoint: truncated tensor " + name);
    ckpt.tensors.emplace(std::move(name), std::move(tensor));
  }
  return ckpt;
}

}  // namespace panoloc
