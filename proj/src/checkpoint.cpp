#include "creid/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <fmt/format.h>

namespace creid::harness {

namespace {

constexpr char kMagic[8] = {'C', 'R', 'E', 'I', 'D', 'C', 'P', '\0'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error("checkpoint: truncated file");
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto len = read_pod<uint32_t>(in);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw Error("checkpoint: truncated string");
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write checkpoint '{}'", path.string()));
  out.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(out, ckpt.version);
  write_string(out, ckpt.config_fingerprint);
  write_pod<uint64_t>(out, ckpt.step);
  write_pod<uint64_t>(out, ckpt.epoch);
  write_pod<uint32_t>(out, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, m] : ckpt.tensors) {
    write_string(out, name);
    write_pod<uint32_t>(out, static_cast<uint32_t>(m.rows()));
    write_pod<uint32_t>(out, static_cast<uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) write_pod<double>(out, m(i, j));
  }
  if (!out) throw Error(fmt::format("failed writing checkpoint '{}'", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open checkpoint '{}'", path.string()));
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw Error(fmt::format("'{}' is not a checkpoint file", path.string()));
  Checkpoint ckpt;
  ckpt.version = read_pod<uint32_t>(in);
  if (ckpt.version != 1)
    throw Error(fmt::format("checkpoint version {} unsupported", ckpt.version));
  ckpt.config_fingerprint = read_string(in);
  ckpt.step = read_pod<uint64_t>(in);
  ckpt.epoch = read_pod<uint64_t>(in);
  const auto count = read_pod<uint32_t>(in);
  for (uint32_t k = 0; k < count; ++k) {
    const std::string name = read_string(in);
    const auto rows = read_pod<uint32_t>(in);
    const auto cols = read_pod<uint32_t>(in);
    Mat m(rows, cols);
    for (uint32_t i = 0; i < rows; ++i)
      for (uint32_t j = 0; j < cols; ++j) m(i, j) = read_pod<double>(in);
    ckpt.tensors.emplace(name, std::move(m));
  }
  return ckpt;
}

void store_parameters(Checkpoint& ckpt,
                      const std::vector<nn::NamedParameter>& params) {
  for (const auto& np : params) {
    if (ckpt.tensors.count(np.name))
      throw Error(fmt::format("checkpoint: duplicate tensor name '{}'", np.name));
    ckpt.tensors.emplace(np.name, np.param->value);
  }
}

void restore_parameters(const Checkpoint& ckpt,
                        const std::vector<nn::NamedParameter>& params) {
  for (const auto& np : params) {
    auto it = ckpt.tensors.find(np.name);
    if (it == ckpt.tensors.end())
      throw Error(fmt::format("checkpoint lacks tensor '{}'", np.name));
    if (it->second.rows() != np.param->rows() ||
        it->second.cols() != np.param->cols())
      throw Error(fmt::format("checkpoint tensor '{}' has shape {}x{}, expected {}x{}",
                              np.name, it->second.rows(), it->second.cols(),
                              np.param->rows(), np.param->cols()));
    np.param->value = it->second;
    np.param->zero_grad();
  }
}

}  // namespace creid::harness
