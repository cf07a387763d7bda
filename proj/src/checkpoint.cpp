#include "gsr/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "gsr/data_io.hpp"

namespace gsr {

namespace {

constexpr char kMagic[4] = {'G', 'S', 'R', 'C'};

using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError(path, "truncated checkpoint");
  return v;
}

}  // namespace

const Eigen::MatrixXf& Checkpoint::at(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw std::out_of_range("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(path, "cannot open for writing");
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, ckpt.config_fingerprint);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.cols()));
    const RowMajorF rm = t.value;
    out.write(reinterpret_cast<const char*>(rm.data()),
              static_cast<std::streamsize>(rm.size() * sizeof(float)));
  }
  if (!out) throw DataError(path, "write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path, "cannot open for reading");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError(path, "bad magic; not a GSRC checkpoint");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw DataError(path, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config_fingerprint = get<std::uint64_t>(in, path);
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto len = get<std::uint32_t>(in, path);
    if (len > 4096) throw DataError(path, "implausible tensor name length");
    t.name.resize(len);
    if (!in.read(t.name.data(), len)) throw DataError(path, "truncated tensor name");
    const auto rows = get<std::uint64_t>(in, path);
    const auto cols = get<std::uint64_t>(in, path);
    RowMajorF rm(rows, cols);
    if (!in.read(reinterpret_cast<char*>(rm.data()),
                 static_cast<std::streamsize>(rm.size() * sizeof(float))) &&
        rm.size() > 0) {
      throw DataError(path, "truncated payload for tensor '" + t.name + "'");
    }
    t.value = rm;
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

std::uint64_t checkpoint_fingerprint(const Checkpoint& ckpt) {
  std::uint64_t h = fnv1a(&ckpt.config_fingerprint, sizeof(ckpt.config_fingerprint));
  for (const auto& t : ckpt.tensors) {
    h = fnv1a(t.name.data(), t.name.size(), h);
    const std::uint64_t shape[2] = {static_cast<std::uint64_t>(t.value.rows()),
                                    static_cast<std::uint64_t>(t.value.cols())};
    h = fnv1a(shape, sizeof(shape), h);
    const RowMajorF rm = t.value;
    h = fnv1a(rm.data(), rm.size() * sizeof(float), h);
  }
  return h;
}

}  // namespace gsr
