#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gsr/eigen_types.hpp"

namespace gsr {

// Binary checkpoint container, little-endian:
//
//   "GSRC"  u32 version  u64 config_fingerprint  u32 tensor_count
//   per tensor: u32 name_len, name bytes, u64 rows, u64 cols,
//               rows*cols float32 row-major
struct NamedTensor {
  std::string name;
  Eigen::MatrixXf value;
};

struct Checkpoint {
  std::uint64_t config_fingerprint = 0;
  std::vector<NamedTensor> tensors;

  /// Throws DataError-like std::out_of_range if absent.
  const Eigen::MatrixXf& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a over names, shapes and payload bytes.
std::uint64_t checkpoint_fingerprint(const Checkpoint& ckpt);

}  // namespace gsr
