#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsr/eigen_types.hpp"
#include "gsr/graph.hpp"

namespace gsr {

/// Error tied to a specific input/output file.
class DataError : public std::runtime_error {
 public:
  DataError(const std::filesystem::path& file, const std::string& what)
      : std::runtime_error(file.string() + ": " + what), file_(file) {}
  const std::filesystem::path& file() const { return file_; }

 private:
  std::filesystem::path file_;
};

/// Node property matrices, one per view. By convention view 0 is the
/// feature view "F" and view 1 the structural view "S".
struct ViewBundle {
  std::vector<std::string> names;
  std::vector<MatrixX> matrices;

  std::size_t size() const { return matrices.size(); }
};

struct Dataset {
  std::string name;
  Graph graph;
  MatrixX features;
  LabeledSplit split;
  int num_classes = 0;
};

// ---------------------------------------------------------------------------
// Dense matrix files
//
//   offset 0   "GSRM"           magic
//          4   u32              version (1)
//          8   u64              rows
//         16   u64              cols
//         24   u32              dtype (1 = float32)
//         28   rows*cols*f32    row-major payload
//
// All integers and floats little-endian.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kMatrixFileVersion = 1;
inline constexpr std::uint32_t kDtypeFloat32 = 1;

void save_matrix(const std::filesystem::path& path, const Eigen::MatrixXf& m);
Eigen::MatrixXf load_matrix(const std::filesystem::path& path);

/// Text variant: first line "rows cols", then one whitespace-separated row per line.
void save_text_matrix(const std::filesystem::path& path, const Eigen::MatrixXf& m);
Eigen::MatrixXf load_text_matrix(const std::filesystem::path& path);

/// Dispatches on content: binary when the file starts with the magic bytes.
Eigen::MatrixXf load_any_matrix(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Text formats: edge list "u<TAB>v", labels "node<TAB>class", splits as three
// lines of space-separated node ids (train, val, test). '#' starts a comment.
// ---------------------------------------------------------------------------

std::vector<std::pair<NodeId, NodeId>> load_edge_list(const std::filesystem::path& path);
void save_edge_list(const std::filesystem::path& path, const Graph& g);
std::vector<int> load_labels(const std::filesystem::path& path, NodeId num_nodes);
void save_labels(const std::filesystem::path& path, std::span<const int> labels);
LabeledSplit load_split(const std::filesystem::path& path, std::vector<int> labels);
void save_split(const std::filesystem::path& path, const LabeledSplit& split);

/// manifest.json:
///   { "format_version": 1, "name": "...", "num_nodes": N, "num_classes": C,
///     "edges": "edges.tsv", "features": "features.gsrm",
///     "labels": "labels.tsv", "split": "split.txt",
///     "row_normalize_features": true }
/// Relative paths resolve against the manifest's directory.
struct DatasetManifest {
  int format_version = 1;
  std::string name;
  NodeId num_nodes = 0;
  int num_classes = 0;
  std::filesystem::path edges;
  std::filesystem::path features;
  std::filesystem::path labels;
  std::filesystem::path split;
  bool row_normalize_features = false;
};

inline constexpr int kManifestVersion = 1;

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Resolves a dataset reference: a manifest file, a directory holding
/// manifest.json, or a name looked up under $GSR_DATA_DIR.
std::filesystem::path resolve_dataset(const std::string& ref);

Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes `data` as a dataset directory with manifest.json and returns the manifest path.
std::filesystem::path save_dataset(const std::filesystem::path& dir, const Dataset& data,
                                   bool binary_features = true);

/// Scales each row to unit L1 norm; zero rows are left as is.
MatrixX row_normalize(MatrixX x);

// ---------------------------------------------------------------------------
// Synthetic planted-partition graphs
// ---------------------------------------------------------------------------

struct SbmConfig {
  std::vector<NodeId> block_sizes{100, 100};
  double p_in = 0.1;
  double p_out = 0.005;
  int feature_dim = 32;
  double feature_signal = 1.0;
  // Extra cross-block edges injected, as a fraction of the sampled edge count.
  double noise_edge_fraction = 0.0;
  std::uint64_t seed = 0;
};

struct SbmSample {
  Dataset data;
  std::vector<int> blocks;
  std::vector<Edge> noise_edges;
};

SbmSample generate_sbm(const SbmConfig& config);

/// Stratified split: ⌈ratio·n_c⌉ training nodes per class, the rest divided
/// evenly between validation and test.
LabeledSplit export_split_by_ratio(std::span<const int> labels, double train_ratio,
                                   std::uint64_t seed);

/// FNV-1a over raw bytes; used for file checksums and fingerprints.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t file_checksum(const std::filesystem::path& path);

}  // namespace gsr
