#include "gsr/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>

#include "gsr/rng.hpp"
#include "json.hpp"

namespace gsr {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

constexpr char kMagic[4] = {'G', 'S', 'R', 'M'};

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const fs::path& path, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw DataError(path, std::string("truncated header reading ") + what);
  }
  return v;
}

std::ifstream open_in(const fs::path& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw DataError(path, "cannot open for reading");
  return in;
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) throw DataError(path, "cannot open for writing");
  return out;
}

// Strips a trailing '#' comment and surrounding whitespace.
std::string_view trim_line(std::string_view line) {
  if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
  while (!line.empty() && std::isspace(static_cast<unsigned char>(line.front()))) line.remove_prefix(1);
  while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.remove_suffix(1);
  return line;
}

long long parse_int(std::string_view token, const fs::path& path, std::size_t line_no) {
  std::string s(token);
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0' || errno != 0) {
    throw DataError(path, "line " + std::to_string(line_no) + ": expected integer, got '" + s + "'");
  }
  return v;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

void save_matrix(const fs::path& path, const Eigen::MatrixXf& m) {
  auto out = open_out(path, true);
  out.write(kMagic, 4);
  write_pod<std::uint32_t>(out, kMatrixFileVersion);
  write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  write_pod<std::uint32_t>(out, kDtypeFloat32);
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  out.write(reinterpret_cast<const char*>(rm.data()),
            static_cast<std::streamsize>(rm.size() * sizeof(float)));
  if (!out) throw DataError(path, "write failed");
}

Eigen::MatrixXf load_matrix(const fs::path& path) {
  auto in = open_in(path, true);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError(path, "bad magic; not a GSRM matrix file");
  }
  const auto version = read_pod<std::uint32_t>(in, path, "version");
  if (version != kMatrixFileVersion) {
    throw DataError(path, "unsupported matrix file version " + std::to_string(version));
  }
  const auto rows = read_pod<std::uint64_t>(in, path, "rows");
  const auto cols = read_pod<std::uint64_t>(in, path, "cols");
  const auto dtype = read_pod<std::uint32_t>(in, path, "dtype");
  if (dtype != kDtypeFloat32) throw DataError(path, "unsupported dtype " + std::to_string(dtype));

  const auto header = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0, std::ios::end);
  const auto total = static_cast<std::uint64_t>(in.tellg());
  const std::uint64_t expected = rows * cols * sizeof(float);
  if (total - header != expected) {
    throw DataError(path, "payload is " + std::to_string(total - header) + " bytes, expected " +
                              std::to_string(expected) + " for " + std::to_string(rows) + "x" +
                              std::to_string(cols) + " float32");
  }
  in.seekg(static_cast<std::streamoff>(header));
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
  in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(expected));
  if (!in && expected > 0) throw DataError(path, "short read");
  return rm;
}

void save_text_matrix(const fs::path& path, const Eigen::MatrixXf& m) {
  auto out = open_out(path);
  out << m.rows() << ' ' << m.cols() << '\n';
  out.precision(9);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? " " : "") << m(r, c);
    out << '\n';
  }
}

Eigen::MatrixXf load_text_matrix(const fs::path& path) {
  auto in = open_in(path);
  long long rows = -1;
  long long cols = -1;
  if (!(in >> rows >> cols) || rows < 0 || cols < 0) throw DataError(path, "bad text matrix header");
  Eigen::MatrixXf m(rows, cols);
  for (long long r = 0; r < rows; ++r) {
    for (long long c = 0; c < cols; ++c) {
      if (!(in >> m(r, c))) {
        throw DataError(path, "text matrix ended early at row " + std::to_string(r));
      }
    }
  }
  float extra;
  if (in >> extra) throw DataError(path, "text matrix has more values than its header declares");
  return m;
}

Eigen::MatrixXf load_any_matrix(const fs::path& path) {
  char magic[4] = {};
  {
    auto in = open_in(path, true);
    in.read(magic, 4);
  }
  if (std::memcmp(magic, kMagic, 4) == 0) return load_matrix(path);
  return load_text_matrix(path);
}

std::vector<std::pair<NodeId, NodeId>> load_edge_list(const fs::path& path) {
  auto in = open_in(path);
  std::vector<std::pair<NodeId, NodeId>> edges;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto t = trim_line(line);
    if (t.empty()) continue;
    auto tok = split_ws(t);
    if (tok.size() != 2) {
      throw DataError(path, "line " + std::to_string(line_no) + ": expected 'u<TAB>v'");
    }
    edges.emplace_back(static_cast<NodeId>(parse_int(tok[0], path, line_no)),
                       static_cast<NodeId>(parse_int(tok[1], path, line_no)));
  }
  return edges;
}

void save_edge_list(const fs::path& path, const Graph& g) {
  auto out = open_out(path);
  for (const Edge& e : g.edges()) out << e.u << '\t' << e.v << '\n';
}

std::vector<int> load_labels(const fs::path& path, NodeId num_nodes) {
  auto in = open_in(path);
  std::vector<int> labels(num_nodes, -1);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto t = trim_line(line);
    if (t.empty()) continue;
    auto tok = split_ws(t);
    if (tok.size() != 2) {
      throw DataError(path, "line " + std::to_string(line_no) + ": expected 'node<TAB>class'");
    }
    const auto node = parse_int(tok[0], path, line_no);
    const auto cls = parse_int(tok[1], path, line_no);
    if (node < 0 || node >= num_nodes) {
      throw DataError(path, "line " + std::to_string(line_no) + ": node " + std::to_string(node) +
                                " out of range");
    }
    labels[node] = static_cast<int>(cls);
  }
  return labels;
}

void save_labels(const fs::path& path, std::span<const int> labels) {
  auto out = open_out(path);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0) out << i << '\t' << labels[i] << '\n';
  }
}

LabeledSplit load_split(const fs::path& path, std::vector<int> labels) {
  auto in = open_in(path);
  LabeledSplit split;
  split.labels = std::move(labels);
  std::vector<NodeId>* masks[] = {&split.train, &split.val, &split.test};
  std::string line;
  std::size_t line_no = 0;
  int mask = 0;
  while (std::getline(in, line)) {
    ++line_no;
    // Blank lines are meaningful (an empty mask), comments are not.
    if (!line.empty() && trim_line(line).empty() && line.find('#') != std::string::npos) continue;
    if (mask >= 3) {
      if (trim_line(line).empty()) continue;
      throw DataError(path, "more than three split lines");
    }
    for (auto tok : split_ws(trim_line(line))) {
      masks[mask]->push_back(static_cast<NodeId>(parse_int(tok, path, line_no)));
    }
    ++mask;
  }
  if (mask < 3) throw DataError(path, "expected three lines (train, val, test)");
  return split;
}

void save_split(const fs::path& path, const LabeledSplit& split) {
  auto out = open_out(path);
  const std::vector<NodeId>* masks[] = {&split.train, &split.val, &split.test};
  for (const auto* m : masks) {
    for (std::size_t i = 0; i < m->size(); ++i) out << (i ? " " : "") << (*m)[i];
    out << '\n';
  }
}

DatasetManifest load_manifest(const fs::path& path) {
  auto in = open_in(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path, std::string("invalid JSON: ") + e.what());
  }
  DatasetManifest m;
  try {
    m.format_version = j.value("format_version", 1);
    if (m.format_version != kManifestVersion) {
      throw DataError(path, "unsupported manifest format_version " + std::to_string(m.format_version));
    }
    m.name = j.value("name", path.parent_path().filename().string());
    m.num_nodes = j.at("num_nodes").get<NodeId>();
    m.num_classes = j.at("num_classes").get<int>();
    const fs::path base = path.parent_path();
    m.edges = base / j.at("edges").get<std::string>();
    m.features = base / j.at("features").get<std::string>();
    m.labels = base / j.at("labels").get<std::string>();
    m.split = base / j.at("split").get<std::string>();
    m.row_normalize_features = j.value("row_normalize_features", false);
  } catch (const json::exception& e) {
    throw DataError(path, std::string("manifest field error: ") + e.what());
  }
  for (const fs::path* p : {&m.edges, &m.features, &m.labels, &m.split}) {
    if (!fs::exists(*p)) throw DataError(*p, "referenced by manifest but missing");
  }
  return m;
}

void save_manifest(const fs::path& path, const DatasetManifest& m) {
  json j = {{"format_version", m.format_version},
            {"name", m.name},
            {"num_nodes", m.num_nodes},
            {"num_classes", m.num_classes},
            {"edges", m.edges.filename().string()},
            {"features", m.features.filename().string()},
            {"labels", m.labels.filename().string()},
            {"split", m.split.filename().string()},
            {"row_normalize_features", m.row_normalize_features}};
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

fs::path resolve_dataset(const std::string& ref) {
  auto try_path = [](const fs::path& p) -> std::optional<fs::path> {
    if (fs::is_regular_file(p)) return p;
    if (fs::is_directory(p) && fs::is_regular_file(p / "manifest.json")) return p / "manifest.json";
    return std::nullopt;
  };
  if (auto p = try_path(ref)) return *p;
  if (const char* root = std::getenv("GSR_DATA_DIR"); root != nullptr && *root != '\0') {
    if (auto p = try_path(fs::path(root) / ref)) return *p;
  }
  throw DataError(ref, "dataset not found (checked path and $GSR_DATA_DIR)");
}

MatrixX row_normalize(MatrixX x) {
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double s = x.row(r).cwiseAbs().sum();
    if (s > 0) x.row(r) /= s;
  }
  return x;
}

Dataset load_dataset(const fs::path& manifest_path) {
  const DatasetManifest m = load_manifest(manifest_path);
  Dataset d;
  d.name = m.name;
  d.num_classes = m.num_classes;

  const auto pairs = load_edge_list(m.edges);
  for (auto [u, v] : pairs) {
    if (u < 0 || v < 0 || u >= m.num_nodes || v >= m.num_nodes) {
      throw DataError(m.edges, "edge (" + std::to_string(u) + ", " + std::to_string(v) +
                                   ") references a node outside [0, " +
                                   std::to_string(m.num_nodes) + ")");
    }
  }
  d.graph = Graph(m.num_nodes, std::span<const std::pair<NodeId, NodeId>>(pairs));

  const Eigen::MatrixXf features = load_any_matrix(m.features);
  if (features.rows() != m.num_nodes) {
    throw DataError(m.features, "feature rows " + std::to_string(features.rows()) +
                                    " != num_nodes " + std::to_string(m.num_nodes));
  }
  d.features = features.cast<double>();
  if (m.row_normalize_features) d.features = row_normalize(std::move(d.features));

  auto labels = load_labels(m.labels, m.num_nodes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= m.num_classes) {
      throw DataError(m.labels, "label " + std::to_string(labels[i]) + " of node " +
                                    std::to_string(i) + " out of range for " +
                                    std::to_string(m.num_classes) + " classes");
    }
  }
  d.split = load_split(m.split, std::move(labels));
  try {
    d.split.validate(m.num_nodes, m.num_classes);
  } catch (const GraphError& e) {
    throw DataError(m.split, e.what());
  }
  return d;
}

fs::path save_dataset(const fs::path& dir, const Dataset& data, bool binary_features) {
  fs::create_directories(dir);
  DatasetManifest m;
  m.name = data.name;
  m.num_nodes = data.graph.num_nodes();
  m.num_classes = data.num_classes;
  m.edges = dir / "edges.tsv";
  m.features = dir / (binary_features ? "features.gsrm" : "features.txt");
  m.labels = dir / "labels.tsv";
  m.split = dir / "split.txt";
  save_edge_list(m.edges, data.graph);
  const Eigen::MatrixXf f = data.features.cast<float>();
  if (binary_features) {
    save_matrix(m.features, f);
  } else {
    save_text_matrix(m.features, f);
  }
  save_labels(m.labels, data.split.labels);
  save_split(m.split, data.split);
  save_manifest(dir / "manifest.json", m);
  return dir / "manifest.json";
}

SbmSample generate_sbm(const SbmConfig& c) {
  auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob_ok(c.p_in) || !prob_ok(c.p_out)) {
    throw std::invalid_argument("generate_sbm: probabilities must lie in [0, 1]");
  }
  if (c.noise_edge_fraction < 0.0) throw std::invalid_argument("generate_sbm: negative noise fraction");
  if (c.block_sizes.empty()) throw std::invalid_argument("generate_sbm: no blocks");

  Rng rng(derive_seed({c.seed, 0x5b3ULL}));
  SbmSample s;
  for (std::size_t b = 0; b < c.block_sizes.size(); ++b) {
    s.blocks.insert(s.blocks.end(), c.block_sizes[b], static_cast<int>(b));
  }
  const auto n = static_cast<NodeId>(s.blocks.size());
  std::vector<Edge> edges;
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = u + 1; v < n; ++v) {
      const double p = s.blocks[u] == s.blocks[v] ? c.p_in : c.p_out;
      if (uniform_real(rng) < p) edges.emplace_back(u, v);
    }
  }

  const auto noise_count =
      static_cast<std::size_t>(std::llround(c.noise_edge_fraction * static_cast<double>(edges.size())));
  if (noise_count > 0) {
    std::vector<Edge> pool;
    std::vector<Edge> sorted = edges;
    std::sort(sorted.begin(), sorted.end());
    for (NodeId u = 0; u < n; ++u) {
      for (NodeId v = u + 1; v < n; ++v) {
        if (s.blocks[u] != s.blocks[v] && !std::binary_search(sorted.begin(), sorted.end(), Edge(u, v))) {
          pool.emplace_back(u, v);
        }
      }
    }
    if (noise_count > pool.size()) throw std::invalid_argument("generate_sbm: not enough cross-block pairs for noise");
    for (std::size_t i = 0; i < noise_count; ++i) {
      std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
      s.noise_edges.push_back(pool[i]);
      edges.push_back(pool[i]);
    }
    std::sort(s.noise_edges.begin(), s.noise_edges.end());
  }

  const int k = static_cast<int>(c.block_sizes.size());
  MatrixX means(k, c.feature_dim);
  for (Eigen::Index i = 0; i < means.size(); ++i) means.data()[i] = standard_normal(rng);
  MatrixX x(n, c.feature_dim);
  for (NodeId v = 0; v < n; ++v) {
    for (int d = 0; d < c.feature_dim; ++d) {
      x(v, d) = c.feature_signal * means(s.blocks[v], d) + standard_normal(rng);
    }
  }

  s.data.name = "sbm";
  s.data.graph = Graph(n, std::span<const Edge>(edges));
  s.data.features = std::move(x);
  s.data.num_classes = k;

  // Stratified 10/20/70 split.
  s.data.split.labels = s.blocks;
  for (int b = 0; b < k; ++b) {
    std::vector<NodeId> members;
    for (NodeId v = 0; v < n; ++v) {
      if (s.blocks[v] == b) members.push_back(v);
    }
    for (std::size_t i = members.size(); i > 1; --i) {
      std::swap(members[i - 1], members[uniform_index(rng, i)]);
    }
    const auto m = members.size();
    const auto n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * m)));
    const auto n_val = static_cast<std::size_t>(std::llround(0.2 * m));
    for (std::size_t i = 0; i < m; ++i) {
      auto& mask = i < n_train ? s.data.split.train
                   : i < n_train + n_val ? s.data.split.val
                                         : s.data.split.test;
      mask.push_back(members[i]);
    }
  }
  for (auto* mask : {&s.data.split.train, &s.data.split.val, &s.data.split.test}) {
    std::sort(mask->begin(), mask->end());
  }
  return s;
}

LabeledSplit export_split_by_ratio(std::span<const int> labels, double train_ratio,
                                   std::uint64_t seed) {
  if (!(train_ratio > 0.0) || train_ratio > 1.0) {
    throw std::invalid_argument("export_split_by_ratio: train_ratio must lie in (0, 1]");
  }
  int num_classes = 0;
  for (int l : labels) num_classes = std::max(num_classes, l + 1);
  std::vector<std::vector<NodeId>> by_class(num_classes);
  for (std::size_t v = 0; v < labels.size(); ++v) {
    if (labels[v] >= 0) by_class[labels[v]].push_back(static_cast<NodeId>(v));
  }
  std::size_t smallest = labels.size();
  for (const auto& members : by_class) {
    if (!members.empty()) smallest = std::min(smallest, members.size());
  }

  Rng rng(derive_seed({seed, 0x5411ULL}));
  LabeledSplit split;
  split.labels.assign(labels.begin(), labels.end());
  std::vector<NodeId> rest;
  for (int c = 0; c < num_classes; ++c) {
    auto members = by_class[c];
    if (members.empty()) continue;
    for (std::size_t i = members.size(); i > 1; --i) {
      std::swap(members[i - 1], members[uniform_index(rng, i)]);
    }
    const auto n_train = static_cast<std::size_t>(std::ceil(train_ratio * members.size() - 1e-9));
    if (n_train == 0) {
      throw std::invalid_argument("export_split_by_ratio: class " + std::to_string(c) +
                                  " gets no training nodes; use train_ratio >= " +
                                  std::to_string(1.0 / static_cast<double>(smallest)));
    }
    split.train.insert(split.train.end(), members.begin(), members.begin() + n_train);
    rest.insert(rest.end(), members.begin() + n_train, members.end());
  }
  for (std::size_t i = rest.size(); i > 1; --i) std::swap(rest[i - 1], rest[uniform_index(rng, i)]);
  const std::size_t n_val = rest.size() / 2;
  split.val.assign(rest.begin(), rest.begin() + n_val);
  split.test.assign(rest.begin() + n_val, rest.end());
  for (auto* mask : {&split.train, &split.val, &split.test}) std::sort(mask->begin(), mask->end());
  return split;
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t file_checksum(const fs::path& path) {
  auto in = open_in(path, true);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string s = buf.str();
  return fnv1a(s.data(), s.size());
}

}  // namespace gsr
