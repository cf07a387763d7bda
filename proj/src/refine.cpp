#include "gsr/refine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "gsr/data_io.hpp"

namespace gsr {

const char* to_string(NormMode mode) { return mode == NormMode::kMinMax ? "minmax" : "rank"; }

const char* to_string(CandidateStrategy strategy) {
  return strategy == CandidateStrategy::kAllPairs ? "all-pairs" : "topk";
}

NormMode parse_norm_mode(const std::string& s) {
  if (s == "minmax") return NormMode::kMinMax;
  if (s == "rank") return NormMode::kRank;
  throw std::invalid_argument("unknown norm mode '" + s + "' (expected minmax or rank)");
}

CandidateStrategy parse_candidate_strategy(const std::string& s) {
  if (s == "all-pairs") return CandidateStrategy::kAllPairs;
  if (s == "topk") return CandidateStrategy::kTopK;
  throw std::invalid_argument("unknown candidate strategy '" + s + "' (expected all-pairs or topk)");
}

void RefineConfig::validate(std::size_t num_views, std::size_t num_edges) const {
  if (beta.size() != num_views) {
    throw std::invalid_argument("refine config: " + std::to_string(beta.size()) + " view weights for " +
                                std::to_string(num_views) + " views");
  }
  double total = 0.0;
  for (double b : beta) {
    if (!(b >= 0.0 && b <= 1.0)) throw std::invalid_argument("refine config: view weights must lie in [0, 1]");
    total += b;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("refine config: view weights must sum to 1");
  if (topk < 1) throw std::invalid_argument("refine config: topk must be >= 1");
  if (m_minus > num_edges) {
    throw std::invalid_argument("refine config: m_minus=" + std::to_string(m_minus) + " exceeds |E|=" +
                                std::to_string(num_edges));
  }
}

CandidateStrategy default_candidate_strategy(NodeId num_nodes) {
  return num_nodes <= 10000 ? CandidateStrategy::kAllPairs : CandidateStrategy::kTopK;
}

ViewEmbeddings embed_all_nodes(const PretrainState& state, const PretrainInputs& inputs) {
  const auto& views = *inputs.views;
  if (views.size() != state.num_views()) {
    throw ShapeError("checkpoint has " + std::to_string(state.num_views()) + " views; inputs have " +
                     std::to_string(views.size()));
  }
  ViewEmbeddings out;
  out.names = views.names;
  for (std::size_t v = 0; v < views.size(); ++v) {
    const auto& p = state.query[v];
    if (p.layer1.in_dim() != views.matrices[v].cols()) {
      throw ShapeError("checkpoint/view dimension mismatch for view '" + views.names[v] + "': encoder expects " +
                       std::to_string(p.layer1.in_dim()) + " columns, view has " +
                       std::to_string(views.matrices[v].cols()));
    }
    out.matrices.push_back(normalized_rows(gcn_forward(p, inputs.adjacency, views.matrices[v])));
  }
  return out;
}

namespace {

void check_embeddings(const ViewEmbeddings& z, const Graph& g) {
  if (z.size() == 0) throw std::invalid_argument("no view embeddings");
  for (std::size_t v = 0; v < z.size(); ++v) {
    if (z.matrices[v].rows() != g.num_nodes()) {
      throw ShapeError("embedding rows differ from node count for view " + std::to_string(v));
    }
  }
}

// Column-major transposes so each node's embedding is contiguous.
struct CosineTable {
  MatrixX zt;
  VectorX inv_norm;

  explicit CosineTable(const MatrixX& z) : zt(z.transpose()), inv_norm(z.rows()) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double n = zt.col(i).norm();
      inv_norm(i) = n > 0.0 ? 1.0 / n : 0.0;
    }
  }

  double operator()(NodeId a, NodeId b) const {
    return zt.col(a).dot(zt.col(b)) * inv_norm(a) * inv_norm(b);
  }
};

std::vector<Edge> all_pairs(NodeId n) {
  std::vector<Edge> out;
  out.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(std::max(n - 1, 0)) / 2);
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = u + 1; v < n; ++v) out.emplace_back(u, v);
  }
  return out;
}

}  // namespace

CandidateSet build_candidates(const ViewEmbeddings& z, const RefineConfig& config, const Graph& g) {
  check_embeddings(z, g);
  const NodeId n = g.num_nodes();
  CandidateSet out;
  if (config.candidates == CandidateStrategy::kAllPairs || config.topk >= n) {
    out.fell_back_to_all_pairs = config.candidates == CandidateStrategy::kTopK;
    out.pairs = all_pairs(n);
    return out;
  }
  const std::size_t k = static_cast<std::size_t>(config.topk);
  std::vector<Edge> pairs(g.edges().begin(), g.edges().end());
  std::vector<std::pair<double, NodeId>> sims;
  for (const auto& m : z.matrices) {
    const CosineTable cos(m);
    for (NodeId i = 0; i < n; ++i) {
      sims.clear();
      for (NodeId j = 0; j < n; ++j) {
        if (j != i) sims.emplace_back(cos(i, j), j);
      }
      auto by_sim = [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
      };
      std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(k), sims.end(), by_sim);
      for (std::size_t r = 0; r < k; ++r) pairs.emplace_back(i, sims[r].second);
    }
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  out.pairs = std::move(pairs);
  return out;
}

bool normalize_scores(std::vector<double>& scores, NormMode mode) {
  if (scores.empty()) return true;
  if (mode == NormMode::kMinMax) {
    const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
    const double min = *lo;
    const double range = *hi - *lo;
    if (!(range > 0.0)) {
      std::fill(scores.begin(), scores.end(), 0.5);
      return false;
    }
    for (double& s : scores) s = (s - min) / range;
    return true;
  }
  if (scores.size() == 1) {
    scores[0] = 0.5;
    return false;
  }
  // Tied scores share their mean rank.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> ranked(scores.size());
  const double denom = static_cast<double>(scores.size() - 1);
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j);
    for (std::size_t r = i; r <= j; ++r) ranked[order[r]] = rank / denom;
    i = j + 1;
  }
  scores = std::move(ranked);
  return true;
}

EdgeScores score_pairs(const ViewEmbeddings& z, const RefineConfig& config, const Graph& g) {
  return score_pairs(z, config, g, build_candidates(z, config, g));
}

EdgeScores score_pairs(const ViewEmbeddings& z, const RefineConfig& config, const Graph& g,
                       const CandidateSet& candidates) {
  check_embeddings(z, g);
  config.validate(z.size(), g.num_edges());
  EdgeScores out;
  out.view_names = z.names;
  out.norm_mode = config.norm_mode;
  out.pairs = candidates.pairs;
  if (candidates.fell_back_to_all_pairs) {
    out.warnings.push_back("topk=" + std::to_string(config.topk) + " >= num_nodes; using all pairs");
  }
  const std::size_t count = out.pairs.size();
  out.is_edge.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (out.pairs[i].u == out.pairs[i].v) throw std::invalid_argument("candidate set contains a self pair");
    out.is_edge[i] = g.has_edge(out.pairs[i].u, out.pairs[i].v) ? 1 : 0;
  }
  out.combined.assign(count, 0.0);
  for (std::size_t v = 0; v < z.size(); ++v) {
    const CosineTable cos(z.matrices[v]);
    std::vector<double> s(count);
    for (std::size_t i = 0; i < count; ++i) s[i] = cos(out.pairs[i].u, out.pairs[i].v);
    const bool ok = normalize_scores(s, config.norm_mode);
    out.degenerate.push_back(!ok);
    if (!ok) {
      const std::string name = v < z.names.size() ? z.names[v] : std::to_string(v);
      out.warnings.push_back("view '" + name + "': all scores equal; normalized to 0.5");
    }
    for (std::size_t i = 0; i < count; ++i) out.combined[i] += config.beta[v] * s[i];
    out.view_scores.push_back(std::move(s));
  }
  return out;
}

RefinementPlan select_refinement(const EdgeScores& scores, const Graph& g, std::size_t m_plus,
                                 std::size_t m_minus) {
  if (m_minus > g.num_edges()) {
    throw std::invalid_argument("m_minus=" + std::to_string(m_minus) + " exceeds |E|=" +
                                std::to_string(g.num_edges()));
  }
  std::vector<std::size_t> non_edges;
  std::vector<std::size_t> edges;
  for (std::size_t i = 0; i < scores.size(); ++i) (scores.is_edge[i] ? edges : non_edges).push_back(i);
  if (m_plus > non_edges.size()) {
    throw std::invalid_argument("m_plus=" + std::to_string(m_plus) + " exceeds the " +
                                std::to_string(non_edges.size()) + " scored non-edges");
  }
  if (edges.size() != g.num_edges()) {
    throw std::invalid_argument("scored set does not cover every edge of the graph");
  }
  const auto& e = scores.combined;
  const auto& p = scores.pairs;
  auto desc = [&](std::size_t a, std::size_t b) { return e[a] != e[b] ? e[a] > e[b] : p[a] < p[b]; };
  auto asc = [&](std::size_t a, std::size_t b) { return e[a] != e[b] ? e[a] < e[b] : p[a] < p[b]; };
  std::partial_sort(non_edges.begin(), non_edges.begin() + static_cast<std::ptrdiff_t>(m_plus), non_edges.end(), desc);
  std::partial_sort(edges.begin(), edges.begin() + static_cast<std::ptrdiff_t>(m_minus), edges.end(), asc);
  RefinementPlan plan;
  for (std::size_t i = 0; i < m_plus; ++i) plan.add.push_back({p[non_edges[i]], e[non_edges[i]]});
  for (std::size_t i = 0; i < m_minus; ++i) plan.remove.push_back({p[edges[i]], e[edges[i]]});
  return plan;
}

void save_plan(const std::filesystem::path& path, const RefinementPlan& plan) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(path, "cannot open for writing");
  out.precision(17);
  for (const auto& s : plan.add) out << "+ " << s.edge.u << ' ' << s.edge.v << ' ' << s.score << '\n';
  for (const auto& s : plan.remove) out << "- " << s.edge.u << ' ' << s.edge.v << ' ' << s.score << '\n';
  if (!out) throw DataError(path, "write failed");
}

RefinementPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path, "cannot open");
  RefinementPlan plan;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    char sign = 0;
    long long u = 0;
    long long v = 0;
    double score = 0.0;
    std::string extra;
    if (!(ss >> sign >> u >> v >> score) || (ss >> extra) || (sign != '+' && sign != '-') || u < 0 || v < 0) {
      throw DataError(path, "line " + std::to_string(lineno) + ": expected '+|- u v score'");
    }
    ScoredEdge s{Edge(static_cast<NodeId>(u), static_cast<NodeId>(v)), score};
    (sign == '+' ? plan.add : plan.remove).push_back(s);
  }
  return plan;
}

void save_score_table(const std::filesystem::path& path, const EdgeScores& scores) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(path, "cannot open for writing");
  out << "u\tv";
  for (const auto& name : scores.view_names) out << "\tscore_" << name;
  out << "\tE\tis_edge\n";
  out.precision(10);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out << scores.pairs[i].u << '\t' << scores.pairs[i].v;
    for (const auto& s : scores.view_scores) out << '\t' << s[i];
    out << '\t' << scores.combined[i] << '\t' << int(scores.is_edge[i]) << '\n';
  }
  if (!out) throw DataError(path, "write failed");
}

}  // namespace gsr
