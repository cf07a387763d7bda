#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gsr/graph.hpp"
#include "gsr/pretrain.hpp"

namespace gsr {

/// Per-view node embeddings used for edge scoring; rows unit-norm.
struct ViewEmbeddings {
  std::vector<std::string> names;
  std::vector<MatrixX> matrices;

  std::size_t size() const { return matrices.size(); }
  NodeId num_nodes() const { return matrices.empty() ? 0 : static_cast<NodeId>(matrices[0].rows()); }
};

enum class NormMode { kMinMax, kRank };
enum class CandidateStrategy { kAllPairs, kTopK };

const char* to_string(NormMode mode);
const char* to_string(CandidateStrategy strategy);
NormMode parse_norm_mode(const std::string& s);
CandidateStrategy parse_candidate_strategy(const std::string& s);

struct RefineConfig {
  // One weight per view, summing to 1.
  std::vector<double> beta{0.5, 0.5};
  NormMode norm_mode = NormMode::kMinMax;
  CandidateStrategy candidates = CandidateStrategy::kAllPairs;
  int topk = 100;
  std::size_t m_plus = 0;
  std::size_t m_minus = 0;

  /// Two-view weights (β_F, 1 − β_F).
  static std::vector<double> two_view_beta(double beta_feature) { return {beta_feature, 1.0 - beta_feature}; }

  /// Checks weights against `num_views` and removal count against the graph.
  void validate(std::size_t num_views, std::size_t num_edges) const;
};

/// All-pairs up to 10k nodes, per-node top-k above.
CandidateStrategy default_candidate_strategy(NodeId num_nodes);

/// Query-encoder embeddings over the full graph, one matrix per view.
ViewEmbeddings embed_all_nodes(const PretrainState& state, const PretrainInputs& inputs);

struct CandidateSet {
  std::vector<Edge> pairs;  // sorted, unique, superset of the graph's edges
  bool fell_back_to_all_pairs = false;
};

CandidateSet build_candidates(const ViewEmbeddings& z, const RefineConfig& config, const Graph& g);

/// Scored pairs in struct-of-arrays form, aligned by index.
struct EdgeScores {
  std::vector<std::string> view_names;
  std::vector<Edge> pairs;
  std::vector<std::vector<double>> view_scores;  // normalized, per view
  std::vector<double> combined;
  std::vector<unsigned char> is_edge;
  std::vector<bool> degenerate;  // per view: minmax with max == min
  NormMode norm_mode = NormMode::kMinMax;
  std::vector<std::string> warnings;

  std::size_t size() const { return pairs.size(); }
};

/// E_ij = Σ_φ β_φ Norm_φ(cos(z_i^φ, z_j^φ)) over the candidate set.
EdgeScores score_pairs(const ViewEmbeddings& z, const RefineConfig& config, const Graph& g);
EdgeScores score_pairs(const ViewEmbeddings& z, const RefineConfig& config, const Graph& g,
                       const CandidateSet& candidates);

/// Normalizes raw scores in place; returns false when degenerate.
bool normalize_scores(std::vector<double>& scores, NormMode mode);

/// Top-m⁺ non-edges by E descending, bottom-m⁻ edges by E ascending; ties by (u, v).
RefinementPlan select_refinement(const EdgeScores& scores, const Graph& g, std::size_t m_plus,
                                 std::size_t m_minus);

/// Plan diff: one "+ u v score" or "- u v score" line per edit.
void save_plan(const std::filesystem::path& path, const RefinementPlan& plan);
RefinementPlan load_plan(const std::filesystem::path& path);

/// Tab-separated audit table: u, v, score_<view>..., E, is_edge.
void save_score_table(const std::filesystem::path& path, const EdgeScores& scores);

}  // namespace gsr
