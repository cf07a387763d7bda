#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gsr/eigen_types.hpp"
#include "gsr/rng.hpp"

namespace gsr {

using NodeId = std::int32_t;

/// Undirected node pair stored with u < v.
struct Edge {
  NodeId u = 0;
  NodeId v = 0;

  Edge() = default;
  Edge(NodeId a, NodeId b) : u(a < b ? a : b), v(a < b ? b : a) {}

  friend auto operator<=>(const Edge&, const Edge&) = default;
};

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Simple undirected graph. Edges are unique, self-loop free and sorted;
/// neighbor lists hold both directions in CSR form and are sorted.
class Graph {
 public:
  Graph() = default;

  /// Builds from arbitrary pairs: self-loops are dropped, (u,v)/(v,u)
  /// duplicates collapse to one undirected edge.
  Graph(NodeId num_nodes, std::span<const std::pair<NodeId, NodeId>> pairs);
  Graph(NodeId num_nodes, std::span<const Edge> edges);

  NodeId num_nodes() const { return num_nodes_; }
  std::size_t num_edges() const { return edges_.size(); }
  const std::vector<Edge>& edges() const { return edges_; }

  std::span<const NodeId> neighbors(NodeId u) const {
    return {neighbors_.data() + offsets_[u], neighbors_.data() + offsets_[u + 1]};
  }
  std::size_t degree(NodeId u) const { return offsets_[u + 1] - offsets_[u]; }
  bool has_edge(NodeId a, NodeId b) const;

  friend bool operator==(const Graph& a, const Graph& b) {
    return a.num_nodes_ == b.num_nodes_ && a.edges_ == b.edges_;
  }

 private:
  void build(std::vector<Edge> edges);

  NodeId num_nodes_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::size_t> offsets_{0};
  std::vector<NodeId> neighbors_;
};

/// Labels plus disjoint train/validation/test node sets.
struct LabeledSplit {
  std::vector<int> labels;
  std::vector<NodeId> train;
  std::vector<NodeId> val;
  std::vector<NodeId> test;

  int num_classes() const;
  /// Throws if masks overlap or reference unlabeled/out-of-range nodes.
  void validate(NodeId num_nodes, int num_classes) const;
};

struct ScoredEdge {
  Edge edge;
  double score = 0.0;

  friend bool operator==(const ScoredEdge&, const ScoredEdge&) = default;
};

/// Edges to add (non-edges, score descending) and remove (edges, score
/// ascending). Ties are broken by (u, v) ascending.
struct RefinementPlan {
  std::vector<ScoredEdge> add;
  std::vector<ScoredEdge> remove;

  bool empty() const { return add.empty() && remove.empty(); }
  friend bool operator==(const RefinementPlan&, const RefinementPlan&) = default;
};

/// D^{-1/2} (A + I) D^{-1/2} with D the degree matrix of A + I.
template <typename Scalar = Real>
SparseMatrix<Scalar> normalize_adjacency(const Graph& g) {
  const NodeId n = g.num_nodes();
  std::vector<Scalar> inv_sqrt(n);
  for (NodeId i = 0; i < n; ++i) {
    inv_sqrt[i] = Scalar(1) / std::sqrt(static_cast<Scalar>(g.degree(i) + 1));
  }
  std::vector<Eigen::Triplet<Scalar>> triplets;
  triplets.reserve(2 * g.num_edges() + n);
  for (NodeId i = 0; i < n; ++i) {
    triplets.emplace_back(i, i, inv_sqrt[i] * inv_sqrt[i]);
    for (NodeId j : g.neighbors(i)) triplets.emplace_back(i, j, inv_sqrt[i] * inv_sqrt[j]);
  }
  SparseMatrix<Scalar> adj(n, n);
  adj.setFromTriplets(triplets.begin(), triplets.end());
  adj.makeCompressed();
  return adj;
}

using NormalizedAdjacency = SparseMatrix<Real>;

struct HomophilyResult {
  double ratio = 0.0;
  // Set when the graph has no edges; ratio is then reported as 0.
  bool no_edges = false;
};

HomophilyResult homophily_ratio(const Graph& g, std::span<const int> labels);

/// (E \ remove) ∪ add. Throws GraphError if an added pair already exists,
/// a removed pair is missing, or a pair is out of range / a self-loop.
Graph apply_refinement(const Graph& g, const RefinementPlan& plan);

/// Plan that undoes `plan` when applied to apply_refinement(g, plan).
RefinementPlan inverse_plan(const RefinementPlan& plan);

struct Subgraph {
  // Global ids of the selected nodes; nodes[center_index] is the center.
  std::vector<NodeId> nodes;
  Graph graph;
  NodeId center_index = 0;
};

/// Induced subgraph over a sampled r-hop neighborhood. Each frontier node
/// contributes at most `fanout` unseen neighbors, drawn without replacement.
Subgraph ego_subgraph(const Graph& g, NodeId center, int radius, int fanout, Rng& rng);

/// Rows of `x` selected by `nodes`, in order.
template <typename Scalar>
Matrix<Scalar> gather_rows(const Matrix<Scalar>& x, std::span<const NodeId> nodes) {
  Matrix<Scalar> out(static_cast<Eigen::Index>(nodes.size()), x.cols());
  for (std::size_t i = 0; i < nodes.size(); ++i) out.row(i) = x.row(nodes[i]);
  return out;
}

}  // namespace gsr
