#include "gsr/graph.hpp"

#include <algorithm>
#include <unordered_set>

namespace gsr {

Graph::Graph(NodeId num_nodes, std::span<const std::pair<NodeId, NodeId>> pairs)
    : num_nodes_(num_nodes) {
  std::vector<Edge> edges;
  edges.reserve(pairs.size());
  for (auto [a, b] : pairs) {
    if (a == b) continue;
    edges.emplace_back(a, b);
  }
  build(std::move(edges));
}

Graph::Graph(NodeId num_nodes, std::span<const Edge> edges) : num_nodes_(num_nodes) {
  std::vector<Edge> copy;
  copy.reserve(edges.size());
  for (const Edge& e : edges) {
    if (e.u == e.v) continue;
    copy.emplace_back(e.u, e.v);
  }
  build(std::move(copy));
}

void Graph::build(std::vector<Edge> edges) {
  if (num_nodes_ < 0) throw GraphError("negative node count");
  for (const Edge& e : edges) {
    if (e.u < 0 || e.v >= num_nodes_) {
      throw GraphError("edge (" + std::to_string(e.u) + ", " + std::to_string(e.v) +
                       ") out of range for " + std::to_string(num_nodes_) + " nodes");
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  edges_ = std::move(edges);

  std::vector<std::size_t> degree(num_nodes_, 0);
  for (const Edge& e : edges_) {
    ++degree[e.u];
    ++degree[e.v];
  }
  offsets_.assign(num_nodes_ + 1, 0);
  for (NodeId i = 0; i < num_nodes_; ++i) offsets_[i + 1] = offsets_[i] + degree[i];
  neighbors_.assign(offsets_.back(), 0);
  std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
  for (const Edge& e : edges_) {
    neighbors_[cursor[e.u]++] = e.v;
    neighbors_[cursor[e.v]++] = e.u;
  }
  for (NodeId i = 0; i < num_nodes_; ++i) {
    std::sort(neighbors_.begin() + offsets_[i], neighbors_.begin() + offsets_[i + 1]);
  }
}

bool Graph::has_edge(NodeId a, NodeId b) const {
  if (a < 0 || b < 0 || a >= num_nodes_ || b >= num_nodes_ || a == b) return false;
  auto nb = neighbors(a);
  return std::binary_search(nb.begin(), nb.end(), b);
}

int LabeledSplit::num_classes() const {
  int c = 0;
  for (int l : labels) c = std::max(c, l + 1);
  return c;
}

void LabeledSplit::validate(NodeId num_nodes, int num_classes) const {
  if (static_cast<NodeId>(labels.size()) != num_nodes) {
    throw GraphError("label count " + std::to_string(labels.size()) + " != node count " +
                     std::to_string(num_nodes));
  }
  std::vector<int> owner(num_nodes, -1);
  const std::vector<NodeId>* masks[] = {&train, &val, &test};
  const char* names[] = {"train", "val", "test"};
  for (int m = 0; m < 3; ++m) {
    for (NodeId v : *masks[m]) {
      if (v < 0 || v >= num_nodes) {
        throw GraphError(std::string(names[m]) + " mask node " + std::to_string(v) +
                         " out of range");
      }
      if (owner[v] != -1) {
        throw GraphError("node " + std::to_string(v) + " appears in both " + names[owner[v]] +
                         " and " + names[m] + " masks");
      }
      owner[v] = m;
      if (labels[v] < 0 || labels[v] >= num_classes) {
        throw GraphError(std::string(names[m]) + " node " + std::to_string(v) +
                         " has invalid label " + std::to_string(labels[v]));
      }
    }
  }
}

HomophilyResult homophily_ratio(const Graph& g, std::span<const int> labels) {
  if (static_cast<NodeId>(labels.size()) != g.num_nodes()) {
    throw GraphError("homophily_ratio: label count does not match node count");
  }
  if (g.num_edges() == 0) return {0.0, true};
  std::size_t same = 0;
  for (const Edge& e : g.edges()) {
    if (labels[e.u] == labels[e.v]) ++same;
  }
  return {static_cast<double>(same) / static_cast<double>(g.num_edges()), false};
}

namespace {

std::string describe(const Edge& e) {
  return "(" + std::to_string(e.u) + ", " + std::to_string(e.v) + ")";
}

}  // namespace

Graph apply_refinement(const Graph& g, const RefinementPlan& plan) {
  std::vector<Edge> removed;
  removed.reserve(plan.remove.size());
  for (const ScoredEdge& s : plan.remove) {
    if (!g.has_edge(s.edge.u, s.edge.v)) {
      throw GraphError("refinement removes " + describe(s.edge) + " which is not an edge");
    }
    removed.push_back(s.edge);
  }
  std::sort(removed.begin(), removed.end());
  if (std::adjacent_find(removed.begin(), removed.end()) != removed.end()) {
    throw GraphError("refinement removes the same edge twice");
  }

  std::vector<Edge> result;
  result.reserve(g.num_edges() + plan.add.size());
  std::set_difference(g.edges().begin(), g.edges().end(), removed.begin(), removed.end(),
                      std::back_inserter(result));
  const std::size_t kept = result.size();
  for (const ScoredEdge& s : plan.add) {
    const Edge& e = s.edge;
    if (e.u == e.v || e.u < 0 || e.v >= g.num_nodes()) {
      throw GraphError("refinement adds invalid pair " + describe(e));
    }
    if (g.has_edge(e.u, e.v)) {
      throw GraphError("refinement adds " + describe(e) + " which is already an edge");
    }
    result.push_back(e);
  }
  Graph out(g.num_nodes(), std::span<const Edge>(result));
  if (out.num_edges() != kept + plan.add.size()) {
    throw GraphError("refinement adds the same pair twice");
  }
  return out;
}

RefinementPlan inverse_plan(const RefinementPlan& plan) {
  return RefinementPlan{plan.remove, plan.add};
}

Subgraph ego_subgraph(const Graph& g, NodeId center, int radius, int fanout, Rng& rng) {
  if (radius < 1) throw GraphError("ego_subgraph: radius must be >= 1");
  if (fanout < 1) throw GraphError("ego_subgraph: fanout must be >= 1");
  if (center < 0 || center >= g.num_nodes()) throw GraphError("ego_subgraph: bad center");

  std::vector<NodeId> selected{center};
  std::unordered_set<NodeId> seen{center};
  std::vector<NodeId> frontier{center};
  std::vector<NodeId> pool;
  for (int hop = 0; hop < radius && !frontier.empty(); ++hop) {
    std::vector<NodeId> next;
    for (NodeId u : frontier) {
      pool.clear();
      for (NodeId w : g.neighbors(u)) {
        if (!seen.contains(w)) pool.push_back(w);
      }
      const std::size_t take = std::min<std::size_t>(pool.size(), fanout);
      // Partial Fisher-Yates: the first `take` slots become the sample.
      for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + uniform_index(rng, pool.size() - i);
        std::swap(pool[i], pool[j]);
        seen.insert(pool[i]);
        selected.push_back(pool[i]);
        next.push_back(pool[i]);
      }
    }
    frontier = std::move(next);
  }

  std::vector<Edge> edges;
  // Map global -> local through a sorted copy.
  std::vector<std::pair<NodeId, NodeId>> index;
  index.reserve(selected.size());
  for (std::size_t i = 0; i < selected.size(); ++i) index.emplace_back(selected[i], i);
  std::sort(index.begin(), index.end());
  auto lookup = [&](NodeId global) -> NodeId {
    auto it = std::lower_bound(index.begin(), index.end(), std::pair<NodeId, NodeId>{global, -1});
    return (it != index.end() && it->first == global) ? it->second : -1;
  };
  for (std::size_t i = 0; i < selected.size(); ++i) {
    for (NodeId w : g.neighbors(selected[i])) {
      const NodeId j = lookup(w);
      if (j > static_cast<NodeId>(i)) edges.emplace_back(static_cast<NodeId>(i), j);
    }
  }
  Subgraph sub;
  sub.nodes = std::move(selected);
  sub.graph = Graph(static_cast<NodeId>(sub.nodes.size()), std::span<const Edge>(edges));
  sub.center_index = 0;
  return sub;
}

}  // namespace gsr
