#include <doctest.h>

#include <algorithm>
#include <deque>
#include <map>
#include <numeric>
#include <set>

#include "gsr/graph.hpp"
#include "support.hpp"

using namespace gsr;
using gsr::test::random_graph;

TEST_CASE("graph construction canonicalizes edges") {
  const std::vector<std::pair<NodeId, NodeId>> raw{{2, 1}, {1, 2}, {0, 0}, {0, 3}, {3, 0}, {1, 3}};
  const Graph g(4, raw);
  CHECK(g.num_edges() == 3);
  const std::vector<Edge> expected{{0, 3}, {1, 2}, {1, 3}};
  CHECK(std::vector<Edge>(g.edges().begin(), g.edges().end()) == expected);
  CHECK_FALSE(g.has_edge(0, 0));
  CHECK(g.has_edge(3, 0));
  CHECK(g.degree(3) == 2);
}

TEST_CASE("graph rejects out-of-range endpoints") {
  const std::vector<std::pair<NodeId, NodeId>> raw{{0, 5}};
  CHECK_THROWS_AS(Graph(3, raw), GraphError);
}

TEST_CASE("neighbor lists are sorted and symmetric") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Graph g = random_graph(25, 0.2, seed);
    std::size_t total = 0;
    for (NodeId u = 0; u < g.num_nodes(); ++u) {
      const auto nb = g.neighbors(u);
      CHECK(std::is_sorted(nb.begin(), nb.end()));
      total += nb.size();
      for (NodeId v : nb) {
        const auto back = g.neighbors(v);
        CHECK(std::binary_search(back.begin(), back.end(), u));
      }
    }
    CHECK(total == 2 * g.num_edges());
  }
}

TEST_CASE("normalize_adjacency on small graphs") {
  SUBCASE("single node") {
    const Graph g(1, std::vector<std::pair<NodeId, NodeId>>{});
    const MatrixX a = MatrixX(normalize_adjacency(g));
    CHECK(a(0, 0) == doctest::Approx(1.0));
  }
  SUBCASE("single edge") {
    const Graph g(2, std::vector<std::pair<NodeId, NodeId>>{{0, 1}});
    const MatrixX a = MatrixX(normalize_adjacency(g));
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) CHECK(a(i, j) == doctest::Approx(0.5));
    }
  }
  SUBCASE("path 0-1-2") {
    const Graph g(3, std::vector<std::pair<NodeId, NodeId>>{{0, 1}, {1, 2}});
    const MatrixX a = MatrixX(normalize_adjacency(g));
    CHECK(std::abs(a(0, 1) - 1.0 / std::sqrt(6.0)) < 1e-15);
    CHECK((a - test::dense_normalized(g)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("normalize_adjacency equals the dense formula and is symmetric") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const NodeId n = static_cast<NodeId>(5 + 10 * seed);
    const Graph g = random_graph(n, 0.15, 100 + seed);
    const MatrixX a = MatrixX(normalize_adjacency(g));
    CHECK((a - test::dense_normalized(g)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((a - a.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("homophily ratio") {
  const Graph same(4, std::vector<std::pair<NodeId, NodeId>>{{0, 1}, {2, 3}});
  const std::vector<int> labels{0, 0, 1, 1};
  CHECK(homophily_ratio(same, labels).ratio == 1.0);

  const Graph cross(4, std::vector<std::pair<NodeId, NodeId>>{{0, 2}, {1, 3}, {0, 3}});
  CHECK(homophily_ratio(cross, labels).ratio == 0.0);

  const Graph empty(3, std::vector<std::pair<NodeId, NodeId>>{});
  const auto r = homophily_ratio(empty, std::vector<int>{0, 1, 0});
  CHECK(r.ratio == 0.0);
  CHECK(r.no_edges);
}

TEST_CASE("homophily ratio matches edge enumeration and ignores class names") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Graph g = random_graph(20, 0.25, seed);
    Rng rng(seed);
    std::vector<int> labels(20);
    for (int& l : labels) l = static_cast<int>(uniform_index(rng, 3));
    std::size_t same = 0;
    for (NodeId u = 0; u < 20; ++u) {
      for (NodeId v = u + 1; v < 20; ++v) {
        if (g.has_edge(u, v) && labels[u] == labels[v]) ++same;
      }
    }
    const double expected = static_cast<double>(same) / static_cast<double>(g.num_edges());
    CHECK(homophily_ratio(g, labels).ratio == doctest::Approx(expected).epsilon(1e-15));
    std::vector<int> permuted(labels);
    for (int& l : permuted) l = (l + 1) % 3;
    CHECK(homophily_ratio(g, permuted).ratio == homophily_ratio(g, labels).ratio);
  }
}

TEST_CASE("apply_refinement") {
  const Graph path(3, std::vector<std::pair<NodeId, NodeId>>{{0, 1}, {1, 2}});
  SUBCASE("empty plan is identity") { CHECK(apply_refinement(path, {}) == path); }
  SUBCASE("closing the triangle") {
    RefinementPlan plan;
    plan.add.push_back({Edge(2, 0), 0.9});
    const Graph t = apply_refinement(path, plan);
    CHECK(t.num_edges() == 3);
    CHECK(t.has_edge(0, 2));
  }
  SUBCASE("inconsistent plans are rejected") {
    RefinementPlan add_existing;
    add_existing.add.push_back({Edge(0, 1), 1.0});
    CHECK_THROWS_AS(apply_refinement(path, add_existing), GraphError);
    RefinementPlan remove_missing;
    remove_missing.remove.push_back({Edge(0, 2), 0.0});
    CHECK_THROWS_AS(apply_refinement(path, remove_missing), GraphError);
    RefinementPlan self_pair;
    self_pair.add.push_back({Edge(1, 1), 0.0});
    CHECK_THROWS_AS(apply_refinement(path, self_pair), GraphError);
  }
}

TEST_CASE("apply_refinement matches set algebra and inverts exactly") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Graph g = random_graph(30, 0.1, 7 + seed);
    Rng rng(seed);
    RefinementPlan plan;
    auto edges = test::edge_set(g);
    for (const Edge& e : g.edges()) {
      if (uniform_real(rng) < 0.3) plan.remove.push_back({e, uniform_real(rng)});
    }
    for (NodeId u = 0; u < 30; ++u) {
      for (NodeId v = u + 1; v < 30; ++v) {
        if (!g.has_edge(u, v) && uniform_real(rng) < 0.05) plan.add.push_back({Edge(u, v), uniform_real(rng)});
      }
    }
    for (const auto& s : plan.remove) edges.erase({s.edge.u, s.edge.v});
    for (const auto& s : plan.add) edges.insert({s.edge.u, s.edge.v});

    const Graph refined = apply_refinement(g, plan);
    CHECK(test::edge_set(refined) == edges);
    CHECK(refined.num_edges() == g.num_edges() + plan.add.size() - plan.remove.size());
    CHECK(apply_refinement(refined, inverse_plan(plan)) == g);
  }
}

namespace {

// Reference traversal: sampling without replacement by "take slot j, move
// the first remaining element into it, drop the first".
std::vector<NodeId> reference_ego_nodes(const Graph& g, NodeId center, int radius, int fanout, Rng& rng) {
  std::vector<NodeId> order{center};
  std::set<NodeId> seen{center};
  std::deque<NodeId> frontier{center};
  for (int hop = 0; hop < radius; ++hop) {
    std::deque<NodeId> next;
    for (NodeId u : frontier) {
      std::vector<NodeId> remaining;
      for (NodeId w : g.neighbors(u)) {
        if (!seen.count(w)) remaining.push_back(w);
      }
      const std::size_t take = std::min<std::size_t>(remaining.size(), static_cast<std::size_t>(fanout));
      for (std::size_t t = 0; t < take; ++t) {
        const std::size_t j = uniform_index(rng, remaining.size());
        const NodeId chosen = remaining[j];
        remaining[j] = remaining[0];
        remaining.erase(remaining.begin());
        seen.insert(chosen);
        order.push_back(chosen);
        next.push_back(chosen);
      }
    }
    frontier = std::move(next);
  }
  return order;
}

}  // namespace

TEST_CASE("ego_subgraph") {
  SUBCASE("isolated center is a singleton") {
    const Graph g(3, std::vector<std::pair<NodeId, NodeId>>{{0, 1}});
    Rng rng(1);
    const Subgraph s = ego_subgraph(g, 2, 2, 5, rng);
    CHECK(s.nodes == std::vector<NodeId>{2});
    CHECK(s.graph.num_edges() == 0);
  }
  SUBCASE("star with large fanout is the full star") {
    std::vector<std::pair<NodeId, NodeId>> e;
    for (NodeId leaf = 1; leaf <= 6; ++leaf) e.emplace_back(0, leaf);
    const Graph star(7, e);
    Rng rng(2);
    const Subgraph s = ego_subgraph(star, 0, 1, 10, rng);
    CHECK(s.nodes.size() == 7);
    CHECK(s.graph.num_edges() == 6);
    CHECK(s.nodes[s.center_index] == 0);
  }
  SUBCASE("replays a reference traversal with the same draws") {
    const Graph g = random_graph(10, 0.4, 11);
    for (NodeId center = 0; center < 10; ++center) {
      Rng a(99 + center);
      Rng b(99 + center);
      const Subgraph s = ego_subgraph(g, center, 2, 2, a);
      CHECK(s.nodes == reference_ego_nodes(g, center, 2, 2, b));
    }
  }
}

TEST_CASE("ego_subgraph properties") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Graph g = random_graph(40, 0.1, seed);
    const NodeId center = static_cast<NodeId>(seed % 40);
    Rng a(seed);
    Rng b(seed);
    const Subgraph s = ego_subgraph(g, center, 2, 3, a);
    const Subgraph t = ego_subgraph(g, center, 2, 3, b);
    CHECK(s.nodes == t.nodes);
    CHECK(s.graph == t.graph);
    CHECK(s.nodes.size() <= 1 + 3 + 9);
    CHECK(s.nodes[0] == center);
    // Induced: every original edge among selected nodes is present and vice versa.
    for (std::size_t i = 0; i < s.nodes.size(); ++i) {
      for (std::size_t j = i + 1; j < s.nodes.size(); ++j) {
        CHECK(g.has_edge(s.nodes[i], s.nodes[j]) ==
              s.graph.has_edge(static_cast<NodeId>(i), static_cast<NodeId>(j)));
      }
    }
  }
}

TEST_CASE("labeled split validation") {
  LabeledSplit s;
  s.labels = {0, 1, 0, 1};
  s.train = {0, 1};
  s.val = {2};
  s.test = {3};
  CHECK_NOTHROW(s.validate(4, 2));
  s.test = {2};
  CHECK_THROWS_AS(s.validate(4, 2), GraphError);
  s.test = {3};
  s.labels[3] = 5;
  CHECK_THROWS_AS(s.validate(4, 2), GraphError);
}
