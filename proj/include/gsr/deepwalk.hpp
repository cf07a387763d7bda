#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "gsr/eigen_types.hpp"
#include "gsr/graph.hpp"

namespace gsr {

struct WalkCorpus {
  std::vector<std::vector<NodeId>> walks;
  int walks_per_node = 0;
  int walk_length = 0;
};

/// Uniform truncated random walks, `walks_per_node` per non-isolated root.
/// Each walk uses its own stream seeded from (seed, root, walk index) so the
/// corpus does not depend on generation order.
WalkCorpus generate_walks(const Graph& g, int walks_per_node, int walk_length,
                          std::uint64_t seed);

struct SkipGramConfig {
  int dim = 64;
  int window = 5;
  int negatives = 5;
  int epochs = 5;
  double lr = 0.025;
  double heldout_fraction = 0.05;
  std::size_t max_heldout_pairs = 20000;
};

struct SkipGramResult {
  // Rows are L2-normalized.
  MatrixX embedding;
  double initial_heldout_loss = 0.0;
  double final_heldout_loss = 0.0;
};

/// Loss and gradients of one skip-gram-with-negative-sampling example:
///   -log σ(c·o) - Σ_k log σ(-c·n_k)
struct SgnsPairGradient {
  double loss = 0.0;
  VectorX center;
  VectorX context;
  std::vector<VectorX> negatives;
};

SgnsPairGradient sgns_pair_gradient(const VectorX& center, const VectorX& context,
                                    std::span<const VectorX> negatives);

class EmptyCorpusError : public std::runtime_error {
 public:
  EmptyCorpusError() : std::runtime_error("no walks; graph has no edges") {}
};

/// Trains skip-gram with unigram^0.75 negative sampling over `corpus`.
/// Every node id in [0, num_nodes) receives a row.
SkipGramResult train_skipgram(const WalkCorpus& corpus, NodeId num_nodes,
                              const SkipGramConfig& config, std::uint64_t seed);

}  // namespace gsr
