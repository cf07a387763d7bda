#include "gsr/deepwalk.hpp"

#include <algorithm>
#include <cmath>

#include "gsr/rng.hpp"

namespace gsr {

WalkCorpus generate_walks(const Graph& g, int walks_per_node, int walk_length,
                          std::uint64_t seed) {
  if (walk_length < 1) throw std::invalid_argument("generate_walks: walk_length must be >= 1");
  if (walks_per_node < 0) throw std::invalid_argument("generate_walks: negative walks_per_node");
  WalkCorpus corpus;
  corpus.walks_per_node = walks_per_node;
  corpus.walk_length = walk_length;
  for (int w = 0; w < walks_per_node; ++w) {
    for (NodeId root = 0; root < g.num_nodes(); ++root) {
      if (g.degree(root) == 0) continue;
      Rng rng(derive_seed({seed, static_cast<std::uint64_t>(root), static_cast<std::uint64_t>(w)}));
      std::vector<NodeId> walk;
      walk.reserve(walk_length);
      walk.push_back(root);
      while (static_cast<int>(walk.size()) < walk_length) {
        auto nb = g.neighbors(walk.back());
        if (nb.empty()) break;
        walk.push_back(nb[uniform_index(rng, nb.size())]);
      }
      corpus.walks.push_back(std::move(walk));
    }
  }
  return corpus;
}

namespace {

double log_sigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

class NegativeSampler {
 public:
  NegativeSampler(const WalkCorpus& corpus, NodeId num_nodes) : cumulative_(num_nodes, 0.0) {
    std::vector<double> counts(num_nodes, 0.0);
    for (const auto& walk : corpus.walks) {
      for (NodeId v : walk) counts[v] += 1.0;
    }
    double total = 0.0;
    for (NodeId v = 0; v < num_nodes; ++v) {
      total += std::pow(counts[v], 0.75);
      cumulative_[v] = total;
    }
  }

  NodeId draw(Rng& rng) const {
    const double r = uniform_real(rng) * cumulative_.back();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), r);
    return static_cast<NodeId>(std::min<std::ptrdiff_t>(it - cumulative_.begin(),
                                                        cumulative_.size() - 1));
  }

 private:
  std::vector<double> cumulative_;
};

struct HeldoutExample {
  NodeId center;
  NodeId context;
  std::vector<NodeId> negatives;
};

bool is_heldout(std::uint64_t seed, std::size_t walk, std::size_t i, std::size_t j,
                double fraction) {
  const std::uint64_t h = derive_seed({seed, 0x5eedULL, walk, i, j});
  return static_cast<double>(h >> 11) * 0x1.0p-53 < fraction;
}

// Row-major so each node's vector is contiguous.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double heldout_loss(const RowMatrix& input, const RowMatrix& output,
                    const std::vector<HeldoutExample>& examples) {
  if (examples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : examples) {
    total -= log_sigmoid(input.row(ex.center).dot(output.row(ex.context)));
    for (NodeId n : ex.negatives) total -= log_sigmoid(-input.row(ex.center).dot(output.row(n)));
  }
  return total / static_cast<double>(examples.size());
}

}  // namespace

SgnsPairGradient sgns_pair_gradient(const VectorX& center, const VectorX& context,
                                    std::span<const VectorX> negatives) {
  SgnsPairGradient out;
  const double pos = center.dot(context);
  out.loss = -log_sigmoid(pos);
  // d/dx [-log σ(x)] = σ(x) - 1
  const double gpos = sigmoid(pos) - 1.0;
  out.center = gpos * context;
  out.context = gpos * center;
  for (const VectorX& n : negatives) {
    const double s = center.dot(n);
    out.loss -= log_sigmoid(-s);
    const double gneg = sigmoid(s);
    out.center += gneg * n;
    out.negatives.push_back(gneg * center);
  }
  return out;
}

SkipGramResult train_skipgram(const WalkCorpus& corpus, NodeId num_nodes,
                              const SkipGramConfig& config, std::uint64_t seed) {
  if (config.dim < 1) throw std::invalid_argument("train_skipgram: dim must be >= 1");
  if (config.window < 1) throw std::invalid_argument("train_skipgram: window must be >= 1");
  if (config.negatives < 0) throw std::invalid_argument("train_skipgram: negatives must be >= 0");
  std::size_t tokens = 0;
  for (const auto& walk : corpus.walks) tokens += walk.size();
  if (corpus.walks.empty() || tokens < 2) throw EmptyCorpusError();

  Rng rng(derive_seed({seed, 0xd33b3a1cULL}));
  const int dim = config.dim;
  RowMatrix input(num_nodes, dim);
  for (Eigen::Index i = 0; i < input.size(); ++i) {
    input.data()[i] = (uniform_real(rng) - 0.5) / dim;
  }
  RowMatrix output = RowMatrix::Zero(num_nodes, dim);

  NegativeSampler sampler(corpus, num_nodes);
  std::vector<HeldoutExample> heldout;
  Rng eval_rng(derive_seed({seed, 0xe7a1ULL}));
  const auto window = static_cast<std::size_t>(config.window);
  std::size_t train_pairs = 0;
  for (std::size_t w = 0; w < corpus.walks.size(); ++w) {
    const auto& walk = corpus.walks[w];
    for (std::size_t i = 0; i < walk.size(); ++i) {
      const std::size_t lo = i >= window ? i - window : 0;
      const std::size_t hi = std::min(walk.size() - 1, i + window);
      for (std::size_t j = lo; j <= hi; ++j) {
        if (j == i) continue;
        if (is_heldout(seed, w, i, j, config.heldout_fraction)) {
          if (heldout.size() < config.max_heldout_pairs) {
            HeldoutExample ex{walk[i], walk[j], {}};
            for (int k = 0; k < config.negatives; ++k) ex.negatives.push_back(sampler.draw(eval_rng));
            heldout.push_back(std::move(ex));
          }
        } else {
          ++train_pairs;
        }
      }
    }
  }

  SkipGramResult result;
  result.initial_heldout_loss = heldout_loss(input, output, heldout);

  const double total_steps = static_cast<double>(train_pairs) * config.epochs;
  double step = 0.0;
  VectorX grad_center(dim);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t w = 0; w < corpus.walks.size(); ++w) {
      const auto& walk = corpus.walks[w];
      for (std::size_t i = 0; i < walk.size(); ++i) {
        const std::size_t lo = i >= window ? i - window : 0;
        const std::size_t hi = std::min(walk.size() - 1, i + window);
        for (std::size_t j = lo; j <= hi; ++j) {
          if (j == i || is_heldout(seed, w, i, j, config.heldout_fraction)) continue;
          const double lr = config.lr * std::max(1e-4, 1.0 - step / std::max(1.0, total_steps));
          step += 1.0;
          const NodeId c = walk[i];
          const NodeId o = walk[j];
          auto center = input.row(c);
          grad_center.setZero();
          {
            auto ctx = output.row(o);
            const double g = sigmoid(center.dot(ctx)) - 1.0;
            grad_center.noalias() += g * ctx.transpose();
            ctx.noalias() -= (lr * g) * center;
          }
          for (int k = 0; k < config.negatives; ++k) {
            const NodeId n = sampler.draw(rng);
            if (n == o) continue;
            auto neg = output.row(n);
            const double g = sigmoid(center.dot(neg));
            grad_center.noalias() += g * neg.transpose();
            neg.noalias() -= (lr * g) * center;
          }
          center.noalias() -= lr * grad_center.transpose();
        }
      }
    }
  }
  result.final_heldout_loss = heldout_loss(input, output, heldout);

  for (NodeId v = 0; v < num_nodes; ++v) {
    const double norm = input.row(v).norm();
    if (norm > 0) input.row(v) /= norm;
  }
  result.embedding = input;
  return result;
}

}  // namespace gsr
