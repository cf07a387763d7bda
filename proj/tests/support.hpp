#pragma once

// Shared fixtures and independent reference implementations for the tests.
// Oracles here use dense matrices and direct enumeration and never call the
// library routine they are compared against.

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "gsr/data_io.hpp"
#include "gsr/graph.hpp"
#include "gsr/refine.hpp"
#include "gsr/rng.hpp"

namespace gsr::test {

inline Graph random_graph(NodeId n, double p, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = u + 1; v < n; ++v) {
      if (uniform_real(rng) < p) edges.emplace_back(u, v);
    }
  }
  return Graph(n, edges);
}

inline MatrixX random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  MatrixX m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * standard_normal(rng);
  return m;
}

inline MatrixX dense_adjacency(const Graph& g) {
  MatrixX a = MatrixX::Zero(g.num_nodes(), g.num_nodes());
  for (const Edge& e : g.edges()) a(e.u, e.v) = a(e.v, e.u) = 1.0;
  return a;
}

/// D̃^{-1/2} (A + I) D̃^{-1/2} with dense arithmetic.
inline MatrixX dense_normalized(const Graph& g) {
  const Eigen::Index n = g.num_nodes();
  MatrixX a = dense_adjacency(g) + MatrixX::Identity(n, n);
  VectorX d = a.rowwise().sum();
  MatrixX dinv = MatrixX::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) dinv(i, i) = 1.0 / std::sqrt(d(i));
  return dinv * a * dinv;
}

inline MatrixX relu(const MatrixX& x) { return x.cwiseMax(0.0); }

inline MatrixX add_bias(MatrixX x, const MatrixX& b) {
  if (b.size() != 0) {
    for (Eigen::Index r = 0; r < x.rows(); ++r) x.row(r) += b.row(0);
  }
  return x;
}

inline MatrixX unit_rows(MatrixX x) {
  for (Eigen::Index r = 0; r < x.rows(); ++r) x.row(r) /= x.row(r).norm();
  return x;
}

/// −log softmax(row)[target] by direct summation, no max shift.
inline double nll_enumerated(const RowVectorX& logits, int target) {
  double denom = 0.0;
  for (Eigen::Index j = 0; j < logits.size(); ++j) denom += std::exp(logits(j));
  return -std::log(std::exp(logits(target)) / denom);
}

/// Mean over rows of −log( e^{q·k+/τ} / (e^{q·k+/τ} + Σ_j e^{q·n_j/τ}) ).
inline double info_nce_enumerated(const MatrixX& q, const MatrixX& pos, const MatrixX& bank, double tau) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const double p = std::exp(q.row(i).dot(pos.row(i)) / tau);
    double denom = p;
    for (Eigen::Index j = 0; j < bank.rows(); ++j) denom += std::exp(q.row(i).dot(bank.row(j)) / tau);
    total += -std::log(p / denom);
  }
  return total / static_cast<double>(q.rows());
}

/// Relative error per tensor: ‖a − n‖ / max(‖a‖, ‖n‖, 1e-8).
inline double relative_error(const MatrixX& analytic, const MatrixX& numeric) {
  const double denom = std::max({analytic.norm(), numeric.norm(), 1e-8});
  return (analytic - numeric).norm() / denom;
}

/// Central differences of `loss` with respect to every entry of `*param`.
inline MatrixX numeric_gradient(MatrixX* param, const std::function<double()>& loss, double h = 1e-4) {
  MatrixX g(param->rows(), param->cols());
  for (Eigen::Index i = 0; i < param->size(); ++i) {
    const double saved = param->data()[i];
    param->data()[i] = saved + h;
    const double up = loss();
    param->data()[i] = saved - h;
    const double down = loss();
    param->data()[i] = saved;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Largest per-tensor relative error between analytic gradients and central differences.
inline double max_gradient_error(const std::vector<MatrixX*>& params, const std::vector<MatrixX>& analytic,
                                 const std::function<double()>& loss, double h = 1e-4) {
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    worst = std::max(worst, relative_error(analytic[i], numeric_gradient(params[i], loss, h)));
  }
  return worst;
}

inline std::set<std::pair<NodeId, NodeId>> edge_set(const Graph& g) {
  std::set<std::pair<NodeId, NodeId>> s;
  for (const Edge& e : g.edges()) s.insert({e.u, e.v});
  return s;
}

inline double cosine(const MatrixX& m, NodeId i, NodeId j) {
  return m.row(i).dot(m.row(j)) / (m.row(i).norm() * m.row(j).norm());
}

/// Combined scores over all pairs u < v under minmax normalization, by enumeration.
inline std::map<std::pair<NodeId, NodeId>, double> brute_force_minmax(const ViewEmbeddings& z,
                                                                       const std::vector<double>& beta) {
  const NodeId n = z.num_nodes();
  std::map<std::pair<NodeId, NodeId>, double> out;
  for (std::size_t v = 0; v < z.size(); ++v) {
    double lo = 1e300, hi = -1e300;
    for (NodeId i = 0; i < n; ++i) {
      for (NodeId j = i + 1; j < n; ++j) {
        const double c = cosine(z.matrices[v], i, j);
        lo = std::min(lo, c);
        hi = std::max(hi, c);
      }
    }
    for (NodeId i = 0; i < n; ++i) {
      for (NodeId j = i + 1; j < n; ++j) {
        out[{i, j}] += beta[v] * (cosine(z.matrices[v], i, j) - lo) / (hi - lo);
      }
    }
  }
  return out;
}

/// Plan from sorting every candidate: adds by score descending, removes ascending, ties by (u, v).
inline RefinementPlan full_sort_plan(const EdgeScores& s, std::size_t m_plus, std::size_t m_minus) {
  std::vector<std::tuple<double, NodeId, NodeId>> adds, removes;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.is_edge[i]) {
      removes.emplace_back(s.combined[i], s.pairs[i].u, s.pairs[i].v);
    } else {
      adds.emplace_back(-s.combined[i], s.pairs[i].u, s.pairs[i].v);
    }
  }
  std::sort(adds.begin(), adds.end());
  std::sort(removes.begin(), removes.end());
  RefinementPlan p;
  for (std::size_t i = 0; i < m_plus; ++i) {
    p.add.push_back({Edge(std::get<1>(adds[i]), std::get<2>(adds[i])), -std::get<0>(adds[i])});
  }
  for (std::size_t i = 0; i < m_minus; ++i) {
    p.remove.push_back({Edge(std::get<1>(removes[i]), std::get<2>(removes[i])), std::get<0>(removes[i])});
  }
  return p;
}

/// Two blocks of `half` nodes, one-hot block features.
inline Dataset two_block_dataset(NodeId half, double p_in, double p_out, std::uint64_t seed) {
  SbmConfig c;
  c.block_sizes = {half, half};
  c.p_in = p_in;
  c.p_out = p_out;
  c.feature_dim = 8;
  c.feature_signal = 3.0;
  c.seed = seed;
  return generate_sbm(c).data;
}

}  // namespace gsr::test
