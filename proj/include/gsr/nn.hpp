#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gsr/autodiff.hpp"
#include "gsr/eigen_types.hpp"
#include "gsr/rng.hpp"

namespace gsr {

/// Affine map x W + b. `bias` is 1×out, or empty when the layer has no bias.
template <typename Scalar>
struct DenseLayer {
  Matrix<Scalar> weight;
  Matrix<Scalar> bias;

  Eigen::Index in_dim() const { return weight.rows(); }
  Eigen::Index out_dim() const { return weight.cols(); }
  bool has_bias() const { return bias.size() != 0; }

  friend bool operator==(const DenseLayer& a, const DenseLayer& b) {
    return a.weight.rows() == b.weight.rows() && a.weight.cols() == b.weight.cols() &&
           a.bias.size() == b.bias.size() && a.weight == b.weight &&
           (a.bias.size() == 0 || a.bias == b.bias);
  }
};

/// Glorot-uniform weights, zero bias.
template <typename Scalar>
DenseLayer<Scalar> glorot_layer(Eigen::Index in, Eigen::Index out, bool bias, Rng& rng) {
  DenseLayer<Scalar> layer;
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  layer.weight.resize(in, out);
  for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
    layer.weight.data()[i] = static_cast<Scalar>((2.0 * uniform_real(rng) - 1.0) * bound);
  }
  if (bias) layer.bias = Matrix<Scalar>::Zero(1, out);
  return layer;
}

/// Two-layer GCN: Z = Â relu(Â X W1 + b1) W2 + b2.
template <typename Scalar>
struct GcnParams {
  DenseLayer<Scalar> layer1;
  DenseLayer<Scalar> layer2;

  static GcnParams glorot(Eigen::Index in, Eigen::Index hidden, Eigen::Index out, bool bias, Rng& rng) {
    GcnParams p;
    p.layer1 = glorot_layer<Scalar>(in, hidden, bias, rng);
    p.layer2 = glorot_layer<Scalar>(hidden, out, bias, rng);
    return p;
  }

  friend bool operator==(const GcnParams&, const GcnParams&) = default;
};

/// Two-layer perceptron: H = relu(Z W1 + b1) W2 + b2.
template <typename Scalar>
struct MlpParams {
  DenseLayer<Scalar> layer1;
  DenseLayer<Scalar> layer2;

  static MlpParams glorot(Eigen::Index in, Eigen::Index hidden, Eigen::Index out, bool bias, Rng& rng) {
    MlpParams p;
    p.layer1 = glorot_layer<Scalar>(in, hidden, bias, rng);
    p.layer2 = glorot_layer<Scalar>(hidden, out, bias, rng);
    return p;
  }

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

/// Named views of every trainable tensor in a two-layer parameter record.
template <typename Params>
auto parameter_tensors(Params& p) {
  using M = std::remove_reference_t<decltype(p.layer1.weight)>;
  std::vector<std::pair<std::string, M*>> out;
  out.emplace_back("w1", &p.layer1.weight);
  if (p.layer1.has_bias()) out.emplace_back("b1", &p.layer1.bias);
  out.emplace_back("w2", &p.layer2.weight);
  if (p.layer2.has_bias()) out.emplace_back("b2", &p.layer2.bias);
  return out;
}

template <typename Params>
auto parameter_tensors(const Params& p) {
  using M = std::remove_cvref_t<decltype(p.layer1.weight)>;
  std::vector<std::pair<std::string, const M*>> out;
  for (auto& [name, ptr] : parameter_tensors(const_cast<Params&>(p))) out.emplace_back(name, ptr);
  return out;
}

namespace detail {

template <typename Scalar>
void check_forward_shapes(const DenseLayer<Scalar>& l1, const DenseLayer<Scalar>& l2,
                          Eigen::Index x_cols, const char* what) {
  if (x_cols != l1.in_dim() || l1.out_dim() != l2.in_dim() ||
      (l1.has_bias() && l1.bias.cols() != l1.out_dim()) ||
      (l2.has_bias() && l2.bias.cols() != l2.out_dim())) {
    throw ShapeError(std::string(what) + ": parameter/input shape mismatch");
  }
}

}  // namespace detail

template <typename Scalar>
Matrix<Scalar> gcn_forward(const GcnParams<Scalar>& p, const SparseMatrix<Scalar>& adj,
                           const Matrix<Scalar>& x) {
  if (adj.rows() != x.rows() || adj.cols() != x.rows()) {
    throw ShapeError("gcn_forward: adjacency and feature rows differ");
  }
  detail::check_forward_shapes(p.layer1, p.layer2, x.cols(), "gcn_forward");
  Matrix<Scalar> h = adj * (x * p.layer1.weight);
  if (p.layer1.has_bias()) h.rowwise() += p.layer1.bias.row(0);
  h = h.cwiseMax(Scalar(0));
  Matrix<Scalar> z = adj * (h * p.layer2.weight);
  if (p.layer2.has_bias()) z.rowwise() += p.layer2.bias.row(0);
  return z;
}

template <typename Scalar>
Matrix<Scalar> mlp_forward(const MlpParams<Scalar>& p, const Matrix<Scalar>& z) {
  detail::check_forward_shapes(p.layer1, p.layer2, z.cols(), "mlp_forward");
  Matrix<Scalar> h = z * p.layer1.weight;
  if (p.layer1.has_bias()) h.rowwise() += p.layer1.bias.row(0);
  h = h.cwiseMax(Scalar(0));
  Matrix<Scalar> out = h * p.layer2.weight;
  if (p.layer2.has_bias()) out.rowwise() += p.layer2.bias.row(0);
  return out;
}

template <typename Scalar>
Matrix<Scalar> normalized_rows(Matrix<Scalar> x, Scalar eps = Scalar(1e-12)) {
  for (Eigen::Index r = 0; r < x.rows(); ++r) x.row(r) /= std::max(x.row(r).norm(), eps);
  return x;
}

/// Tape leaves bound to a two-layer parameter record.
template <typename Scalar>
struct BoundLayers {
  using Var = typename Tape<Scalar>::Var;
  Var w1, b1, w2, b2;
  bool bias1 = false;
  bool bias2 = false;

  /// Leaves in parameter_tensors() order.
  std::vector<Var> leaves() const {
    std::vector<Var> out{w1};
    if (bias1) out.push_back(b1);
    out.push_back(w2);
    if (bias2) out.push_back(b2);
    return out;
  }
};

template <typename Scalar, typename Params>
BoundLayers<Scalar> bind_parameters(Tape<Scalar>& tape, const Params& p, bool trainable = true) {
  BoundLayers<Scalar> b;
  auto leaf = [&](const Matrix<Scalar>& m) {
    return trainable ? tape.parameter(m) : tape.constant(m);
  };
  b.w1 = leaf(p.layer1.weight);
  b.bias1 = p.layer1.has_bias();
  if (b.bias1) b.b1 = leaf(p.layer1.bias);
  b.w2 = leaf(p.layer2.weight);
  b.bias2 = p.layer2.has_bias();
  if (b.bias2) b.b2 = leaf(p.layer2.bias);
  return b;
}

/// Tape version of gcn_forward over constant inputs `x`. `hidden_mask`, when
/// given, multiplies the hidden activations elementwise (inverted dropout).
/// `adj` and `x` must outlive the tape.
template <typename Scalar>
typename Tape<Scalar>::Var gcn_forward(Tape<Scalar>& tape, const BoundLayers<Scalar>& p,
                                       const SparseMatrix<Scalar>& adj, const Matrix<Scalar>& x,
                                       const Matrix<Scalar>* hidden_mask = nullptr) {
  if (adj.rows() != x.rows() || adj.cols() != x.rows()) {
    throw ShapeError("gcn_forward: adjacency and feature rows differ");
  }
  auto h = tape.spmm(adj, tape.left_matmul(x, p.w1));
  if (p.bias1) h = tape.add_row(h, p.b1);
  h = tape.relu(h);
  if (hidden_mask != nullptr) h = tape.mul_const(h, *hidden_mask);
  auto z = tape.spmm(adj, tape.matmul(h, p.w2));
  if (p.bias2) z = tape.add_row(z, p.b2);
  return z;
}

template <typename Scalar>
typename Tape<Scalar>::Var mlp_forward(Tape<Scalar>& tape, const BoundLayers<Scalar>& p,
                                       typename Tape<Scalar>::Var z) {
  auto h = tape.matmul(z, p.w1);
  if (p.bias1) h = tape.add_row(h, p.b1);
  h = tape.relu(h);
  auto out = tape.matmul(h, p.w2);
  if (p.bias2) out = tape.add_row(out, p.b2);
  return out;
}

/// InfoNCE over a batch: row i of `queries` is contrasted against row i of
/// `positives` plus every row of the negative bank.
///   mean_i -log( exp(q_i·k+_i/τ) / (exp(q_i·k+_i/τ) + Σ_j exp(q_i·n_j/τ)) )
template <typename Scalar>
typename Tape<Scalar>::Var info_nce(Tape<Scalar>& tape, typename Tape<Scalar>::Var queries,
                                    typename Tape<Scalar>::Var positives,
                                    typename Tape<Scalar>::Var bank, Scalar tau) {
  if (!(tau > Scalar(0))) throw std::invalid_argument("info_nce: temperature must be > 0");
  auto pos = tape.row_dot(queries, positives);
  auto logits = tape.value(bank).rows() > 0
                    ? tape.concat_cols(pos, tape.matmul_transposed(queries, bank))
                    : pos;
  logits = tape.scale(logits, Scalar(1) / tau);
  const auto n = tape.value(queries).rows();
  return tape.softmax_cross_entropy(logits, std::vector<int>(static_cast<std::size_t>(n), 0));
}

template <typename Scalar>
Scalar info_nce(const Matrix<Scalar>& queries, const Matrix<Scalar>& positives,
                const Matrix<Scalar>& bank, Scalar tau) {
  Tape<Scalar> tape;
  auto q = tape.constant(queries);
  auto k = tape.constant(positives);
  auto b = tape.constant(bank);
  return tape.scalar(info_nce(tape, q, k, b, tau));
}

/// Mean negative log-softmax probability of the true class over `mask`.
template <typename Scalar>
typename Tape<Scalar>::Var cross_entropy(Tape<Scalar>& tape, typename Tape<Scalar>::Var logits,
                                         std::span<const int> labels, std::span<const NodeId> mask) {
  if (mask.empty()) throw std::invalid_argument("cross_entropy: empty mask");
  std::vector<int> targets;
  targets.reserve(mask.size());
  for (NodeId v : mask) targets.push_back(labels[v]);
  return tape.softmax_cross_entropy(logits, std::move(targets),
                                    std::vector<NodeId>(mask.begin(), mask.end()));
}

template <typename Scalar>
Scalar cross_entropy(const Matrix<Scalar>& logits, std::span<const int> labels,
                     std::span<const NodeId> mask) {
  Tape<Scalar> tape;
  return tape.scalar(cross_entropy(tape, tape.constant(logits), labels, mask));
}

/// Adaptive-moment optimizer state. Weight decay is added to the gradient.
template <typename Scalar>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  long step = 0;
  std::vector<Matrix<Scalar>> first_moment;
  std::vector<Matrix<Scalar>> second_moment;
};

template <typename Scalar>
void optimizer_step(std::span<Matrix<Scalar>* const> params, std::span<const Matrix<Scalar>> grads,
                    AdamState<Scalar>& state) {
  if (params.size() != grads.size()) throw ShapeError("optimizer_step: params/grads count mismatch");
  if (state.first_moment.empty()) {
    for (const auto* p : params) {
      state.first_moment.push_back(Matrix<Scalar>::Zero(p->rows(), p->cols()));
      state.second_moment.push_back(Matrix<Scalar>::Zero(p->rows(), p->cols()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("optimizer_step: optimizer state does not match parameter list");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix<Scalar>& p = *params[i];
    if (grads[i].rows() != p.rows() || grads[i].cols() != p.cols() ||
        state.first_moment[i].rows() != p.rows() || state.first_moment[i].cols() != p.cols()) {
      throw ShapeError("optimizer_step: shape mismatch for parameter " + std::to_string(i));
    }
    Matrix<Scalar> g = grads[i];
    if (state.weight_decay != 0.0) g += static_cast<Scalar>(state.weight_decay) * p;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = static_cast<Scalar>(state.beta1) * m + static_cast<Scalar>(1.0 - state.beta1) * g;
    v = static_cast<Scalar>(state.beta2) * v +
        static_cast<Scalar>(1.0 - state.beta2) * g.cwiseAbs2();
    const auto step_size = static_cast<Scalar>(state.lr / c1);
    const auto denom = (v.array() / static_cast<Scalar>(c2)).sqrt() + static_cast<Scalar>(state.eps);
    p.array() -= step_size * m.array() / denom;
  }
}

/// key ← m·key + (1−m)·query, elementwise.
template <typename Scalar>
void momentum_update(Matrix<Scalar>& key, const Matrix<Scalar>& query, Scalar m) {
  if (key.rows() != query.rows() || key.cols() != query.cols()) {
    throw ShapeError("momentum_update: shape mismatch");
  }
  if (m == Scalar(0)) {
    key = query;
    return;
  }
  key = m * key + (Scalar(1) - m) * query;
}

template <typename Params, typename Scalar>
void momentum_update(Params& key, const Params& query, Scalar m) {
  auto k = parameter_tensors(key);
  auto q = parameter_tensors(query);
  if (k.size() != q.size()) throw ShapeError("momentum_update: parameter sets differ");
  for (std::size_t i = 0; i < k.size(); ++i) momentum_update(*k[i].second, *q[i].second, m);
}

}  // namespace gsr
