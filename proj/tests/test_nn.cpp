#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "gsr/autodiff.hpp"
#include "gsr/graph.hpp"
#include "gsr/nn.hpp"
#include "support.hpp"

using namespace gsr;

namespace {

MatrixX dense_gcn(const GcnParams<Real>& p, const MatrixX& a, const MatrixX& x) {
  const MatrixX h = test::relu(test::add_bias(a * x * p.layer1.weight, p.layer1.bias));
  return test::add_bias(a * h * p.layer2.weight, p.layer2.bias);
}

MatrixX dense_mlp(const MlpParams<Real>& p, const MatrixX& z) {
  const MatrixX h = test::relu(test::add_bias(z * p.layer1.weight, p.layer1.bias));
  return test::add_bias(h * p.layer2.weight, p.layer2.bias);
}

GcnParams<Real> random_gcn(Eigen::Index in, Eigen::Index hid, Eigen::Index out, std::uint64_t seed) {
  Rng rng(seed);
  auto p = GcnParams<Real>::glorot(in, hid, out, true, rng);
  p.layer1.bias = test::random_matrix(1, hid, seed + 1, 0.1);
  p.layer2.bias = test::random_matrix(1, out, seed + 2, 0.1);
  return p;
}

}  // namespace

TEST_CASE("gcn_forward on a singleton graph with identity weights") {
  const Graph g(1, std::vector<std::pair<NodeId, NodeId>>{});
  GcnParams<Real> p;
  p.layer1.weight = MatrixX::Identity(3, 3);
  p.layer2.weight = MatrixX::Identity(3, 3);
  MatrixX x(1, 3);
  x << 0.5, 2.0, 0.0;
  CHECK(gcn_forward(p, normalize_adjacency(g), x) == x);
}

TEST_CASE("gcn_forward with zero input") {
  const Graph g = test::random_graph(6, 0.4, 3);
  const auto adj = normalize_adjacency(g);
  auto p = random_gcn(4, 5, 3, 9);
  const MatrixX x = MatrixX::Zero(6, 4);
  CHECK(dense_gcn(p, test::dense_normalized(g), x).isApprox(gcn_forward(p, adj, x), 1e-12));
  p.layer1.bias.resize(0, 0);
  p.layer2.bias.resize(0, 0);
  CHECK(gcn_forward(p, adj, x).isZero(0.0));
}

TEST_CASE("gcn_forward matches the dense oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Graph g = test::random_graph(4, 0.6, seed);
    const auto p = random_gcn(5, 6, 3, seed + 10);
    const MatrixX x = test::random_matrix(4, 5, seed + 20);
    const MatrixX z = gcn_forward(p, normalize_adjacency(g), x);
    CHECK((z - dense_gcn(p, test::dense_normalized(g), x)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("gcn_forward shape mismatch") {
  const Graph g = test::random_graph(4, 0.6, 0);
  const auto p = random_gcn(5, 6, 3, 1);
  CHECK_THROWS_AS(gcn_forward(p, normalize_adjacency(g), MatrixX(MatrixX::Zero(4, 4))), ShapeError);
  CHECK_THROWS_AS(gcn_forward(p, normalize_adjacency(g), MatrixX(MatrixX::Zero(3, 5))), ShapeError);
}

TEST_CASE("gcn_forward is permutation equivariant") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const NodeId n = 8;
    const Graph g = test::random_graph(n, 0.35, seed);
    std::vector<NodeId> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::pair<NodeId, NodeId>> moved;
    for (const Edge& e : g.edges()) moved.emplace_back(perm[e.u], perm[e.v]);
    const Graph h(n, moved);
    const MatrixX x = test::random_matrix(n, 4, seed + 1);
    MatrixX px(n, 4);
    for (NodeId i = 0; i < n; ++i) px.row(perm[i]) = x.row(i);
    const auto p = random_gcn(4, 5, 3, seed + 2);
    const MatrixX z = gcn_forward(p, normalize_adjacency(g), x);
    const MatrixX pz = gcn_forward(p, normalize_adjacency(h), px);
    for (NodeId i = 0; i < n; ++i) CHECK((pz.row(perm[i]) - z.row(i)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("mlp_forward") {
  SUBCASE("identity weights pass non-negative input through") {
    MlpParams<Real> p;
    p.layer1.weight = MatrixX::Identity(3, 3);
    p.layer2.weight = MatrixX::Identity(3, 3);
    const MatrixX z = test::random_matrix(4, 3, 1).cwiseAbs();
    CHECK(mlp_forward(p, z) == z);
  }
  SUBCASE("zero input propagates bias") {
    Rng rng(2);
    auto p = MlpParams<Real>::glorot(3, 4, 2, true, rng);
    p.layer1.bias = test::random_matrix(1, 4, 3);
    p.layer2.bias = test::random_matrix(1, 2, 4);
    const MatrixX out = mlp_forward(p, MatrixX(MatrixX::Zero(5, 3)));
    const MatrixX expected = test::relu(p.layer1.bias) * p.layer2.weight + p.layer2.bias;
    for (int r = 0; r < 5; ++r) CHECK((out.row(r) - expected).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("random case matches the dense oracle") {
    Rng rng(5);
    auto p = MlpParams<Real>::glorot(6, 7, 4, true, rng);
    p.layer1.bias = test::random_matrix(1, 7, 6, 0.2);
    p.layer2.bias = test::random_matrix(1, 4, 7, 0.2);
    const MatrixX z = test::random_matrix(9, 6, 8);
    CHECK((mlp_forward(p, z) - dense_mlp(p, z)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("tape gradients: trivial cases") {
  Tape<Real> t;
  const auto a = t.parameter(test::random_matrix(3, 4, 1));
  const auto b = t.parameter(test::random_matrix(2, 2, 2));
  const auto loss = t.sum(a);
  t.backward(loss);
  CHECK(t.grad(a) == MatrixX::Ones(3, 4));
  CHECK(t.grad(b) == MatrixX::Zero(2, 2));
}

TEST_CASE("tape forward rejects non-finite values and names the op") {
  Tape<Real> t;
  MatrixX big = MatrixX::Constant(2, 2, 1e200);
  const auto a = t.parameter(big);
  try {
    (void)t.matmul(a, a);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(e.op() == "matmul");
  }
  MatrixX nan = MatrixX::Zero(1, 1);
  nan(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(t.constant(nan), NonFiniteError);
}

TEST_CASE("tape gradients match central differences for every op") {
  const Graph g = test::random_graph(7, 0.4, 4);
  const auto adj = normalize_adjacency(g);
  MatrixX x = test::random_matrix(7, 5, 1);
  MatrixX w = test::random_matrix(5, 4, 2);
  MatrixX b = test::random_matrix(1, 4, 3);
  MatrixX v = test::random_matrix(4, 3, 4);
  MatrixX mask = test::random_matrix(7, 4, 5).cwiseAbs();
  const std::vector<NodeId> rows{0, 3, 3, 6};

  auto build = [&](Tape<Real>& t, std::vector<Tape<Real>::Var>* leaves) {
    const auto xv = t.parameter(x);
    const auto wv = t.parameter(w);
    const auto bv = t.parameter(b);
    const auto vv = t.parameter(v);
    if (leaves) *leaves = {xv, wv, bv, vv};
    auto h = t.relu(t.add_row(t.spmm(adj, t.matmul(xv, wv)), bv));
    h = t.mul_const(h, mask);
    auto n = t.normalize_rows(h);
    auto gathered = t.gather_rows(n, rows);
    auto stacked = t.stack_rows({gathered, t.mean_rows(n)});
    auto logits = t.matmul(stacked, vv);
    auto pair = t.row_dot(t.gather_rows(n, {1, 2}), t.gather_rows(n, {4, 5}));
    auto sim = t.matmul_transposed(t.gather_rows(n, {0, 1}), n);
    auto ce = t.softmax_cross_entropy(logits, {0, 2, 1, 1, 0});
    auto ce2 = t.softmax_cross_entropy(t.concat_cols(pair, t.scale(t.gather_rows(sim, {0, 1}), 2.0)), {0, 3}, {0, 1});
    std::vector<std::pair<Real, Tape<Real>::Var>> terms{{0.7, ce}, {0.3, ce2}, {0.05, t.sum(t.add(h, h))}};
    return t.weighted_sum(terms);
  };
  Tape<Real> t;
  std::vector<Tape<Real>::Var> leaves;
  const auto loss = build(t, &leaves);
  t.backward(loss);
  std::vector<MatrixX> analytic;
  for (auto l : leaves) analytic.push_back(t.grad(l));
  auto eval = [&] {
    Tape<Real> u;
    return u.scalar(build(u, nullptr));
  };
  CHECK(test::max_gradient_error({&x, &w, &b, &v}, analytic, eval) < 1e-4);
}

TEST_CASE("left_matmul gradient") {
  const MatrixX a = test::random_matrix(5, 3, 1);
  MatrixX w = test::random_matrix(3, 2, 2);
  Tape<Real> t;
  const auto wv = t.parameter(w);
  t.backward(t.sum(t.relu(t.left_matmul(a, wv))));
  auto eval = [&] { return (a * w).cwiseMax(0.0).sum(); };
  CHECK(test::relative_error(t.grad(wv), test::numeric_gradient(&w, eval)) < 1e-4);
}

TEST_CASE("info_nce examples") {
  SUBCASE("uniform logits give ln(K+1)") {
    for (int k : {1, 5, 255, 1023}) {
      const MatrixX zero = MatrixX::Zero(4, 8);
      const double l = info_nce<Real>(zero, zero, MatrixX::Zero(k, 8), 0.07);
      CHECK(std::abs(l - std::log(k + 1.0)) < 1e-9);
    }
  }
  SUBCASE("saturated positive") {
    MatrixX q = test::unit_rows(test::random_matrix(3, 6, 1));
    MatrixX bank = test::unit_rows(test::random_matrix(5, 6, 2));
    const double l = info_nce<Real>(100.0 * q, 100.0 * q, bank, 0.07);
    CHECK(l < 1e-3);
  }
  SUBCASE("matches explicit enumeration") {
    const MatrixX q = test::unit_rows(test::random_matrix(3, 4, 3));
    const MatrixX k = test::unit_rows(test::random_matrix(3, 4, 4));
    const MatrixX bank = test::unit_rows(test::random_matrix(5, 4, 5));
    const double l = info_nce<Real>(q, k, bank, 0.5);
    CHECK(std::abs(l - test::info_nce_enumerated(q, k, bank, 0.5)) < 1e-10);
  }
  SUBCASE("temperature must be positive") {
    const MatrixX q = MatrixX::Zero(1, 2);
    CHECK_THROWS_AS(info_nce<Real>(q, q, q, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(info_nce<Real>(q, q, q, -1.0), std::invalid_argument);
  }
}

TEST_CASE("info_nce never decreases when a negative is appended") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const MatrixX q = test::unit_rows(test::random_matrix(4, 5, seed));
    const MatrixX k = test::unit_rows(test::random_matrix(4, 5, seed + 100));
    MatrixX bank = test::unit_rows(test::random_matrix(6, 5, seed + 200));
    const double before = info_nce<Real>(q, k, bank, 0.2);
    MatrixX grown(7, 5);
    grown << bank, bank.row(seed % 6);
    CHECK(info_nce<Real>(q, k, grown, 0.2) >= before);
  }
}

TEST_CASE("cross_entropy examples") {
  const std::vector<int> labels{0, 1, 2, 3, 1};
  const std::vector<NodeId> all{0, 1, 2, 3, 4};
  CHECK(std::abs(cross_entropy<Real>(MatrixX::Zero(5, 4), labels, all) - std::log(4.0)) < 1e-12);
  MatrixX confident = MatrixX::Zero(5, 4);
  for (int i = 0; i < 5; ++i) confident(i, labels[i]) = 100.0;
  CHECK(cross_entropy<Real>(confident, labels, all) < 1e-12);
  const MatrixX logits = test::random_matrix(5, 4, 9, 2.0);
  const std::vector<NodeId> mask{1, 3, 4};
  double expected = 0.0;
  for (NodeId v : mask) expected += test::nll_enumerated(logits.row(v), labels[v]);
  expected /= 3.0;
  CHECK(std::abs(cross_entropy<Real>(logits, labels, mask) - expected) < 1e-10);
  CHECK_THROWS_AS(cross_entropy<Real>(logits, labels, std::vector<NodeId>{}), std::invalid_argument);
}

TEST_CASE("optimizer_step") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    MatrixX p = test::random_matrix(3, 3, 1);
    const MatrixX before = p;
    AdamState<Real> s;
    std::vector<MatrixX*> params{&p};
    std::vector<MatrixX> grads{MatrixX::Zero(3, 3)};
    optimizer_step<Real>(params, grads, s);
    CHECK(p == before);
    CHECK(s.step == 1);
    optimizer_step<Real>(params, grads, s);
    CHECK(s.step == 2);
  }
  SUBCASE("converges on a one-dimensional quadratic") {
    // f(x) = 2 (x - 1.5)^2 from x = 1, minimizer 1.5. Checked against a scalar
    // restatement of the update rule as well as the closed-form minimizer.
    MatrixX x = MatrixX::Constant(1, 1, 1.0);
    AdamState<Real> s;
    s.lr = 0.02;
    std::vector<MatrixX*> params{&x};
    double y = 1.0, m = 0.0, v = 0.0;
    for (int i = 1; i <= 100; ++i) {
      std::vector<MatrixX> grads{MatrixX::Constant(1, 1, 4.0 * (x(0, 0) - 1.5))};
      optimizer_step<Real>(params, grads, s);
      const double g = 4.0 * (y - 1.5);
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1.0 - std::pow(0.9, i));
      const double vh = v / (1.0 - std::pow(0.999, i));
      y -= 0.02 * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK(std::abs(x(0, 0) - y) < 1e-12);
    CHECK(std::abs(x(0, 0) - 1.5) < 1e-3);
  }
}

TEST_CASE("momentum_update") {
  const MatrixX q = test::random_matrix(4, 3, 1);
  MatrixX k = test::random_matrix(4, 3, 2);
  SUBCASE("m = 0 copies the query") {
    momentum_update<Real>(k, q, 0.0);
    CHECK(k == q);
  }
  SUBCASE("equal parameters are a fixed point") {
    MatrixX same = q;
    momentum_update<Real>(same, q, 0.9);
    CHECK((same - q).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("direct formula") {
    MatrixX zero = MatrixX::Zero(2, 2);
    momentum_update<Real>(zero, MatrixX::Ones(2, 2), 0.999);
    CHECK((zero.array() - 0.001).abs().maxCoeff() < 1e-15);
  }
  SUBCASE("step bounded by (1 - m) of the gap") {
    for (double m : {0.5, 0.9, 0.99, 0.999}) {
      MatrixX kk = k;
      momentum_update<Real>(kk, q, m);
      CHECK((kk - k).norm() <= (1.0 - m) * (q - k).norm() * (1.0 + 1e-12));
    }
  }
  SUBCASE("shape mismatch") { CHECK_THROWS_AS(momentum_update<Real>(k, MatrixX(MatrixX::Zero(2, 2)), 0.5), ShapeError); }
}
