#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gsr/eigen_types.hpp"
#include "gsr/graph.hpp"

namespace gsr {

class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(const std::string& op)
      : std::runtime_error("non-finite value produced by op '" + op + "'"), op_(op) {}
  NonFiniteError(const std::string& op, const std::string& context)
      : std::runtime_error(context + ": non-finite value produced by op '" + op + "'"), op_(op) {}
  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Reverse-mode tape over dense matrices for the small, fixed op set the GCN
/// encoders, decoders and contrastive/classification losses need.
///
/// Values are recorded eagerly. backward() seeds d(loss)/d(loss) = 1 and walks
/// the tape in reverse; gradients of leaves created by parameter() are read back
/// with grad(). Operands passed by reference (spmm, left_matmul) must outlive
/// the tape.
template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using Sparse = SparseMatrix<Scalar>;

  struct Var {
    std::size_t id = 0;
  };

  Var constant(Mat value) { return push("constant", std::move(value), false, nullptr); }
  Var parameter(Mat value) { return push("parameter", std::move(value), true, nullptr); }

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  Scalar scalar(Var v) const { return nodes_[v.id].value(0, 0); }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient accumulated by the last backward(); zeros if `v` was unreachable.
  Mat grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  Var spmm(const Sparse& a, Var x) {
    check(a.cols() == rows(x), "spmm");
    Mat out = a * value(x);
    const Sparse* ap = &a;
    return push("spmm", std::move(out), needs(x), [ap, x](Tape& t, const Mat& g) {
      t.accumulate(x, ap->transpose() * g);
    });
  }

  Var matmul(Var a, Var b) {
    check(cols(a) == rows(b), "matmul");
    Mat out = value(a) * value(b);
    return push("matmul", std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Mat& g) {
      if (t.needs(a)) t.accumulate(a, g * t.value(b).transpose());
      if (t.needs(b)) t.accumulate(b, t.value(a).transpose() * g);
    });
  }

  /// a · b for a constant `a`; `a` must outlive the tape.
  Var left_matmul(const Mat& a, Var b) {
    check(a.cols() == rows(b), "left_matmul");
    Mat out = a * value(b);
    const Mat* ap = &a;
    return push("left_matmul", std::move(out), needs(b), [ap, b](Tape& t, const Mat& g) {
      t.accumulate(b, ap->transpose() * g);
    });
  }

  /// a · bᵀ
  Var matmul_transposed(Var a, Var b) {
    check(cols(a) == cols(b), "matmul_transposed");
    Mat out = value(a) * value(b).transpose();
    return push("matmul_transposed", std::move(out), needs(a) || needs(b),
                [a, b](Tape& t, const Mat& g) {
                  if (t.needs(a)) t.accumulate(a, g * t.value(b));
                  if (t.needs(b)) t.accumulate(b, g.transpose() * t.value(a));
                });
  }

  /// Adds a 1×cols row to every row of x.
  Var add_row(Var x, Var bias) {
    check(rows(bias) == 1 && cols(bias) == cols(x), "add_row");
    Mat out = value(x).rowwise() + value(bias).row(0);
    return push("add_row", std::move(out), needs(x) || needs(bias), [x, bias](Tape& t, const Mat& g) {
      if (t.needs(x)) t.accumulate(x, g);
      if (t.needs(bias)) t.accumulate(bias, g.colwise().sum());
    });
  }

  Var add(Var a, Var b) {
    check(rows(a) == rows(b) && cols(a) == cols(b), "add");
    Mat out = value(a) + value(b);
    return push("add", std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Mat& g) {
      if (t.needs(a)) t.accumulate(a, g);
      if (t.needs(b)) t.accumulate(b, g);
    });
  }

  Var scale(Var x, Scalar s) {
    Mat out = s * value(x);
    return push("scale", std::move(out), needs(x), [x, s](Tape& t, const Mat& g) {
      t.accumulate(x, s * g);
    });
  }

  /// Σ_i weights[i] · terms[i] for same-shaped terms.
  Var weighted_sum(std::span<const std::pair<Scalar, Var>> terms) {
    if (terms.empty()) throw ShapeError("weighted_sum: no terms");
    Mat out = Mat::Zero(rows(terms[0].second), cols(terms[0].second));
    bool grad_needed = false;
    for (const auto& [w, v] : terms) {
      check(rows(v) == out.rows() && cols(v) == out.cols(), "weighted_sum");
      out += w * value(v);
      grad_needed = grad_needed || needs(v);
    }
    std::vector<std::pair<Scalar, Var>> copy(terms.begin(), terms.end());
    return push("weighted_sum", std::move(out), grad_needed, [copy](Tape& t, const Mat& g) {
      for (const auto& [w, v] : copy) {
        if (t.needs(v)) t.accumulate(v, w * g);
      }
    });
  }

  Var sum(Var x) {
    Mat out(1, 1);
    out(0, 0) = value(x).sum();
    return push("sum", std::move(out), needs(x), [x](Tape& t, const Mat& g) {
      t.accumulate(x, Mat::Constant(t.rows(x), t.cols(x), g(0, 0)));
    });
  }

  Var relu(Var x) {
    Mat out = value(x).cwiseMax(Scalar(0));
    return push("relu", std::move(out), needs(x), [x](Tape& t, const Mat& g) {
      t.accumulate(x, (t.value(x).array() > Scalar(0)).select(g.array(), Scalar(0)).matrix());
    });
  }

  /// Elementwise product with a constant (dropout masks).
  Var mul_const(Var x, Mat mask) {
    check(mask.rows() == rows(x) && mask.cols() == cols(x), "mul_const");
    Mat out = value(x).cwiseProduct(mask);
    return push("mul_const", std::move(out), needs(x), [x, mask = std::move(mask)](Tape& t, const Mat& g) {
      t.accumulate(x, g.cwiseProduct(mask));
    });
  }

  Var gather_rows(Var x, std::vector<NodeId> index) {
    for (NodeId i : index) check(i >= 0 && i < rows(x), "gather_rows");
    Mat out = gsr::gather_rows<Scalar>(value(x), index);
    return push("gather_rows", std::move(out), needs(x), [x, index = std::move(index)](Tape& t, const Mat& g) {
      Mat full = Mat::Zero(t.rows(x), t.cols(x));
      for (std::size_t r = 0; r < index.size(); ++r) full.row(index[r]) += g.row(r);
      t.accumulate(x, full);
    });
  }

  /// Vertical concatenation.
  Var stack_rows(std::vector<Var> parts) {
    if (parts.empty()) throw ShapeError("stack_rows: no parts");
    Eigen::Index total = 0;
    bool grad_needed = false;
    for (Var p : parts) {
      check(cols(p) == cols(parts[0]), "stack_rows");
      total += rows(p);
      grad_needed = grad_needed || needs(p);
    }
    Mat out(total, cols(parts[0]));
    Eigen::Index at = 0;
    for (Var p : parts) {
      out.middleRows(at, rows(p)) = value(p);
      at += rows(p);
    }
    return push("stack_rows", std::move(out), grad_needed, [parts = std::move(parts)](Tape& t, const Mat& g) {
      Eigen::Index offset = 0;
      for (Var p : parts) {
        if (t.needs(p)) t.accumulate(p, g.middleRows(offset, t.rows(p)));
        offset += t.rows(p);
      }
    });
  }

  /// Horizontal concatenation.
  Var concat_cols(Var a, Var b) {
    check(rows(a) == rows(b), "concat_cols");
    Mat out(rows(a), cols(a) + cols(b));
    out << value(a), value(b);
    return push("concat_cols", std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Mat& g) {
      if (t.needs(a)) t.accumulate(a, g.leftCols(t.cols(a)));
      if (t.needs(b)) t.accumulate(b, g.rightCols(t.cols(b)));
    });
  }

  /// Column means, 1×cols.
  Var mean_rows(Var x) {
    check(rows(x) > 0, "mean_rows");
    Mat out = value(x).colwise().mean();
    return push("mean_rows", std::move(out), needs(x), [x](Tape& t, const Mat& g) {
      t.accumulate(x, g.replicate(t.rows(x), 1) / static_cast<Scalar>(t.rows(x)));
    });
  }

  /// Each row divided by max(‖row‖, eps).
  Var normalize_rows(Var x, Scalar eps = Scalar(1e-12)) {
    const Mat& xv = value(x);
    Vector<Scalar> norms = xv.rowwise().norm().cwiseMax(eps);
    Mat out = norms.cwiseInverse().asDiagonal() * xv;
    return push("normalize_rows", std::move(out), needs(x), [x, norms, eps](Tape& t, const Mat& g) {
      const Mat& xv = t.value(x);
      Mat gx(xv.rows(), xv.cols());
      for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        const Scalar n = norms(r);
        if (xv.row(r).norm() > eps) {
          // d(x/|x|) = (g - y (y·g)) / |x| with y = x/|x|
          const auto y = xv.row(r) / n;
          gx.row(r) = (g.row(r) - y * y.dot(g.row(r))) / n;
        } else {
          gx.row(r) = g.row(r) / n;
        }
      }
      t.accumulate(x, gx);
    });
  }

  /// Row-wise dot products, rows×1.
  Var row_dot(Var a, Var b) {
    check(rows(a) == rows(b) && cols(a) == cols(b), "row_dot");
    Mat out = value(a).cwiseProduct(value(b)).rowwise().sum();
    return push("row_dot", std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Mat& g) {
      if (t.needs(a)) t.accumulate(a, g.col(0).asDiagonal() * t.value(b));
      if (t.needs(b)) t.accumulate(b, g.col(0).asDiagonal() * t.value(a));
    });
  }

  /// Mean over `rows_used` of -log softmax(logits[r])[targets[k]], with
  /// max-subtraction. rows_used empty means every row, in order.
  Var softmax_cross_entropy(Var logits, std::vector<int> targets, std::vector<NodeId> rows_used = {}) {
    if (rows_used.empty()) {
      rows_used.resize(rows(logits));
      for (Eigen::Index r = 0; r < rows(logits); ++r) rows_used[r] = static_cast<NodeId>(r);
    }
    if (targets.size() != rows_used.size() || rows_used.empty()) {
      throw ShapeError("softmax_cross_entropy: targets/rows mismatch or empty");
    }
    const Mat& z = value(logits);
    Mat probs(rows_used.size(), z.cols());
    Scalar loss = 0;
    for (std::size_t k = 0; k < rows_used.size(); ++k) {
      const NodeId r = rows_used[k];
      check(r >= 0 && r < z.rows() && targets[k] >= 0 && targets[k] < z.cols(),
            "softmax_cross_entropy");
      const Scalar mx = z.row(r).maxCoeff();
      auto e = (z.row(r).array() - mx).exp();
      const Scalar denom = e.sum();
      probs.row(k) = e / denom;
      loss -= z(r, targets[k]) - mx - std::log(denom);
    }
    const Scalar count = static_cast<Scalar>(rows_used.size());
    Mat out(1, 1);
    out(0, 0) = loss / count;
    return push("softmax_cross_entropy", std::move(out), needs(logits),
                [logits, probs = std::move(probs), targets = std::move(targets),
                 rows_used = std::move(rows_used), count](Tape& t, const Mat& g) {
                  Mat gz = Mat::Zero(t.rows(logits), t.cols(logits));
                  for (std::size_t k = 0; k < rows_used.size(); ++k) {
                    gz.row(rows_used[k]) += probs.row(k);
                    gz(rows_used[k], targets[k]) -= Scalar(1);
                  }
                  t.accumulate(logits, (g(0, 0) / count) * gz);
                });
  }

  /// Reverse sweep from a 1×1 node.
  void backward(Var loss) {
    if (rows(loss) != 1 || cols(loss) != 1) throw ShapeError("backward: loss must be 1x1");
    for (Node& n : nodes_) n.grad.resize(0, 0);
    nodes_[loss.id].grad = Mat::Ones(1, 1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      Mat g = std::move(n.grad);
      n.backward(*this, g);
      nodes_[i].grad = std::move(g);
    }
  }

 private:
  struct Node {
    const char* op;
    Mat value;
    Mat grad;
    bool requires_grad;
    std::function<void(Tape&, const Mat&)> backward;
  };

  Eigen::Index rows(Var v) const { return nodes_[v.id].value.rows(); }
  Eigen::Index cols(Var v) const { return nodes_[v.id].value.cols(); }
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }

  static void check(bool ok, const char* op) {
    if (!ok) throw ShapeError(std::string("shape mismatch in op '") + op + "'");
  }

  void accumulate(Var v, const Mat& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  Var push(const char* op, Mat value, bool requires_grad, std::function<void(Tape&, const Mat&)> backward) {
    if (!value.allFinite()) throw NonFiniteError(op);
    nodes_.push_back(Node{op, std::move(value), Mat(), requires_grad,
                          requires_grad ? std::move(backward) : nullptr});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace gsr
