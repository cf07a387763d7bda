#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gsr/graph.hpp"
#include "gsr/nn.hpp"
#include "gsr/pretrain.hpp"

namespace gsr {

enum class InitMode { kTransfer, kRandom };

const char* to_string(InitMode mode);
InitMode parse_init_mode(const std::string& s);

/// Two-layer GCN body followed by a linear head d_out → C.
struct FinetuneModel {
  GcnParams<Real> body;
  DenseLayer<Real> head;

  Eigen::Index num_classes() const { return head.out_dim(); }
  friend bool operator==(const FinetuneModel&, const FinetuneModel&) = default;
};

/// Transfer copies the feature-view (view 0) query encoder into the body;
/// random draws a fresh body of the same shape. The head is always fresh.
FinetuneModel init_finetune(const PretrainState& pretrained, int num_classes, std::uint64_t seed,
                            InitMode mode);

/// Fresh model without a pretrained state.
FinetuneModel random_finetune_model(Eigen::Index in_dim, Eigen::Index hidden_dim, Eigen::Index out_dim,
                                    int num_classes, std::uint64_t seed);

struct FinetuneConfig {
  int epochs = 500;
  int patience = 100;
  double lr = 1e-2;
  double weight_decay = 5e-4;
  double dropout = 0.5;

  void validate() const;
  std::string canonical() const;
};

struct FinetuneEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct FinetuneResult {
  FinetuneModel model;  // parameters from the best validation epoch
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::vector<FinetuneEpoch> history;
};

/// Logits for every node; no dropout.
MatrixX predict(const FinetuneModel& model, const NormalizedAdjacency& adj, const MatrixX& x);

/// Mean cross-entropy over `rows` and its gradients, aligned with finetune_parameters().
/// Masks, when non-null, apply inverted dropout to inputs and hidden activations.
struct FinetuneLoss {
  double loss = 0.0;
  std::vector<MatrixX> gradients;
};

FinetuneLoss finetune_loss_and_gradients(const FinetuneModel& model, const NormalizedAdjacency& adj,
                                         const MatrixX& x, std::span<const int> labels,
                                         std::span<const NodeId> rows, const MatrixX* input_mask = nullptr,
                                         const MatrixX* hidden_mask = nullptr);

/// Body tensors (w1, b1, w2, b2) then head (weight, bias).
std::vector<MatrixX*> finetune_parameters(FinetuneModel& model);

/// Cross-entropy on the training nodes with early stopping on validation
/// accuracy; returns the best-validation parameters.
FinetuneResult finetune(FinetuneModel model, const NormalizedAdjacency& adj, const MatrixX& x,
                        const LabeledSplit& split, const FinetuneConfig& config, std::uint64_t seed);

/// Fraction of `mask` nodes whose argmax logit equals the label.
double evaluate(const FinetuneModel& model, const NormalizedAdjacency& adj, const MatrixX& x,
                std::span<const int> labels, std::span<const NodeId> mask);
double accuracy(const MatrixX& logits, std::span<const int> labels, std::span<const NodeId> mask);

}  // namespace gsr
