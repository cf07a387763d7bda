#include "gsr/finetune.hpp"

#include <sstream>
#include <stdexcept>

namespace gsr {

const char* to_string(InitMode mode) { return mode == InitMode::kTransfer ? "transfer" : "random"; }

InitMode parse_init_mode(const std::string& s) {
  if (s == "transfer") return InitMode::kTransfer;
  if (s == "random") return InitMode::kRandom;
  throw std::invalid_argument("unknown init mode '" + s + "' (expected transfer or random)");
}

namespace {

constexpr std::uint64_t kHeadStream = 0x4ead;
constexpr std::uint64_t kBodyStream = 0xb0d7;
constexpr std::uint64_t kDropoutStream = 0xd20f;

DenseLayer<Real> fresh_head(Eigen::Index in, int num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("fine-tuning needs at least 2 classes, got " + std::to_string(num_classes));
  Rng rng(derive_seed({seed, kHeadStream}));
  return glorot_layer<Real>(in, num_classes, true, rng);
}

MatrixX dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  MatrixX m(rows, cols);
  const double keep = 1.0 - p;
  const double scale = keep > 0.0 ? 1.0 / keep : 0.0;
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform_real(rng) < keep ? scale : 0.0;
  return m;
}

}  // namespace

FinetuneModel init_finetune(const PretrainState& pretrained, int num_classes, std::uint64_t seed,
                            InitMode mode) {
  if (pretrained.num_views() == 0) throw std::invalid_argument("init_finetune: pretrained state has no views");
  const auto& source = pretrained.query[0];
  FinetuneModel model;
  model.head = fresh_head(source.layer2.out_dim(), num_classes, seed);
  if (mode == InitMode::kTransfer) {
    model.body = source;
  } else {
    Rng rng(derive_seed({seed, kBodyStream}));
    model.body = GcnParams<Real>::glorot(source.layer1.in_dim(), source.layer1.out_dim(),
                                         source.layer2.out_dim(), source.layer1.has_bias(), rng);
  }
  return model;
}

FinetuneModel random_finetune_model(Eigen::Index in_dim, Eigen::Index hidden_dim, Eigen::Index out_dim,
                                    int num_classes, std::uint64_t seed) {
  FinetuneModel model;
  model.head = fresh_head(out_dim, num_classes, seed);
  Rng rng(derive_seed({seed, kBodyStream}));
  model.body = GcnParams<Real>::glorot(in_dim, hidden_dim, out_dim, true, rng);
  return model;
}

void FinetuneConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("finetune config: epochs must be >= 1");
  if (patience < 1) throw std::invalid_argument("finetune config: patience must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("finetune config: lr must be > 0");
  if (weight_decay < 0.0) throw std::invalid_argument("finetune config: weight_decay must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("finetune config: dropout must lie in [0, 1)");
}

std::string FinetuneConfig::canonical() const {
  std::ostringstream s;
  s.precision(17);
  s << "epochs=" << epochs << ";patience=" << patience << ";lr=" << lr << ";wd=" << weight_decay
    << ";dropout=" << dropout;
  return s.str();
}

MatrixX predict(const FinetuneModel& model, const NormalizedAdjacency& adj, const MatrixX& x) {
  MatrixX z = gcn_forward(model.body, adj, x) * model.head.weight;
  if (model.head.has_bias()) z.rowwise() += model.head.bias.row(0);
  return z;
}

std::vector<MatrixX*> finetune_parameters(FinetuneModel& model) {
  std::vector<MatrixX*> out;
  for (auto& [name, t] : parameter_tensors(model.body)) out.push_back(t);
  out.push_back(&model.head.weight);
  if (model.head.has_bias()) out.push_back(&model.head.bias);
  return out;
}

FinetuneLoss finetune_loss_and_gradients(const FinetuneModel& model, const NormalizedAdjacency& adj,
                                         const MatrixX& x, std::span<const int> labels,
                                         std::span<const NodeId> rows, const MatrixX* input_mask,
                                         const MatrixX* hidden_mask) {
  if (rows.empty()) throw std::invalid_argument("fine-tuning: empty training mask");
  Tape<Real> tape;
  const auto body = bind_parameters(tape, model.body);
  const auto w = tape.parameter(model.head.weight);
  const auto b = model.head.has_bias() ? tape.parameter(model.head.bias) : w;
  MatrixX dropped;
  const MatrixX* input = &x;
  if (input_mask != nullptr) {
    dropped = x.cwiseProduct(*input_mask);
    input = &dropped;
  }
  auto logits = tape.matmul(gcn_forward(tape, body, adj, *input, hidden_mask), w);
  if (model.head.has_bias()) logits = tape.add_row(logits, b);
  const auto loss = cross_entropy(tape, logits, labels, rows);
  tape.backward(loss);
  FinetuneLoss out;
  out.loss = tape.scalar(loss);
  for (auto leaf : body.leaves()) out.gradients.push_back(tape.grad(leaf));
  out.gradients.push_back(tape.grad(w));
  if (model.head.has_bias()) out.gradients.push_back(tape.grad(b));
  return out;
}

FinetuneResult finetune(FinetuneModel model, const NormalizedAdjacency& adj, const MatrixX& x,
                        const LabeledSplit& split, const FinetuneConfig& config, std::uint64_t seed) {
  config.validate();
  if (split.train.empty()) throw std::invalid_argument("fine-tuning: empty training mask");
  if (adj.rows() != x.rows()) throw ShapeError("fine-tuning: adjacency and feature rows differ");
  AdamState<Real> adam;
  adam.lr = config.lr;
  adam.weight_decay = config.weight_decay;
  Rng rng(derive_seed({seed, kDropoutStream}));
  const bool use_val = !split.val.empty();

  FinetuneResult result;
  result.model = model;
  result.best_val_accuracy = -1.0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    FinetuneLoss lg;
    if (config.dropout > 0.0) {
      const MatrixX in_mask = dropout_mask(x.rows(), x.cols(), config.dropout, rng);
      const MatrixX hid_mask = dropout_mask(x.rows(), model.body.layer1.out_dim(), config.dropout, rng);
      lg = finetune_loss_and_gradients(model, adj, x, split.labels, split.train, &in_mask, &hid_mask);
    } else {
      lg = finetune_loss_and_gradients(model, adj, x, split.labels, split.train);
    }
    auto params = finetune_parameters(model);
    optimizer_step<Real>(params, lg.gradients, adam);

    const MatrixX logits = predict(model, adj, x);
    const double val = accuracy(logits, split.labels, use_val ? split.val : split.train);
    result.history.push_back({epoch, lg.loss, val});
    if (val > result.best_val_accuracy) {
      result.best_val_accuracy = val;
      result.best_epoch = epoch;
      result.model = model;
    } else if (epoch - result.best_epoch >= config.patience) {
      break;
    }
  }
  return result;
}

double accuracy(const MatrixX& logits, std::span<const int> labels, std::span<const NodeId> mask) {
  if (mask.empty()) throw std::invalid_argument("evaluate: empty mask");
  std::size_t correct = 0;
  for (NodeId v : mask) {
    if (v < 0 || v >= logits.rows()) throw std::out_of_range("evaluate: node id out of range");
    Eigen::Index best = 0;
    logits.row(v).maxCoeff(&best);
    if (best == labels[v]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(mask.size());
}

double evaluate(const FinetuneModel& model, const NormalizedAdjacency& adj, const MatrixX& x,
                std::span<const int> labels, std::span<const NodeId> mask) {
  if (mask.empty()) throw std::invalid_argument("evaluate: empty mask");
  return accuracy(predict(model, adj, x), labels, mask);
}

}  // namespace gsr
