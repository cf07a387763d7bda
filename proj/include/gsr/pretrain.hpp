#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gsr/autodiff.hpp"
#include "gsr/checkpoint.hpp"
#include "gsr/data_io.hpp"
#include "gsr/graph.hpp"
#include "gsr/nn.hpp"

namespace gsr {

enum class EncodeMode { kFullGraph, kEgoSubgraph };
enum class Readout { kCenter, kMean };

struct PretrainConfig {
  double temperature = 0.07;
  double momentum = 0.999;
  int queue_size = 1023;
  double alpha = 0.75;
  int batch_size = 256;
  int epochs = 50;
  double lr = 1e-3;
  double weight_decay = 0.0;
  int hidden_dim = 256;
  int out_dim = 128;
  int decoder_hidden_dim = 128;
  EncodeMode encode_mode = EncodeMode::kFullGraph;
  int ego_radius = 2;
  int ego_fanout = 10;
  Readout readout = Readout::kCenter;

  /// Throws std::invalid_argument naming the first out-of-range field.
  void validate() const;
  /// Stable textual form; hashed into checkpoint fingerprints.
  std::string canonical() const;
};

/// Full-graph encoding up to 50k nodes, ego-subgraphs above.
EncodeMode default_encode_mode(NodeId num_nodes);

/// Ring buffer of the K most recent key embeddings.
class KeyQueue {
 public:
  KeyQueue() = default;
  KeyQueue(Eigen::Index capacity, Eigen::Index dim) : storage_(MatrixX::Zero(capacity, dim)) {}

  /// Appends rows, overwriting the oldest once full.
  void enqueue(const MatrixX& rows);
  Eigen::Index size() const { return size_; }
  Eigen::Index capacity() const { return storage_.rows(); }
  /// Rows currently held, in storage order (order is irrelevant to the loss).
  MatrixX bank() const { return storage_.topRows(size_); }
  /// Rows ordered oldest to newest.
  MatrixX ordered() const;

  const MatrixX& storage() const { return storage_; }
  Eigen::Index head() const { return head_; }
  void restore(MatrixX storage, Eigen::Index head, Eigen::Index size);

 private:
  MatrixX storage_;
  Eigen::Index head_ = 0;
  Eigen::Index size_ = 0;
};

struct PretrainState {
  PretrainConfig config;
  std::vector<std::string> view_names;
  std::vector<GcnParams<Real>> query;
  std::vector<GcnParams<Real>> key;
  // decoders[decoder_index(s, t)] maps view s embeddings into view t space.
  std::vector<MlpParams<Real>> decoders;
  std::vector<KeyQueue> queues;
  AdamState<Real> optimizer;
  Rng rng;

  std::size_t num_views() const { return query.size(); }
  std::size_t decoder_index(std::size_t source, std::size_t target) const;

  /// Optimized tensors: every query encoder, then every decoder.
  std::vector<MatrixX*> trainable();
  std::vector<const MatrixX*> trainable() const;

  std::uint64_t fingerprint() const;
};

/// Graph, views and the cached normalized adjacency used during pretraining.
struct PretrainInputs {
  const Graph* graph = nullptr;
  const ViewBundle* views = nullptr;
  NormalizedAdjacency adjacency;

  PretrainInputs(const Graph& g, const ViewBundle& v);
};

PretrainState init_pretrain(const PretrainConfig& config, const PretrainInputs& inputs,
                            std::uint64_t seed);

/// Query nodes and one positive key neighbor per query.
struct ContrastBatch {
  std::vector<NodeId> queries;
  std::vector<NodeId> keys;
};

ContrastBatch sample_batch(const Graph& g, int batch_size, Rng& rng);

/// One step's recorded forward pass. zq are tape variables; zk are
/// gradient-free key embeddings. All rows are L2-normalized.
struct EncodedBatch {
  using Var = Tape<Real>::Var;
  Tape<Real> tape;
  std::vector<BoundLayers<Real>> query_params;
  std::vector<BoundLayers<Real>> decoder_params;
  std::vector<Var> zq;
  std::vector<MatrixX> zk;
  std::vector<Var> banks;
  // Subgraph inputs referenced by the tape in ego-subgraph mode.
  std::vector<std::unique_ptr<NormalizedAdjacency>> owned_adjacency;
  std::vector<std::unique_ptr<MatrixX>> owned_features;
};

EncodedBatch encode_views(PretrainState& state, const ContrastBatch& batch,
                          const PretrainInputs& inputs);

/// Key-encoder embeddings for `nodes`, normalized; no tape.
MatrixX encode_keys(PretrainState& state, std::size_t view, std::span<const NodeId> nodes,
                    const PretrainInputs& inputs);

/// (1/|Φ|) Σ_φ InfoNCE(zq^φ, zk+^φ, queue^φ)
EncodedBatch::Var intra_view_loss(const PretrainState& state, EncodedBatch& encoded);

/// Mean over ordered view pairs (s,t), s≠t, of InfoNCE(g^{s,t}(zq^s), zk+^t, queue^t).
EncodedBatch::Var inter_view_loss(const PretrainState& state, EncodedBatch& encoded);

struct LossReport {
  double intra = 0.0;
  double inter = 0.0;
  double total = 0.0;
};

struct LossAndGradients {
  LossReport loss;
  // Aligned with PretrainState::trainable().
  std::vector<MatrixX> gradients;
  std::vector<MatrixX> key_embeddings;
};

/// α·L_intra + (1−α)·L_inter and its gradients; does not modify parameters.
LossAndGradients pretrain_loss_and_gradients(PretrainState& state, const ContrastBatch& batch,
                                             const PretrainInputs& inputs);

/// Optimizer step on query encoders and decoders, momentum update of key
/// encoders from the updated query encoders, then enqueue this batch's keys.
LossReport pretrain_step(PretrainState& state, const ContrastBatch& batch,
                         const PretrainInputs& inputs);

struct EpochLoss {
  int epoch = 0;
  double intra = 0.0;
  double inter = 0.0;
  double total = 0.0;
};

/// epochs × ⌈|E| / batch_size⌉ steps; returns per-epoch mean losses.
std::vector<EpochLoss> run_pretraining(PretrainState& state, const PretrainInputs& inputs,
                                       int epochs);

void save_loss_history(const std::filesystem::path& path, const std::vector<EpochLoss>& history);

Checkpoint to_checkpoint(const PretrainState& state);
/// Overwrites parameters (and queues, when present) of a state built by
/// init_pretrain with matching config and view dimensions.
void restore_checkpoint(PretrainState& state, const Checkpoint& ckpt);

std::uint64_t config_fingerprint(const PretrainConfig& config, const ViewBundle& views);

}  // namespace gsr
