#include "gsr/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gsr {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("pretrain config: " + what);
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void PretrainConfig::validate() const {
  require(temperature > 0.0, "temperature must be > 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
  require(queue_size >= 1, "queue_size must be >= 1");
  require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(queue_size >= batch_size, "queue_size must be >= batch_size");
  require(epochs >= 0, "epochs must be >= 0");
  require(lr > 0.0, "lr must be > 0");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(hidden_dim >= 1 && out_dim >= 1 && decoder_hidden_dim >= 1, "dimensions must be >= 1");
  require(ego_radius >= 1, "ego_radius must be >= 1");
  require(ego_fanout >= 1, "ego_fanout must be >= 1");
}

std::string PretrainConfig::canonical() const {
  std::ostringstream s;
  s << "tau=" << fmt_double(temperature) << ";m=" << fmt_double(momentum) << ";K=" << queue_size
    << ";alpha=" << fmt_double(alpha) << ";batch=" << batch_size << ";epochs=" << epochs
    << ";lr=" << fmt_double(lr) << ";wd=" << fmt_double(weight_decay) << ";hid=" << hidden_dim
    << ";out=" << out_dim << ";dec=" << decoder_hidden_dim
    << ";mode=" << (encode_mode == EncodeMode::kFullGraph ? "full" : "ego")
    << ";radius=" << ego_radius << ";fanout=" << ego_fanout
    << ";readout=" << (readout == Readout::kCenter ? "center" : "mean");
  return s.str();
}

EncodeMode default_encode_mode(NodeId num_nodes) {
  return num_nodes <= 50000 ? EncodeMode::kFullGraph : EncodeMode::kEgoSubgraph;
}

void KeyQueue::enqueue(const MatrixX& rows) {
  if (rows.cols() != storage_.cols()) throw ShapeError("KeyQueue::enqueue: dimension mismatch");
  const Eigen::Index cap = storage_.rows();
  if (cap == 0) return;
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    storage_.row(head_) = rows.row(r);
    head_ = (head_ + 1) % cap;
    size_ = std::min(size_ + 1, cap);
  }
}

MatrixX KeyQueue::ordered() const {
  MatrixX out(size_, storage_.cols());
  const Eigen::Index cap = storage_.rows();
  // Oldest entry sits at head_ once full, at 0 before.
  const Eigen::Index start = size_ == cap ? head_ : 0;
  for (Eigen::Index i = 0; i < size_; ++i) out.row(i) = storage_.row((start + i) % cap);
  return out;
}

void KeyQueue::restore(MatrixX storage, Eigen::Index head, Eigen::Index size) {
  if (head < 0 || size < 0 || size > storage.rows() || (storage.rows() > 0 && head >= storage.rows())) {
    throw ShapeError("KeyQueue::restore: inconsistent head/size");
  }
  storage_ = std::move(storage);
  head_ = head;
  size_ = size;
}

std::size_t PretrainState::decoder_index(std::size_t source, std::size_t target) const {
  const std::size_t p = num_views();
  if (source >= p || target >= p || source == target) {
    throw std::out_of_range("no decoder for view pair (" + std::to_string(source) + ", " +
                            std::to_string(target) + ")");
  }
  return source * (p - 1) + (target < source ? target : target - 1);
}

std::vector<MatrixX*> PretrainState::trainable() {
  std::vector<MatrixX*> out;
  for (auto& q : query) {
    for (auto& [name, t] : parameter_tensors(q)) out.push_back(t);
  }
  for (auto& d : decoders) {
    for (auto& [name, t] : parameter_tensors(d)) out.push_back(t);
  }
  return out;
}

std::vector<const MatrixX*> PretrainState::trainable() const {
  std::vector<const MatrixX*> out;
  for (MatrixX* t : const_cast<PretrainState*>(this)->trainable()) out.push_back(t);
  return out;
}

std::uint64_t PretrainState::fingerprint() const {
  std::uint64_t h = fnv1a(nullptr, 0);
  auto mix = [&h](const MatrixX& m) {
    const std::int64_t shape[2] = {m.rows(), m.cols()};
    h = fnv1a(shape, sizeof shape, h);
    h = fnv1a(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double), h);
  };
  for (const auto* params : {&query, &key}) {
    for (const auto& p : *params) {
      for (auto& [name, t] : parameter_tensors(p)) mix(*t);
    }
  }
  for (const auto& d : decoders) {
    for (auto& [name, t] : parameter_tensors(d)) mix(*t);
  }
  for (const auto& q : queues) mix(q.ordered());
  h = fnv1a(&optimizer.step, sizeof optimizer.step, h);
  return h;
}

PretrainInputs::PretrainInputs(const Graph& g, const ViewBundle& v)
    : graph(&g), views(&v), adjacency(normalize_adjacency<Real>(g)) {
  if (v.size() == 0) throw std::invalid_argument("pretraining needs at least one view");
  if (v.names.size() != v.matrices.size()) throw std::invalid_argument("view names/matrices mismatch");
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v.matrices[i].rows() != g.num_nodes()) {
      throw ShapeError("view '" + v.names[i] + "' has " + std::to_string(v.matrices[i].rows()) +
                       " rows; graph has " + std::to_string(g.num_nodes()) + " nodes");
    }
  }
}

namespace {

struct LocalInputs {
  NormalizedAdjacency adjacency;
  MatrixX features;
  std::vector<NodeId> nodes;
};

LocalInputs ego_inputs(const PretrainInputs& inputs, std::size_t view, NodeId center,
                       const PretrainConfig& config, Rng& rng) {
  Subgraph sub = ego_subgraph(*inputs.graph, center, config.ego_radius, config.ego_fanout, rng);
  LocalInputs local;
  local.adjacency = normalize_adjacency<Real>(sub.graph);
  local.features = gather_rows<Real>(inputs.views->matrices[view], sub.nodes);
  local.nodes = std::move(sub.nodes);
  return local;
}

MatrixX readout_row(const MatrixX& z, Readout readout) {
  if (readout == Readout::kMean) return z.colwise().mean();
  return z.row(0);
}

}  // namespace

MatrixX encode_keys(PretrainState& state, std::size_t view, std::span<const NodeId> nodes,
                    const PretrainInputs& inputs) {
  const auto& params = state.key[view];
  if (state.config.encode_mode == EncodeMode::kFullGraph) {
    const MatrixX z = gcn_forward(params, inputs.adjacency, inputs.views->matrices[view]);
    return normalized_rows(gather_rows<Real>(z, nodes));
  }
  MatrixX out(static_cast<Eigen::Index>(nodes.size()), params.layer2.out_dim());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const LocalInputs local = ego_inputs(inputs, view, nodes[i], state.config, state.rng);
    out.row(i) = readout_row(gcn_forward(params, local.adjacency, local.features), state.config.readout);
  }
  return normalized_rows(std::move(out));
}

PretrainState init_pretrain(const PretrainConfig& config, const PretrainInputs& inputs,
                            std::uint64_t seed) {
  config.validate();
  PretrainState state;
  state.config = config;
  state.view_names = inputs.views->names;
  state.rng.seed(derive_seed({seed, 0x9e7a1ULL}));
  const std::size_t p = inputs.views->size();
  for (std::size_t v = 0; v < p; ++v) {
    state.query.push_back(GcnParams<Real>::glorot(inputs.views->matrices[v].cols(), config.hidden_dim,
                                                  config.out_dim, true, state.rng));
  }
  state.key = state.query;
  for (std::size_t s = 0; s < p; ++s) {
    for (std::size_t t = 0; t < p; ++t) {
      if (s == t) continue;
      state.decoders.push_back(MlpParams<Real>::glorot(config.out_dim, config.decoder_hidden_dim,
                                                       config.out_dim, true, state.rng));
    }
  }
  state.optimizer.lr = config.lr;
  state.optimizer.weight_decay = config.weight_decay;

  const NodeId n = inputs.graph->num_nodes();
  if (n == 0) throw std::invalid_argument("init_pretrain: empty graph");
  std::vector<NodeId> prefill(config.queue_size);
  for (auto& v : prefill) v = static_cast<NodeId>(uniform_index(state.rng, n));
  for (std::size_t v = 0; v < p; ++v) {
    state.queues.emplace_back(config.queue_size, config.out_dim);
    state.queues.back().enqueue(encode_keys(state, v, prefill, inputs));
  }
  return state;
}

ContrastBatch sample_batch(const Graph& g, int batch_size, Rng& rng) {
  std::vector<NodeId> candidates;
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    if (g.degree(v) > 0) candidates.push_back(v);
  }
  if (candidates.empty()) throw std::invalid_argument("sample_batch: every node is isolated");
  ContrastBatch batch;
  batch.queries.reserve(batch_size);
  batch.keys.reserve(batch_size);
  for (int i = 0; i < batch_size; ++i) {
    const NodeId q = candidates[uniform_index(rng, candidates.size())];
    const auto nb = g.neighbors(q);
    batch.queries.push_back(q);
    batch.keys.push_back(nb[uniform_index(rng, nb.size())]);
  }
  return batch;
}

EncodedBatch encode_views(PretrainState& state, const ContrastBatch& batch,
                          const PretrainInputs& inputs) {
  EncodedBatch enc;
  auto& tape = enc.tape;
  const std::size_t p = state.num_views();
  for (std::size_t v = 0; v < p; ++v) {
    enc.query_params.push_back(bind_parameters(tape, state.query[v]));
  }
  for (const auto& d : state.decoders) enc.decoder_params.push_back(bind_parameters(tape, d));

  for (std::size_t v = 0; v < p; ++v) {
    EncodedBatch::Var zq;
    if (state.config.encode_mode == EncodeMode::kFullGraph) {
      auto z = gcn_forward(tape, enc.query_params[v], inputs.adjacency, inputs.views->matrices[v]);
      zq = tape.gather_rows(z, batch.queries);
    } else {
      std::vector<EncodedBatch::Var> rows;
      for (NodeId q : batch.queries) {
        LocalInputs local = ego_inputs(inputs, v, q, state.config, state.rng);
        enc.owned_adjacency.push_back(std::make_unique<NormalizedAdjacency>(std::move(local.adjacency)));
        enc.owned_features.push_back(std::make_unique<MatrixX>(std::move(local.features)));
        auto z = gcn_forward(tape, enc.query_params[v], *enc.owned_adjacency.back(),
                             *enc.owned_features.back());
        rows.push_back(state.config.readout == Readout::kMean ? tape.mean_rows(z)
                                                               : tape.gather_rows(z, {0}));
      }
      zq = tape.stack_rows(std::move(rows));
    }
    enc.zq.push_back(tape.normalize_rows(zq));
    enc.zk.push_back(encode_keys(state, v, batch.keys, inputs));
    enc.banks.push_back(tape.constant(state.queues[v].bank()));
  }
  return enc;
}

EncodedBatch::Var intra_view_loss(const PretrainState& state, EncodedBatch& enc) {
  auto& tape = enc.tape;
  const std::size_t p = state.num_views();
  std::vector<std::pair<Real, EncodedBatch::Var>> terms;
  for (std::size_t v = 0; v < p; ++v) {
    if (state.queues[v].size() == 0) throw std::logic_error("intra_view_loss: empty key queue");
    auto k = tape.constant(enc.zk[v]);
    terms.emplace_back(1.0 / static_cast<Real>(p),
                       info_nce(tape, enc.zq[v], k, enc.banks[v], state.config.temperature));
  }
  return tape.weighted_sum(terms);
}

EncodedBatch::Var inter_view_loss(const PretrainState& state, EncodedBatch& enc) {
  auto& tape = enc.tape;
  const std::size_t p = state.num_views();
  if (p < 2) throw std::logic_error("inter_view_loss: needs at least two views");
  if (enc.decoder_params.size() != p * (p - 1)) {
    throw std::logic_error("inter_view_loss: missing decoder for a view pair");
  }
  std::vector<std::pair<Real, EncodedBatch::Var>> terms;
  const Real weight = 1.0 / static_cast<Real>(p * (p - 1));
  for (std::size_t s = 0; s < p; ++s) {
    for (std::size_t t = 0; t < p; ++t) {
      if (s == t) continue;
      if (state.queues[t].size() == 0) throw std::logic_error("inter_view_loss: empty key queue");
      auto decoded =
          tape.normalize_rows(mlp_forward(tape, enc.decoder_params[state.decoder_index(s, t)], enc.zq[s]));
      auto k = tape.constant(enc.zk[t]);
      terms.emplace_back(weight, info_nce(tape, decoded, k, enc.banks[t], state.config.temperature));
    }
  }
  return tape.weighted_sum(terms);
}

LossAndGradients pretrain_loss_and_gradients(PretrainState& state, const ContrastBatch& batch,
                                             const PretrainInputs& inputs) {
  EncodedBatch enc = encode_views(state, batch, inputs);
  auto& tape = enc.tape;
  const auto intra = intra_view_loss(state, enc);
  const bool multi_view = state.num_views() > 1;
  const double alpha = multi_view ? state.config.alpha : 1.0;
  std::vector<std::pair<Real, EncodedBatch::Var>> mix{{alpha, intra}};
  EncodedBatch::Var inter{};
  if (multi_view) {
    inter = inter_view_loss(state, enc);
    mix.emplace_back(1.0 - alpha, inter);
  }
  const auto total = tape.weighted_sum(mix);
  tape.backward(total);

  LossAndGradients out;
  out.loss.intra = tape.scalar(intra);
  out.loss.inter = multi_view ? tape.scalar(inter) : 0.0;
  out.loss.total = tape.scalar(total);
  for (const auto& b : enc.query_params) {
    for (auto leaf : b.leaves()) out.gradients.push_back(tape.grad(leaf));
  }
  for (const auto& b : enc.decoder_params) {
    for (auto leaf : b.leaves()) out.gradients.push_back(tape.grad(leaf));
  }
  out.key_embeddings = std::move(enc.zk);
  return out;
}

LossReport pretrain_step(PretrainState& state, const ContrastBatch& batch,
                         const PretrainInputs& inputs) {
  LossAndGradients lg;
  try {
    lg = pretrain_loss_and_gradients(state, batch, inputs);
  } catch (const NonFiniteError& e) {
    throw NonFiniteError(e.op(), "pretraining step " + std::to_string(state.optimizer.step + 1) +
                                     " aborted, parameters unchanged");
  }
  auto params = state.trainable();
  optimizer_step<Real>(params, lg.gradients, state.optimizer);
  for (std::size_t v = 0; v < state.num_views(); ++v) {
    momentum_update(state.key[v], state.query[v], static_cast<Real>(state.config.momentum));
    state.queues[v].enqueue(lg.key_embeddings[v]);
  }
  return lg.loss;
}

std::vector<EpochLoss> run_pretraining(PretrainState& state, const PretrainInputs& inputs,
                                       int epochs) {
  std::vector<EpochLoss> history;
  if (epochs <= 0) return history;
  const std::size_t edges = inputs.graph->num_edges();
  const std::size_t batch = static_cast<std::size_t>(state.config.batch_size);
  const std::size_t steps = std::max<std::size_t>(1, (edges + batch - 1) / batch);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    EpochLoss row{epoch + 1, 0.0, 0.0, 0.0};
    for (std::size_t s = 0; s < steps; ++s) {
      const ContrastBatch b = sample_batch(*inputs.graph, state.config.batch_size, state.rng);
      const LossReport r = pretrain_step(state, b, inputs);
      row.intra += r.intra;
      row.inter += r.inter;
      row.total += r.total;
    }
    row.intra /= static_cast<double>(steps);
    row.inter /= static_cast<double>(steps);
    row.total /= static_cast<double>(steps);
    history.push_back(row);
  }
  return history;
}

void save_loss_history(const std::filesystem::path& path, const std::vector<EpochLoss>& history) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(path, "cannot open for writing");
  out << "epoch\tL_intra\tL_inter\tL_P\n";
  out.precision(10);
  for (const auto& r : history) {
    out << r.epoch << '\t' << r.intra << '\t' << r.inter << '\t' << r.total << '\n';
  }
}

namespace {

template <typename Params, typename Fn>
void for_each_named(const std::string& prefix, Params& p, Fn&& fn) {
  for (auto& [name, t] : parameter_tensors(p)) fn(prefix + "/" + name, *t);
}

template <typename Fn>
void for_each_state_tensor(PretrainState& state, Fn&& fn) {
  const std::size_t p = state.num_views();
  for (std::size_t v = 0; v < p; ++v) for_each_named("query/" + state.view_names[v], state.query[v], fn);
  for (std::size_t v = 0; v < p; ++v) for_each_named("key/" + state.view_names[v], state.key[v], fn);
  for (std::size_t s = 0; s < p; ++s) {
    for (std::size_t t = 0; t < p; ++t) {
      if (s == t) continue;
      for_each_named("decoder/" + state.view_names[s] + "->" + state.view_names[t],
                     state.decoders[state.decoder_index(s, t)], fn);
    }
  }
}

}  // namespace

std::uint64_t config_fingerprint(const PretrainConfig& config, const ViewBundle& views) {
  std::string s = config.canonical();
  for (std::size_t v = 0; v < views.size(); ++v) {
    s += ";view=" + views.names[v] + ":" + std::to_string(views.matrices[v].cols());
  }
  return fnv1a(s.data(), s.size());
}

Checkpoint to_checkpoint(const PretrainState& state) {
  Checkpoint ckpt;
  std::string s = state.config.canonical();
  for (std::size_t v = 0; v < state.num_views(); ++v) {
    s += ";view=" + state.view_names[v] + ":" + std::to_string(state.query[v].layer1.in_dim());
  }
  ckpt.config_fingerprint = fnv1a(s.data(), s.size());
  for_each_state_tensor(const_cast<PretrainState&>(state), [&](const std::string& name, const MatrixX& t) {
    ckpt.tensors.push_back({name, t.cast<float>()});
  });
  for (std::size_t v = 0; v < state.num_views(); ++v) {
    const auto& q = state.queues[v];
    ckpt.tensors.push_back({"queue/" + state.view_names[v], q.storage().cast<float>()});
    Eigen::MatrixXf meta(1, 2);
    meta << static_cast<float>(q.head()), static_cast<float>(q.size());
    ckpt.tensors.push_back({"queue_meta/" + state.view_names[v], meta});
  }
  return ckpt;
}

void restore_checkpoint(PretrainState& state, const Checkpoint& ckpt) {
  for_each_state_tensor(state, [&](const std::string& name, MatrixX& t) {
    if (!ckpt.contains(name)) throw ShapeError("checkpoint lacks tensor '" + name + "'");
    const Eigen::MatrixXf& src = ckpt.at(name);
    if (src.rows() != t.rows() || src.cols() != t.cols()) {
      throw ShapeError("checkpoint/view dimension mismatch for '" + name + "': checkpoint " +
                       std::to_string(src.rows()) + "x" + std::to_string(src.cols()) + ", model " +
                       std::to_string(t.rows()) + "x" + std::to_string(t.cols()));
    }
    t = src.cast<double>();
  });
  for (std::size_t v = 0; v < state.num_views(); ++v) {
    const std::string qn = "queue/" + state.view_names[v];
    const std::string mn = "queue_meta/" + state.view_names[v];
    if (!ckpt.contains(qn) || !ckpt.contains(mn)) continue;
    const auto& meta = ckpt.at(mn);
    state.queues[v].restore(ckpt.at(qn).cast<double>(), static_cast<Eigen::Index>(meta(0, 0)),
                            static_cast<Eigen::Index>(meta(0, 1)));
  }
}

}  // namespace gsr
