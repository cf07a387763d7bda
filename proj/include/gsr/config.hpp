#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gsr/deepwalk.hpp"
#include "gsr/finetune.hpp"
#include "gsr/pretrain.hpp"
#include "gsr/refine.hpp"

namespace gsr {

struct DeepWalkSettings {
  int walks_per_node = 10;
  int walk_length = 40;
  SkipGramConfig skipgram;
};

struct RefineSettings {
  double beta_feature = 0.5;
  NormMode norm_mode = NormMode::kMinMax;
  std::optional<CandidateStrategy> candidates;  // unset: chosen from graph size
  int topk = 100;
  // Edit counts as fractions of |E|, used unless explicit counts are set.
  double add_ratio = 0.25;
  double remove_ratio = 0.05;
  std::optional<std::size_t> m_plus;
  std::optional<std::size_t> m_minus;
  bool write_scores = false;

  std::size_t resolved_m_plus(std::size_t num_edges) const;
  std::size_t resolved_m_minus(std::size_t num_edges) const;
  RefineConfig resolve(NodeId num_nodes, std::size_t num_edges) const;
};

/// Full run description. Serialized as JSON:
///
///   { "dataset": "...", "seeds": [0,1,2,3,4], "jobs": 1, "output": "results",
///     "deepwalk": { "walks_per_node", "walk_length", "dim", "window",
///                   "negatives", "epochs", "lr" },
///     "pretrain": { "temperature", "momentum", "queue_size", "alpha",
///                   "batch_size", "epochs", "lr", "weight_decay", "hidden_dim",
///                   "out_dim", "decoder_hidden_dim",
///                   "encode_mode": "auto"|"full"|"ego", "ego_radius",
///                   "ego_fanout", "readout": "center"|"mean" },
///     "refine":   { "beta_feature", "norm_mode": "minmax"|"rank",
///                   "candidates": "auto"|"all-pairs"|"topk", "topk",
///                   "add_ratio", "remove_ratio", "m_plus", "m_minus",
///                   "write_scores" },
///     "finetune": { "init": "transfer"|"random", "epochs", "patience", "lr",
///                   "weight_decay", "dropout" } }
///
/// Every key is optional; unknown keys are rejected. "m_plus"/"m_minus" may be
/// null to fall back to the ratios.
struct RunConfig {
  std::string dataset;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int jobs = 1;
  std::filesystem::path output = "results";
  DeepWalkSettings deepwalk;
  PretrainConfig pretrain;
  bool encode_mode_auto = true;
  RefineSettings refine;
  FinetuneConfig finetune;
  InitMode init = InitMode::kTransfer;

  /// Range checks for every section; throws std::invalid_argument.
  void validate() const;

  std::string to_json(int indent = 2) const;
  /// Canonical form excluding output location and job count.
  std::string canonical() const;
  std::uint64_t fingerprint() const;

  /// Pretraining settings with the encode mode resolved for `num_nodes`.
  PretrainConfig resolved_pretrain(NodeId num_nodes) const;
};

RunConfig parse_run_config(const std::string& json_text, const std::vector<std::string>& overrides = {});
/// Loads a config file (or defaults when `path` is empty) and applies
/// "section.key=value" overrides; values parse as JSON, else as strings.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace gsr
