#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsr/config.hpp"
#include "gsr/data_io.hpp"
#include "gsr/finetune.hpp"
#include "gsr/pretrain.hpp"
#include "gsr/refine.hpp"

namespace gsr {

/// Failure inside one pipeline stage; `stage()` names it.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// DeepWalk structural embedding X^S for `seed`.
MatrixX structural_embedding(const Graph& g, const DeepWalkSettings& settings, std::uint64_t seed);

/// Views "F" (dataset features) and "S" (structure).
ViewBundle make_views(const Dataset& data, MatrixX structure);

/// Seed streams used by the pipeline stages.
std::uint64_t deepwalk_seed(std::uint64_t seed);
std::uint64_t pretrain_seed(std::uint64_t seed);

struct SeedRun {
  std::uint64_t seed = 0;
  double test_accuracy = 0.0;
  double val_accuracy = 0.0;
  int best_epoch = 0;
  double homophily_after = 0.0;
  std::size_t added = 0;
  std::size_t removed = 0;
  std::uint64_t plan_fingerprint = 0;
  std::uint64_t pretrain_fingerprint = 0;
  double seconds = 0.0;  // wall clock, excluded from fingerprints
};

struct ExperimentReport {
  std::string dataset;
  std::string variant = "full";
  std::string config_json;  // canonical config
  std::uint64_t config_fingerprint = 0;
  std::vector<SeedRun> runs;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // sample standard deviation; 0 for one seed
  double homophily_before = 0.0;
  double homophily_after = 0.0;  // mean over seeds
  std::size_t m_plus = 0;
  std::size_t m_minus = 0;
  std::vector<std::string> stages;
  bool per_point_pretraining = false;
  std::vector<std::string> warnings;

  /// Recomputes mean and std from `runs`.
  void aggregate();
  /// Hash of the config, variant and every per-seed outcome except timing.
  std::uint64_t fingerprint() const;
  std::string to_json(int indent = 2) const;
  std::string to_text() const;
};

/// Intermediate state for one seed, reusable across refinement settings.
struct PreparedSeed {
  std::uint64_t seed = 0;
  std::optional<PretrainState> state;
  std::vector<EpochLoss> history;
  ViewEmbeddings embeddings;
  std::vector<std::string> stages;
};

/// DeepWalk and pretraining for one seed; skipped when `needs_pretraining` is false.
PreparedSeed prepare_seed(const Dataset& data, const RunConfig& config, std::uint64_t seed,
                          bool needs_pretraining);

/// Refinement, fine-tuning and evaluation with the refinement settings in `config`.
SeedRun finish_seed(const Dataset& data, const RunConfig& config, const PreparedSeed& prepared,
                    RefinementPlan* plan_out = nullptr, std::vector<std::string>* warnings = nullptr);

/// Whether `config` needs DeepWalk and pretraining at all.
bool needs_pretraining(const RunConfig& config, std::size_t num_edges);

struct PipelineOptions {
  std::string variant = "full";
  // When set, per-seed plans and loss histories are written under it.
  std::optional<std::filesystem::path> artifacts_dir;
};

ExperimentReport run_pipeline(const Dataset& data, const RunConfig& config, const PipelineOptions& options = {});

inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v{"full", "no-inter", "random-init", "orig-graph", "feat-graph",
                                          "struct-graph"};
  return v;
}

/// `config` adjusted for an ablation variant; throws on unknown names.
RunConfig ablation_config(const RunConfig& config, const std::string& variant);

ExperimentReport run_ablation(const Dataset& data, const RunConfig& config, const std::string& variant,
                              const PipelineOptions& options = {});

enum class SweepAxis { kMPlus, kMMinus, kAlpha, kBetaFeature };

SweepAxis parse_sweep_axis(const std::string& s);
const char* to_string(SweepAxis axis);

struct SweepResult {
  SweepAxis axis = SweepAxis::kMPlus;
  std::vector<double> grid;
  std::vector<ExperimentReport> points;
};

/// Throws std::invalid_argument for grid values outside the axis range:
/// m_plus ∈ [0, |E|], m_minus ∈ [0, 0.5|E|], alpha and beta_F ∈ [0, 1].
void validate_sweep_grid(SweepAxis axis, const std::vector<double>& grid, std::size_t num_edges);

/// One report per grid point. Pretraining runs once per seed and is shared by
/// every point, except on the alpha axis. Edit-count axes hold the other count at 0.
SweepResult run_sweep(const Dataset& data, const RunConfig& config, SweepAxis axis, const std::vector<double>& grid);

/// report.json, report.txt and runs.jsonl (one record per seed).
void write_report(const std::filesystem::path& dir, const ExperimentReport& report);
/// series.tsv (x, mean, std), points.jsonl and one report per point.
void write_sweep(const std::filesystem::path& dir, const SweepResult& sweep);

std::uint64_t plan_fingerprint(const RefinementPlan& plan);
std::string hex64(std::uint64_t v);

}  // namespace gsr
