// gsr: command-line driver for the pretrain / refine / fine-tune pipeline.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gsr/checkpoint.hpp"
#include "gsr/config.hpp"
#include "gsr/data_io.hpp"
#include "gsr/pipeline.hpp"

namespace fs = std::filesystem;
using namespace gsr;

namespace {

constexpr int kExitStage = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string dataset;
  std::string out;
  long long seed = -1;
  int jobs = 0;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON run config");
  cmd->add_option("--set", o.overrides, "Override a config value, e.g. pretrain.epochs=5")->take_all();
  cmd->add_option("--dataset", o.dataset, "Dataset manifest, directory, or name under $GSR_DATA_DIR");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--seed", o.seed, "Run a single seed");
  cmd->add_option("--jobs", o.jobs, "Parallel seeds / grid points");
}

RunConfig resolve_config(const CommonOptions& o) {
  RunConfig c;
  try {
    c = load_run_config(o.config_path, o.overrides);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  if (!o.dataset.empty()) c.dataset = o.dataset;
  if (!o.out.empty()) c.output = o.out;
  if (o.seed >= 0) c.seeds = {static_cast<std::uint64_t>(o.seed)};
  if (o.jobs > 0) c.jobs = o.jobs;
  if (c.dataset.empty()) throw UsageError("no dataset given (use --dataset or the config's \"dataset\")");
  return c;
}

Dataset load_config_dataset(const RunConfig& c) {
  try {
    return load_dataset(resolve_dataset(c.dataset));
  } catch (const std::exception& e) {
    throw StageError("load", e.what());
  }
}

void write_config_copy(const RunConfig& c) {
  fs::create_directories(c.output);
  std::ofstream(c.output / "config.json") << c.to_json() << "\n";
}

MatrixX load_or_embed(const RunConfig& c, const Dataset& data, const std::string& path_opt, bool save) {
  const fs::path path = path_opt.empty() ? c.output / "structure.gsrm" : fs::path(path_opt);
  if (fs::exists(path)) {
    MatrixX s = load_any_matrix(path).cast<double>();
    if (s.rows() != data.graph.num_nodes()) {
      throw StageError("load", path.string() + ": " + std::to_string(s.rows()) + " rows for " +
                                   std::to_string(data.graph.num_nodes()) + " nodes");
    }
    return s;
  }
  if (!path_opt.empty()) throw StageError("load", path.string() + ": structure embedding not found");
  MatrixX s;
  try {
    s = structural_embedding(data.graph, c.deepwalk, deepwalk_seed(c.seeds.front()));
  } catch (const std::exception& e) {
    throw StageError("deepwalk", e.what());
  }
  if (save) save_matrix(path, s.cast<float>());
  return s;
}

PretrainState restore_state(const RunConfig& c, const PretrainInputs& inputs, const fs::path& path) {
  try {
    const Checkpoint ckpt = load_checkpoint(path);
    PretrainState state = init_pretrain(c.resolved_pretrain(inputs.graph->num_nodes()), inputs,
                                        pretrain_seed(c.seeds.front()));
    if (ckpt.config_fingerprint != config_fingerprint(state.config, *inputs.views)) {
      std::cerr << "warning: " << path.string() << " was written with a different pretraining config\n";
    }
    restore_checkpoint(state, ckpt);
    return state;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("checkpoint", e.what());
  }
}

void print_report(const ExperimentReport& r) { std::cout << r.to_text(); }

int cmd_make_sbm(const std::string& out, const SbmConfig& cfg) {
  const SbmSample s = generate_sbm(cfg);
  const fs::path manifest = save_dataset(out, s.data, true);
  std::ofstream noise(fs::path(out) / "noise_edges.tsv");
  for (const auto& e : s.noise_edges) noise << e.u << '\t' << e.v << '\n';
  std::cout << "wrote " << manifest.string() << " (" << s.data.graph.num_nodes() << " nodes, "
            << s.data.graph.num_edges() << " edges, " << s.noise_edges.size() << " noise edges)\n";
  return 0;
}

int cmd_embed(const CommonOptions& o) {
  const RunConfig c = resolve_config(o);
  const Dataset data = load_config_dataset(c);
  write_config_copy(c);
  MatrixX s;
  try {
    s = structural_embedding(data.graph, c.deepwalk, deepwalk_seed(c.seeds.front()));
  } catch (const std::exception& e) {
    throw StageError("deepwalk", e.what());
  }
  const fs::path path = c.output / "structure.gsrm";
  save_matrix(path, s.cast<float>());
  std::cout << "wrote " << path.string() << " (" << s.rows() << " x " << s.cols() << ")\n";
  return 0;
}

int cmd_pretrain(const CommonOptions& o, const std::string& structure) {
  const RunConfig c = resolve_config(o);
  const Dataset data = load_config_dataset(c);
  write_config_copy(c);
  const ViewBundle views = make_views(data, load_or_embed(c, data, structure, true));
  try {
    const PretrainInputs inputs(data.graph, views);
    PretrainState state = init_pretrain(c.resolved_pretrain(data.graph.num_nodes()), inputs,
                                        pretrain_seed(c.seeds.front()));
    const auto history = run_pretraining(state, inputs, state.config.epochs);
    Checkpoint ckpt = to_checkpoint(state);
    save_checkpoint(c.output / "checkpoint.gsrc", ckpt);
    save_loss_history(c.output / "pretrain_history.tsv", history);
    std::cout << "wrote " << (c.output / "checkpoint.gsrc").string() << " (state " << hex64(state.fingerprint())
              << ", " << history.size() << " epochs)\n";
    if (!history.empty()) {
      std::printf("final L_intra %.6f  L_inter %.6f  L_P %.6f\n", history.back().intra, history.back().inter,
                  history.back().total);
    }
  } catch (const std::exception& e) {
    throw StageError("pretrain", e.what());
  }
  return 0;
}

int cmd_refine(const CommonOptions& o, const std::string& structure, const std::string& checkpoint, bool scores_flag) {
  const RunConfig c = resolve_config(o);
  const Dataset data = load_config_dataset(c);
  write_config_copy(c);
  const ViewBundle views = make_views(data, load_or_embed(c, data, structure, false));
  const PretrainInputs inputs(data.graph, views);
  const PretrainState state =
      restore_state(c, inputs, checkpoint.empty() ? c.output / "checkpoint.gsrc" : fs::path(checkpoint));
  try {
    const RefineConfig rc = c.refine.resolve(data.graph.num_nodes(), data.graph.num_edges());
    const EdgeScores scores = score_pairs(embed_all_nodes(state, inputs), rc, data.graph);
    for (const auto& w : scores.warnings) std::cerr << "warning: " << w << "\n";
    const RefinementPlan plan = select_refinement(scores, data.graph, rc.m_plus, rc.m_minus);
    save_plan(c.output / "plan.diff", plan);
    if (scores_flag || c.refine.write_scores) save_score_table(c.output / "scores.tsv", scores);
    const Graph refined = apply_refinement(data.graph, plan);
    std::printf("plan: +%zu -%zu  homophily %.4f -> %.4f\n", plan.add.size(), plan.remove.size(),
                homophily_ratio(data.graph, data.split.labels).ratio,
                homophily_ratio(refined, data.split.labels).ratio);
  } catch (const std::exception& e) {
    throw StageError("refine", e.what());
  }
  return 0;
}

int cmd_finetune(const CommonOptions& o, const std::string& structure, const std::string& checkpoint,
                 const std::string& plan_path) {
  const RunConfig c = resolve_config(o);
  const Dataset data = load_config_dataset(c);
  write_config_copy(c);
  RefinementPlan plan;
  if (!plan_path.empty()) {
    try {
      plan = load_plan(plan_path);
    } catch (const std::exception& e) {
      throw StageError("load", e.what());
    }
  }
  const Graph refined = [&] {
    try {
      return apply_refinement(data.graph, plan);
    } catch (const std::exception& e) {
      throw StageError("refine", e.what());
    }
  }();
  std::optional<PretrainState> state;
  std::optional<ViewBundle> views;
  if (c.init == InitMode::kTransfer) {
    views = make_views(data, load_or_embed(c, data, structure, false));
    const PretrainInputs inputs(data.graph, *views);
    state = restore_state(c, inputs, checkpoint.empty() ? c.output / "checkpoint.gsrc" : fs::path(checkpoint));
  }
  ExperimentReport report;
  report.dataset = data.name;
  report.variant = "finetune";
  report.config_json = c.canonical();
  report.config_fingerprint = c.fingerprint();
  report.homophily_before = homophily_ratio(data.graph, data.split.labels).ratio;
  report.m_plus = plan.add.size();
  report.m_minus = plan.remove.size();
  report.stages = {"finetune", "evaluate"};
  try {
    const NormalizedAdjacency adj = normalize_adjacency<Real>(refined);
    for (std::uint64_t seed : c.seeds) {
      FinetuneModel model = state ? init_finetune(*state, data.num_classes, seed, c.init)
                                  : random_finetune_model(data.features.cols(), c.pretrain.hidden_dim,
                                                          c.pretrain.out_dim, data.num_classes, seed);
      const FinetuneResult r = finetune(std::move(model), adj, data.features, data.split, c.finetune, seed);
      SeedRun run;
      run.seed = seed;
      run.best_epoch = r.best_epoch;
      run.val_accuracy = r.best_val_accuracy;
      run.test_accuracy = evaluate(r.model, adj, data.features, data.split.labels, data.split.test);
      run.homophily_after = homophily_ratio(refined, data.split.labels).ratio;
      run.added = plan.add.size();
      run.removed = plan.remove.size();
      run.plan_fingerprint = plan_fingerprint(plan);
      report.runs.push_back(run);
    }
  } catch (const std::exception& e) {
    throw StageError("finetune", e.what());
  }
  report.aggregate();
  write_report(c.output, report);
  print_report(report);
  return 0;
}

int cmd_pipeline(const CommonOptions& o, const std::string& variant) {
  const RunConfig c = resolve_config(o);
  const Dataset data = load_config_dataset(c);
  write_config_copy(c);
  PipelineOptions opts;
  opts.artifacts_dir = c.output / "seeds";
  ExperimentReport report;
  if (variant.empty()) {
    report = run_pipeline(data, c, opts);
  } else {
    RunConfig ablated;
    try {
      ablated = ablation_config(c, variant);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    opts.variant = variant;
    report = run_pipeline(data, ablated, opts);
  }
  write_report(c.output, report);
  print_report(report);
  return 0;
}

int cmd_ablate(const CommonOptions& o, const std::vector<std::string>& variants) {
  RunConfig c = resolve_config(o);
  std::vector<std::string> list = variants;
  if (list.size() == 1 && list[0] == "all") list = ablation_variants();
  for (const auto& v : list) {
    try {
      (void)ablation_config(c, v);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  const Dataset data = load_config_dataset(c);
  write_config_copy(c);
  for (const auto& v : list) {
    const ExperimentReport r = run_ablation(data, c, v);
    write_report(c.output / v, r);
    std::cout << "== " << v << " ==\n";
    print_report(r);
  }
  return 0;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("grid value '" + item + "' is not a number");
    }
  }
  return grid;
}

int cmd_sweep(const CommonOptions& o, const std::string& axis_name, const std::string& grid_text) {
  const RunConfig c = resolve_config(o);
  SweepAxis axis;
  std::vector<double> grid;
  try {
    axis = parse_sweep_axis(axis_name);
    grid = parse_grid(grid_text);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const Dataset data = load_config_dataset(c);
  try {
    validate_sweep_grid(axis, grid, data.graph.num_edges());
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  write_config_copy(c);
  const SweepResult sweep = run_sweep(data, c, axis, grid);
  write_sweep(c.output, sweep);
  std::printf("%-10s %10s %8s %10s\n", to_string(axis), "accuracy", "std", "homophily");
  for (std::size_t p = 0; p < grid.size(); ++p) {
    const auto& r = sweep.points[p];
    std::printf("%-10g %10.2f %8.2f %10.4f\n", grid[p], 100.0 * r.mean_accuracy, 100.0 * r.std_accuracy,
                r.homophily_after);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph structure refinement: pretrain, refine, fine-tune"};
  app.require_subcommand(1);

  CommonOptions common;
  std::string structure;
  std::string checkpoint;
  std::string plan;
  std::string variant;
  std::vector<std::string> variants;
  std::string axis;
  std::string grid;
  bool write_scores = false;

  auto* embed = app.add_subcommand("embed", "DeepWalk structural embedding -> structure.gsrm");
  add_common(embed, common);

  auto* pretrain = app.add_subcommand("pretrain", "Multi-view contrastive pretraining -> checkpoint.gsrc");
  add_common(pretrain, common);
  pretrain->add_option("--structure", structure, "Structure embedding (default <out>/structure.gsrm)");

  auto* refine = app.add_subcommand("refine", "Score pairs and write plan.diff");
  add_common(refine, common);
  refine->add_option("--structure", structure, "Structure embedding (default <out>/structure.gsrm)");
  refine->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/checkpoint.gsrc)");
  refine->add_flag("--scores", write_scores, "Also write scores.tsv");

  auto* finetune = app.add_subcommand("finetune", "Fine-tune and evaluate on a (refined) graph");
  add_common(finetune, common);
  finetune->add_option("--structure", structure, "Structure embedding (default <out>/structure.gsrm)");
  finetune->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/checkpoint.gsrc)");
  finetune->add_option("--plan", plan, "Plan diff to apply before fine-tuning");

  auto* pipeline = app.add_subcommand("pipeline", "All stages for every seed -> report");
  add_common(pipeline, common);
  pipeline->add_option("--variant", variant, "Run an ablation variant instead of the full pipeline");

  auto* sweep = app.add_subcommand("sweep", "Hyperparameter sweep along one axis");
  add_common(sweep, common);
  sweep->add_option("--axis", axis, "m_plus | m_minus | alpha | beta_F")->required();
  sweep->add_option("--grid", grid, "Comma-separated grid values")->required();

  auto* ablate = app.add_subcommand("ablate", "Ablation variants");
  add_common(ablate, common);
  ablate->add_option("--variant", variants, "full | no-inter | random-init | orig-graph | feat-graph | struct-graph | all")
      ->required()
      ->take_all();

  SbmConfig sbm;
  std::string sbm_out;
  auto* make_sbm = app.add_subcommand("make-sbm", "Write a planted-partition dataset");
  make_sbm->add_option("--out", sbm_out, "Dataset directory")->required();
  make_sbm->add_option("--blocks", sbm.block_sizes, "Block sizes")->delimiter(',');
  make_sbm->add_option("--p-in", sbm.p_in, "Within-block edge probability");
  make_sbm->add_option("--p-out", sbm.p_out, "Cross-block edge probability");
  make_sbm->add_option("--feature-dim", sbm.feature_dim, "Feature dimension");
  make_sbm->add_option("--signal", sbm.feature_signal, "Feature signal strength");
  make_sbm->add_option("--noise", sbm.noise_edge_fraction, "Injected cross-block edges, fraction of |E|");
  make_sbm->add_option("--seed", sbm.seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (*embed) return cmd_embed(common);
    if (*pretrain) return cmd_pretrain(common, structure);
    if (*refine) return cmd_refine(common, structure, checkpoint, write_scores);
    if (*finetune) return cmd_finetune(common, structure, checkpoint, plan);
    if (*pipeline) return cmd_pipeline(common, variant);
    if (*sweep) return cmd_sweep(common, axis, grid);
    if (*ablate) return cmd_ablate(common, variants);
    if (*make_sbm) return cmd_make_sbm(sbm_out, sbm);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const StageError& e) {
    std::cerr << "error: stage '" << e.stage() << "' failed: " << e.what() << "\n";
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return kExitUsage;
}
