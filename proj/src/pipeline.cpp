#include "gsr/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "gsr/deepwalk.hpp"
#include "json.hpp"

namespace gsr {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kDeepWalkStream = 0xdeed;
constexpr std::uint64_t kPretrainStream = 0x9e7a;

template <typename Fn>
auto in_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first failure by index.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void mix_double(std::uint64_t& h, double v) { h = fnv1a(&v, sizeof v, h); }

template <typename T>
void mix_int(std::uint64_t& h, T v) {
  const auto x = static_cast<std::uint64_t>(v);
  h = fnv1a(&x, sizeof x, h);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t deepwalk_seed(std::uint64_t seed) { return derive_seed({seed, kDeepWalkStream}); }
std::uint64_t pretrain_seed(std::uint64_t seed) { return derive_seed({seed, kPretrainStream}); }

MatrixX structural_embedding(const Graph& g, const DeepWalkSettings& settings, std::uint64_t seed) {
  const WalkCorpus corpus = generate_walks(g, settings.walks_per_node, settings.walk_length, seed);
  return train_skipgram(corpus, g.num_nodes(), settings.skipgram, seed).embedding;
}

ViewBundle make_views(const Dataset& data, MatrixX structure) {
  ViewBundle v;
  v.names = {"F", "S"};
  v.matrices.push_back(data.features);
  v.matrices.push_back(std::move(structure));
  return v;
}

std::uint64_t plan_fingerprint(const RefinementPlan& plan) {
  std::uint64_t h = fnv1a(nullptr, 0);
  for (const auto* list : {&plan.add, &plan.remove}) {
    mix_int(h, list->size());
    for (const auto& s : *list) {
      mix_int(h, s.edge.u);
      mix_int(h, s.edge.v);
      mix_double(h, s.score);
    }
  }
  return h;
}

bool needs_pretraining(const RunConfig& config, std::size_t num_edges) {
  return config.init == InitMode::kTransfer || config.refine.resolved_m_plus(num_edges) > 0 ||
         config.refine.resolved_m_minus(num_edges) > 0;
}

PreparedSeed prepare_seed(const Dataset& data, const RunConfig& config, std::uint64_t seed,
                          bool needs_pretrain) {
  PreparedSeed out;
  out.seed = seed;
  if (!needs_pretrain) return out;
  MatrixX structure = in_stage("deepwalk", [&] {
    return structural_embedding(data.graph, config.deepwalk, deepwalk_seed(seed));
  });
  out.stages.push_back("deepwalk");
  const ViewBundle views = make_views(data, std::move(structure));
  in_stage("pretrain", [&] {
    const PretrainInputs inputs(data.graph, views);
    PretrainState state = init_pretrain(config.resolved_pretrain(data.graph.num_nodes()), inputs,
                                        pretrain_seed(seed));
    out.history = run_pretraining(state, inputs, state.config.epochs);
    out.embeddings = embed_all_nodes(state, inputs);
    out.state = std::move(state);
  });
  out.stages.push_back("pretrain");
  return out;
}

SeedRun finish_seed(const Dataset& data, const RunConfig& config, const PreparedSeed& prepared,
                    RefinementPlan* plan_out, std::vector<std::string>* warnings) {
  const auto start = std::chrono::steady_clock::now();
  const Graph& g = data.graph;
  SeedRun run;
  run.seed = prepared.seed;
  const RefineConfig rc = config.refine.resolve(g.num_nodes(), g.num_edges());

  RefinementPlan plan;
  if (rc.m_plus > 0 || rc.m_minus > 0) {
    plan = in_stage("refine", [&] {
      if (prepared.embeddings.size() == 0) throw std::logic_error("refinement requested without pretraining");
      const EdgeScores scores = score_pairs(prepared.embeddings, rc, g);
      if (warnings != nullptr) warnings->insert(warnings->end(), scores.warnings.begin(), scores.warnings.end());
      return select_refinement(scores, g, rc.m_plus, rc.m_minus);
    });
  }
  const Graph refined = in_stage("refine", [&] { return apply_refinement(g, plan); });
  run.added = plan.add.size();
  run.removed = plan.remove.size();
  run.plan_fingerprint = plan_fingerprint(plan);
  run.homophily_after = homophily_ratio(refined, data.split.labels).ratio;

  in_stage("finetune", [&] {
    FinetuneModel model;
    if (config.init == InitMode::kTransfer) {
      if (!prepared.state) throw std::logic_error("transfer initialization requested without pretraining");
      model = init_finetune(*prepared.state, data.num_classes, prepared.seed, InitMode::kTransfer);
      run.pretrain_fingerprint = prepared.state->fingerprint();
    } else if (prepared.state) {
      model = init_finetune(*prepared.state, data.num_classes, prepared.seed, InitMode::kRandom);
    } else {
      model = random_finetune_model(data.features.cols(), config.pretrain.hidden_dim, config.pretrain.out_dim,
                                    data.num_classes, prepared.seed);
    }
    const NormalizedAdjacency adj = normalize_adjacency<Real>(refined);
    const FinetuneResult result = finetune(std::move(model), adj, data.features, data.split, config.finetune,
                                           prepared.seed);
    run.best_epoch = result.best_epoch;
    run.val_accuracy = result.best_val_accuracy;
    run.test_accuracy = in_stage("evaluate", [&] {
      return evaluate(result.model, adj, data.features, data.split.labels, data.split.test);
    });
  });
  if (plan_out != nullptr) *plan_out = std::move(plan);
  run.seconds = seconds_since(start);
  return run;
}

void ExperimentReport::aggregate() {
  const double n = static_cast<double>(runs.size());
  mean_accuracy = std_accuracy = homophily_after = 0.0;
  if (runs.empty()) return;
  for (const auto& r : runs) {
    mean_accuracy += r.test_accuracy / n;
    homophily_after += r.homophily_after / n;
  }
  if (runs.size() > 1) {
    double ss = 0.0;
    for (const auto& r : runs) ss += (r.test_accuracy - mean_accuracy) * (r.test_accuracy - mean_accuracy);
    std_accuracy = std::sqrt(ss / (n - 1.0));
  }
}

std::uint64_t ExperimentReport::fingerprint() const {
  std::uint64_t h = fnv1a(config_json.data(), config_json.size());
  h = fnv1a(variant.data(), variant.size(), h);
  h = fnv1a(dataset.data(), dataset.size(), h);
  mix_double(h, homophily_before);
  mix_int(h, m_plus);
  mix_int(h, m_minus);
  for (const auto& r : runs) {
    mix_int(h, r.seed);
    mix_double(h, r.test_accuracy);
    mix_double(h, r.val_accuracy);
    mix_int(h, r.best_epoch);
    mix_double(h, r.homophily_after);
    mix_int(h, r.plan_fingerprint);
    mix_int(h, r.pretrain_fingerprint);
  }
  return h;
}

namespace {

json run_json(const SeedRun& r) {
  return {{"seed", r.seed},
          {"test_accuracy", r.test_accuracy},
          {"val_accuracy", r.val_accuracy},
          {"best_epoch", r.best_epoch},
          {"homophily_after", r.homophily_after},
          {"added", r.added},
          {"removed", r.removed},
          {"plan_fingerprint", hex64(r.plan_fingerprint)},
          {"pretrain_fingerprint", hex64(r.pretrain_fingerprint)},
          {"seconds", r.seconds}};
}

json report_json(const ExperimentReport& r) {
  json runs = json::array();
  for (const auto& s : r.runs) runs.push_back(run_json(s));
  return {{"dataset", r.dataset},
          {"variant", r.variant},
          {"config", r.config_json.empty() ? json(nullptr) : json::parse(r.config_json)},
          {"config_fingerprint", hex64(r.config_fingerprint)},
          {"fingerprint", hex64(r.fingerprint())},
          {"accuracy", {{"mean", r.mean_accuracy}, {"std", r.std_accuracy}}},
          {"homophily_before", r.homophily_before},
          {"homophily_after", r.homophily_after},
          {"m_plus", r.m_plus},
          {"m_minus", r.m_minus},
          {"stages", r.stages},
          {"per_point_pretraining", r.per_point_pretraining},
          {"warnings", r.warnings},
          {"runs", runs}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(path, "cannot open for writing");
  out << text;
  if (!out) throw DataError(path, "write failed");
}

ExperimentReport new_report(const Dataset& data, const RunConfig& config, const std::string& variant) {
  ExperimentReport report;
  report.dataset = data.name;
  report.variant = variant;
  report.config_json = config.canonical();
  report.config_fingerprint = config.fingerprint();
  report.homophily_before = homophily_ratio(data.graph, data.split.labels).ratio;
  report.m_plus = config.refine.resolved_m_plus(data.graph.num_edges());
  report.m_minus = config.refine.resolved_m_minus(data.graph.num_edges());
  return report;
}

std::vector<std::string> stage_list(bool pretrained, const ExperimentReport& report) {
  std::vector<std::string> stages;
  if (pretrained) stages = {"deepwalk", "pretrain"};
  if (report.m_plus > 0 || report.m_minus > 0) stages.push_back("refine");
  stages.push_back("finetune");
  stages.push_back("evaluate");
  return stages;
}

}  // namespace

std::string ExperimentReport::to_json(int indent) const { return report_json(*this).dump(indent); }

std::string ExperimentReport::to_text() const {
  std::ostringstream s;
  char line[256];
  s << "dataset      " << dataset << "\n";
  s << "variant      " << variant << "\n";
  s << "fingerprint  " << hex64(fingerprint()) << " (config " << hex64(config_fingerprint) << ")\n";
  std::snprintf(line, sizeof line, "accuracy     %.2f +- %.2f over %zu seed(s)\n", 100.0 * mean_accuracy,
                100.0 * std_accuracy, runs.size());
  s << line;
  std::snprintf(line, sizeof line, "homophily    %.4f -> %.4f\n", homophily_before, homophily_after);
  s << line;
  s << "edits        +" << m_plus << " -" << m_minus << "\n";
  s << "stages      ";
  for (const auto& st : stages) s << ' ' << st;
  s << "\n\n";
  s << "seed        test     val      best_epoch  homophily  added  removed\n";
  for (const auto& r : runs) {
    std::snprintf(line, sizeof line, "%-10llu  %6.2f   %6.2f   %10d  %9.4f  %5zu  %7zu\n",
                  static_cast<unsigned long long>(r.seed), 100.0 * r.test_accuracy, 100.0 * r.val_accuracy,
                  r.best_epoch, r.homophily_after, r.added, r.removed);
    s << line;
  }
  for (const auto& w : warnings) s << "warning: " << w << "\n";
  return s.str();
}

ExperimentReport run_pipeline(const Dataset& data, const RunConfig& config, const PipelineOptions& options) {
  config.validate();
  ExperimentReport report = new_report(data, config, options.variant);
  const bool pretrain = needs_pretraining(config, data.graph.num_edges());
  report.stages = stage_list(pretrain, report);
  report.runs.resize(config.seeds.size());
  std::vector<std::vector<std::string>> warnings(config.seeds.size());
  std::mutex io;
  parallel_for(config.seeds.size(), config.jobs, [&](std::size_t i) {
    const auto start = std::chrono::steady_clock::now();
    const PreparedSeed prepared = prepare_seed(data, config, config.seeds[i], pretrain);
    RefinementPlan plan;
    report.runs[i] = finish_seed(data, config, prepared, &plan, &warnings[i]);
    report.runs[i].seconds = seconds_since(start);
    if (options.artifacts_dir) {
      const fs::path dir = *options.artifacts_dir / ("seed-" + std::to_string(config.seeds[i]));
      std::lock_guard lock(io);
      fs::create_directories(dir);
      save_plan(dir / "plan.diff", plan);
      if (pretrain) save_loss_history(dir / "pretrain_history.tsv", prepared.history);
    }
  });
  for (auto& w : warnings) report.warnings.insert(report.warnings.end(), w.begin(), w.end());
  report.aggregate();
  return report;
}

RunConfig ablation_config(const RunConfig& config, const std::string& variant) {
  RunConfig c = config;
  if (variant == "full") return c;
  if (variant == "no-inter") {
    c.pretrain.alpha = 1.0;
  } else if (variant == "random-init") {
    c.init = InitMode::kRandom;
  } else if (variant == "orig-graph") {
    c.refine.m_plus = 0;
    c.refine.m_minus = 0;
    c.init = InitMode::kTransfer;
  } else if (variant == "feat-graph") {
    c.refine.beta_feature = 1.0;
  } else if (variant == "struct-graph") {
    c.refine.beta_feature = 0.0;
  } else {
    std::string known;
    for (const auto& v : ablation_variants()) known += (known.empty() ? "" : ", ") + v;
    throw std::invalid_argument("unknown ablation variant '" + variant + "' (expected one of: " + known + ")");
  }
  return c;
}

ExperimentReport run_ablation(const Dataset& data, const RunConfig& config, const std::string& variant,
                              const PipelineOptions& options) {
  PipelineOptions o = options;
  o.variant = variant;
  return run_pipeline(data, ablation_config(config, variant), o);
}

SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "m_plus") return SweepAxis::kMPlus;
  if (s == "m_minus") return SweepAxis::kMMinus;
  if (s == "alpha") return SweepAxis::kAlpha;
  if (s == "beta_F" || s == "beta_feature") return SweepAxis::kBetaFeature;
  throw std::invalid_argument("unknown sweep axis '" + s + "' (expected m_plus, m_minus, alpha or beta_F)");
}

const char* to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kMPlus: return "m_plus";
    case SweepAxis::kMMinus: return "m_minus";
    case SweepAxis::kAlpha: return "alpha";
    case SweepAxis::kBetaFeature: return "beta_F";
  }
  return "?";
}

void validate_sweep_grid(SweepAxis axis, const std::vector<double>& grid, std::size_t num_edges) {
  if (grid.empty()) throw std::invalid_argument("sweep grid is empty");
  const double e = static_cast<double>(num_edges);
  for (double x : grid) {
    double hi = 1.0;
    if (axis == SweepAxis::kMPlus) hi = e;
    if (axis == SweepAxis::kMMinus) hi = std::floor(0.5 * e);
    const bool integral = axis == SweepAxis::kMPlus || axis == SweepAxis::kMMinus;
    if (!(x >= 0.0 && x <= hi) || (integral && x != std::floor(x))) {
      std::ostringstream s;
      s << "sweep value " << x << " outside the " << to_string(axis) << " range [0, " << hi << "]"
        << (integral ? " of integers" : "");
      throw std::invalid_argument(s.str());
    }
  }
}

namespace {

RunConfig point_config(const RunConfig& base, SweepAxis axis, double x) {
  RunConfig c = base;
  switch (axis) {
    case SweepAxis::kMPlus:
      c.refine.m_plus = static_cast<std::size_t>(x);
      c.refine.m_minus = 0;
      break;
    case SweepAxis::kMMinus:
      c.refine.m_minus = static_cast<std::size_t>(x);
      c.refine.m_plus = 0;
      break;
    case SweepAxis::kAlpha: c.pretrain.alpha = x; break;
    case SweepAxis::kBetaFeature: c.refine.beta_feature = x; break;
  }
  return c;
}

}  // namespace

SweepResult run_sweep(const Dataset& data, const RunConfig& config, SweepAxis axis, const std::vector<double>& grid) {
  config.validate();
  validate_sweep_grid(axis, grid, data.graph.num_edges());
  SweepResult result;
  result.axis = axis;
  result.grid = grid;
  const std::size_t seeds = config.seeds.size();
  const bool per_point = axis == SweepAxis::kAlpha;

  std::vector<RunConfig> configs;
  for (double x : grid) configs.push_back(point_config(config, axis, x));
  bool shared_pretrain = false;
  for (const auto& c : configs) shared_pretrain |= needs_pretraining(c, data.graph.num_edges());

  for (std::size_t p = 0; p < grid.size(); ++p) {
    ExperimentReport r = new_report(data, configs[p], std::string("sweep:") + to_string(axis));
    r.per_point_pretraining = per_point;
    r.stages = stage_list(per_point ? needs_pretraining(configs[p], data.graph.num_edges()) : shared_pretrain, r);
    r.runs.resize(seeds);
    result.points.push_back(std::move(r));
  }
  std::vector<std::vector<std::string>> warnings(grid.size() * seeds);

  if (per_point) {
    parallel_for(grid.size() * seeds, config.jobs, [&](std::size_t k) {
      const std::size_t p = k / seeds;
      const std::size_t s = k % seeds;
      const auto& c = configs[p];
      const PreparedSeed prepared =
          prepare_seed(data, c, c.seeds[s], needs_pretraining(c, data.graph.num_edges()));
      result.points[p].runs[s] = finish_seed(data, c, prepared, nullptr, &warnings[k]);
    });
  } else {
    parallel_for(seeds, config.jobs, [&](std::size_t s) {
      const PreparedSeed prepared = prepare_seed(data, config, config.seeds[s], shared_pretrain);
      for (std::size_t p = 0; p < grid.size(); ++p) {
        result.points[p].runs[s] = finish_seed(data, configs[p], prepared, nullptr, &warnings[p * seeds + s]);
      }
    });
  }
  for (std::size_t p = 0; p < grid.size(); ++p) {
    for (std::size_t s = 0; s < seeds; ++s) {
      const auto& w = warnings[p * seeds + s];
      result.points[p].warnings.insert(result.points[p].warnings.end(), w.begin(), w.end());
    }
    result.points[p].aggregate();
  }
  return result;
}

void write_report(const fs::path& dir, const ExperimentReport& report) {
  fs::create_directories(dir);
  write_text(dir / "report.json", report.to_json() + "\n");
  write_text(dir / "report.txt", report.to_text());
  std::string lines;
  for (const auto& r : report.runs) {
    json j = run_json(r);
    j["dataset"] = report.dataset;
    j["variant"] = report.variant;
    j["config_fingerprint"] = hex64(report.config_fingerprint);
    lines += j.dump() + "\n";
  }
  write_text(dir / "runs.jsonl", lines);
}

void write_sweep(const fs::path& dir, const SweepResult& sweep) {
  fs::create_directories(dir);
  std::ostringstream series;
  series.precision(10);
  series << to_string(sweep.axis) << "\taccuracy_mean\taccuracy_std\thomophily_after\n";
  std::string points;
  for (std::size_t p = 0; p < sweep.points.size(); ++p) {
    const auto& r = sweep.points[p];
    series << sweep.grid[p] << '\t' << r.mean_accuracy << '\t' << r.std_accuracy << '\t' << r.homophily_after
           << '\n';
    for (const auto& run : r.runs) {
      json j = run_json(run);
      j["axis"] = to_string(sweep.axis);
      j["x"] = sweep.grid[p];
      j["per_point_pretraining"] = r.per_point_pretraining;
      points += j.dump() + "\n";
    }
    std::ostringstream name;
    name << "point-" << p;
    write_report(dir / name.str(), r);
  }
  write_text(dir / "series.tsv", series.str());
  write_text(dir / "points.jsonl", points);
}

}  // namespace gsr
