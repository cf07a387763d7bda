// Acceptance criteria runner. One criterion per invocation; prints a single
// "PASS|FAIL|SKIP <name>: <detail>" line and exits 0, 1 or 77 respectively.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "gsr/deepwalk.hpp"
#include "gsr/finetune.hpp"
#include "gsr/pipeline.hpp"
#include "support.hpp"

using namespace gsr;
namespace fs = std::filesystem;

namespace {

enum class Status { kPass, kFail, kSkip };

struct Outcome {
  Status status;
  std::string detail;
};

struct Context {
  fs::path data_dir;
  fs::path fixture;
  fs::path gsr;
};

std::string fmt(double v, int digits = 2) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s.precision(2);
  s << std::scientific << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

// ---------------------------------------------------------------------------
// Real-dataset criteria
// ---------------------------------------------------------------------------

std::optional<Dataset> load_benchmark(const Context& ctx, const std::string& name) {
  const fs::path manifest = ctx.data_dir / name / "manifest.json";
  if (!fs::exists(manifest)) return std::nullopt;
  return load_dataset(manifest);
}

RunConfig benchmark_config(const Context& ctx, const std::string& name) {
  const fs::path custom = ctx.data_dir / name / "config.json";
  RunConfig c = fs::exists(custom) ? load_run_config(custom) : RunConfig{};
  c.seeds = {0, 1, 2, 3, 4};
  return c;
}

Outcome missing(const std::string& name, const Context& ctx) {
  return {Status::kSkip, name + " not found at " + (ctx.data_dir / name).string() +
                             " (convert it with tools/planetoid_to_gsr.py)"};
}

struct TimedReport {
  ExperimentReport report;
  double seconds = 0.0;
};

TimedReport timed(const Dataset& d, const RunConfig& c, const std::string& variant) {
  const auto start = std::chrono::steady_clock::now();
  TimedReport t{run_ablation(d, c, variant), 0.0};
  t.seconds = seconds_since(start);
  return t;
}

RunConfig plain_gcn(const RunConfig& c) { return ablation_config(ablation_config(c, "orig-graph"), "random-init"); }

std::string acc(const ExperimentReport& r) {
  return fmt(100 * r.mean_accuracy) + "±" + fmt(100 * r.std_accuracy);
}

Outcome gcn_baseline_cora(const Context& ctx) {
  const auto d = load_benchmark(ctx, "cora");
  if (!d) return missing("cora", ctx);
  const TimedReport gcn = timed(*d, plain_gcn(benchmark_config(ctx, "cora")), "random-init");
  const double mean = 100 * gcn.report.mean_accuracy;
  const bool ok = std::abs(mean - 81.32) <= 1.5 && gcn.seconds < 180.0;
  return {ok ? Status::kPass : Status::kFail, "plain GCN " + acc(gcn.report) + " (target 81.32 ± 1.5) in " +
                                                  fmt(gcn.seconds, 1) + " s (limit 180 s)"};
}

Outcome gsr_cora(const Context& ctx) {
  const auto d = load_benchmark(ctx, "cora");
  if (!d) return missing("cora", ctx);
  const RunConfig c = benchmark_config(ctx, "cora");
  const TimedReport gcn = timed(*d, plain_gcn(c), "random-init");
  const TimedReport full = timed(*d, c, "full");
  const double mean = 100 * full.report.mean_accuracy;
  const double delta = mean - 100 * gcn.report.mean_accuracy;
  const bool ok = mean >= 82.0 && full.seconds < 1800.0;
  return {ok ? Status::kPass : Status::kFail, "full pipeline " + acc(full.report) + " (need >= 82.00), plain GCN " +
                                                  acc(gcn.report) + ", delta " + fmt(delta) + " points, " +
                                                  fmt(full.seconds, 1) + " s (limit 1800 s)"};
}

Outcome citeseer_directional(const Context& ctx) {
  const auto d = load_benchmark(ctx, "citeseer");
  if (!d) return missing("citeseer", ctx);
  const RunConfig c = benchmark_config(ctx, "citeseer");
  const TimedReport gcn = timed(*d, plain_gcn(c), "random-init");
  const TimedReport full = timed(*d, c, "full");
  const bool ok = full.report.mean_accuracy >= gcn.report.mean_accuracy && full.seconds < 1800.0;
  return {ok ? Status::kPass : Status::kFail,
          "full pipeline " + acc(full.report) + " vs plain GCN " + acc(gcn.report) + ", " + fmt(full.seconds, 1) + " s"};
}

// Homophily of the graph with m+ = 0.5|E| top-scored additions and no removals.
std::pair<double, double> homophily_with_half_additions(const Dataset& d, RunConfig c) {
  const std::size_t m = d.graph.num_edges() / 2;
  c.refine.m_plus = m;
  c.refine.m_minus = 0;
  const PreparedSeed p = prepare_seed(d, c, c.seeds.front(), true);
  const RefineConfig rc = c.refine.resolve(d.graph.num_nodes(), d.graph.num_edges());
  const RefinementPlan plan = select_refinement(score_pairs(p.embeddings, rc, d.graph), d.graph, m, 0);
  return {homophily_ratio(d.graph, d.split.labels).ratio,
          homophily_ratio(apply_refinement(d.graph, plan), d.split.labels).ratio};
}

Outcome homophily_trend(const Context& ctx) {
  std::string detail;
  bool all_present = true, all_ok = true;
  for (const std::string name : {"cora", "citeseer"}) {
    const auto d = load_benchmark(ctx, name);
    if (!d) {
      all_present = false;
      detail += name + " missing; ";
      continue;
    }
    const auto [before, after] = homophily_with_half_additions(*d, benchmark_config(ctx, name));
    all_ok = all_ok && after > before;
    detail += name + " " + fmt(before, 4) + " -> " + fmt(after, 4) + "; ";
  }
  if (!all_ok) return {Status::kFail, detail};
  if (!all_present) return {Status::kSkip, detail + "convert the datasets with tools/planetoid_to_gsr.py"};
  return {Status::kPass, detail};
}

Outcome ablation_ordering(const Context& ctx) {
  const auto d = load_benchmark(ctx, "cora");
  if (!d) return missing("cora", ctx);
  const RunConfig c = benchmark_config(ctx, "cora");
  const ExperimentReport full = run_ablation(*d, c, "full");
  std::string detail = "full " + acc(full);
  bool ok = true;
  for (const std::string v : {"no-inter", "random-init", "orig-graph"}) {
    const ExperimentReport r = run_ablation(*d, c, v);
    const bool holds = full.mean_accuracy >= r.mean_accuracy;
    ok = ok && holds;
    detail += ", " + v + " " + acc(r) + (holds ? "" : " [ORDER VIOLATED]");
  }
  return {ok ? Status::kPass : Status::kFail, detail};
}

// ---------------------------------------------------------------------------
// Gradient suite
// ---------------------------------------------------------------------------

double sgns_loss(const VectorX& c, const VectorX& o, const std::vector<VectorX>& negs) {
  const auto log_sigmoid = [](double x) { return -std::log1p(std::exp(-x)); };
  double l = -log_sigmoid(c.dot(o));
  for (const VectorX& n : negs) l -= log_sigmoid(-c.dot(n));
  return l;
}

double skipgram_error(std::uint64_t seed) {
  VectorX c = test::random_matrix(8, 1, seed);
  VectorX o = test::random_matrix(8, 1, seed + 100);
  std::vector<VectorX> negs;
  for (int k = 0; k < 5; ++k) negs.push_back(test::random_matrix(8, 1, seed * 10 + k + 1000));
  const SgnsPairGradient g = sgns_pair_gradient(c, o, negs);
  MatrixX cm = c, om = o;
  double worst = std::max(
      test::relative_error(g.center, test::numeric_gradient(&cm, [&] { return sgns_loss(cm, o, negs); })),
      test::relative_error(g.context, test::numeric_gradient(&om, [&] { return sgns_loss(c, om, negs); })));
  for (std::size_t k = 0; k < negs.size(); ++k) {
    MatrixX nm = negs[k];
    const auto loss = [&] {
      auto copy = negs;
      copy[k] = nm;
      return sgns_loss(c, o, copy);
    };
    worst = std::max(worst, test::relative_error(g.negatives[k], test::numeric_gradient(&nm, loss)));
  }
  return worst;
}

double pretrain_error(double alpha, std::uint64_t seed) {
  const NodeId n = 12;
  const Graph g = test::random_graph(n, 0.35, seed);
  const ViewBundle views{{"F", "S"}, {test::random_matrix(n, 5, seed + 1), test::random_matrix(n, 3, seed + 2)}};
  const PretrainInputs in(g, views);
  PretrainConfig c;
  c.temperature = 0.5;
  c.queue_size = 8;
  c.batch_size = 4;
  c.hidden_dim = 6;
  c.out_dim = 4;
  c.decoder_hidden_dim = 5;
  c.alpha = alpha;
  PretrainState s = init_pretrain(c, in, seed);
  // Nonzero biases keep every embedding away from the origin, where row
  // normalization has no derivative.
  std::uint64_t salt = 100;
  for (MatrixX* t : s.trainable()) {
    if (t->rows() == 1) *t = test::random_matrix(1, t->cols(), seed * 1000 + salt++, 0.1);
  }
  Rng rng(seed);
  const ContrastBatch b = sample_batch(g, 4, rng);
  const LossAndGradients lg = pretrain_loss_and_gradients(s, b, in);
  return test::max_gradient_error(s.trainable(), lg.gradients,
                                  [&] { return pretrain_loss_and_gradients(s, b, in).loss.total; });
}

double finetune_error(std::uint64_t seed) {
  const NodeId n = 15;
  const Graph g = test::random_graph(n, 0.3, seed + 5);
  const auto adj = normalize_adjacency(g);
  const MatrixX x = test::random_matrix(n, 5, seed);
  std::vector<int> labels(n);
  for (NodeId i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 3);
  const std::vector<NodeId> rows{0, 2, 3, 7, 9, 14};
  FinetuneModel m = random_finetune_model(5, 6, 4, 3, seed);
  m.body.layer1.bias = test::random_matrix(1, 6, seed + 50, 0.1);
  m.body.layer2.bias = test::random_matrix(1, 4, seed + 51, 0.1);
  m.head.bias = test::random_matrix(1, 3, seed + 52, 0.1);
  const FinetuneLoss fl = finetune_loss_and_gradients(m, adj, x, labels, rows);
  return test::max_gradient_error(finetune_parameters(m), fl.gradients,
                                  [&] { return finetune_loss_and_gradients(m, adj, x, labels, rows).loss; });
}

Outcome gradient_suite(const Context&) {
  std::map<std::string, double> worst;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    worst["L_intra"] = std::max(worst["L_intra"], pretrain_error(1.0, seed));
    worst["L_inter"] = std::max(worst["L_inter"], pretrain_error(0.0, seed));
    worst["L_P"] = std::max(worst["L_P"], pretrain_error(0.5, seed));
    worst["L_F"] = std::max(worst["L_F"], finetune_error(seed));
    worst["skip-gram"] = std::max(worst["skip-gram"], skipgram_error(seed));
  }
  bool ok = true;
  std::string detail;
  for (const auto& [name, err] : worst) {
    ok = ok && err < 1e-4;
    detail += (detail.empty() ? "" : ", ") + name + " " + sci(err);
  }
  return {ok ? Status::kPass : Status::kFail, "max relative error " + detail + " (limit 1e-4)"};
}

// ---------------------------------------------------------------------------
// Oracle equivalence suite
// ---------------------------------------------------------------------------

Outcome oracle_suite(const Context&) {
  double adj_err = 0.0, score_err = 0.0, nce_err = 0.0;
  bool plans_equal = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Graph g = test::random_graph(100, 0.02 + 0.02 * seed, seed);
    adj_err = std::max(adj_err, (MatrixX(normalize_adjacency(g)) - test::dense_normalized(g)).cwiseAbs().maxCoeff());
  }
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Graph g = test::random_graph(20, 0.2, seed + 10);
    ViewEmbeddings z{{"F", "S"},
                     {test::unit_rows(test::random_matrix(20, 4, seed)), test::unit_rows(test::random_matrix(20, 4, seed + 1))}};
    RefineConfig c;
    c.beta = RefineConfig::two_view_beta(0.3);
    const EdgeScores s = score_pairs(z, c, g);
    const auto oracle = test::brute_force_minmax(z, c.beta);
    if (s.size() != oracle.size()) score_err = INFINITY;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto it = oracle.find({s.pairs[i].u, s.pairs[i].v});
      score_err = std::max(score_err, it == oracle.end() ? INFINITY : std::abs(s.combined[i] - it->second));
    }
  }
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Graph g = test::random_graph(30, 0.15, seed + 40);
    ViewEmbeddings z{{"F", "S"},
                     {test::unit_rows(test::random_matrix(30, 4, seed + 50)),
                      test::unit_rows(test::random_matrix(30, 4, seed + 51))}};
    for (NormMode mode : {NormMode::kMinMax, NormMode::kRank}) {
      RefineConfig c;
      c.norm_mode = mode;
      const EdgeScores s = score_pairs(z, c, g);
      const std::size_t mp = 10 + 7 * seed, mm = 3 + 4 * seed;
      plans_equal = plans_equal && select_refinement(s, g, mp, mm) == test::full_sort_plan(s, mp, mm);
    }
  }
  for (Eigen::Index k : {1, 5, 255, 1023}) {
    // Every logit is zero: queries are orthogonal to positives and negatives.
    MatrixX q = MatrixX::Zero(8, 4), pos = MatrixX::Zero(8, 4), bank = MatrixX::Zero(k, 4);
    q.col(0).setOnes();
    pos.col(1).setOnes();
    bank.col(2).setOnes();
    nce_err = std::max(nce_err, std::abs(info_nce<Real>(q, pos, bank, 0.07) - std::log(static_cast<double>(k + 1))));
  }
  const bool ok = adj_err <= 1e-12 && score_err <= 1e-10 && plans_equal && nce_err <= 1e-9;
  return {ok ? Status::kPass : Status::kFail,
          "normalize_adjacency " + sci(adj_err) + " (1e-12), score_pairs " + sci(score_err) +
              " (1e-10), select_refinement " + (plans_equal ? "exact" : "MISMATCH") + ", info_nce ln(K+1) " +
              sci(nce_err) + " (1e-9)"};
}

// ---------------------------------------------------------------------------
// Planted-partition recovery
// ---------------------------------------------------------------------------

Outcome sbm_recovery(const Context& ctx) {
  const auto start = std::chrono::steady_clock::now();
  RunConfig c = load_run_config(ctx.fixture / "config.json");
  std::vector<double> precision;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SbmConfig sc;
    sc.block_sizes = {100, 100};
    sc.p_in = 0.1;
    sc.p_out = 0.005;
    sc.feature_dim = 32;
    sc.feature_signal = 2.0;
    sc.noise_edge_fraction = 0.1;
    sc.seed = seed;
    const SbmSample sample = generate_sbm(sc);
    const Graph& g = sample.data.graph;
    const std::size_t m = sample.noise_edges.size();
    c.refine.m_plus = 0;
    c.refine.m_minus = m;
    const PreparedSeed p = prepare_seed(sample.data, c, seed, true);
    const RefineConfig rc = c.refine.resolve(g.num_nodes(), g.num_edges());
    const RefinementPlan plan = select_refinement(score_pairs(p.embeddings, rc, g), g, 0, m);
    std::size_t cross = 0;
    for (const ScoredEdge& e : plan.remove) cross += sample.blocks[e.edge.u] != sample.blocks[e.edge.v];
    precision.push_back(static_cast<double>(cross) / static_cast<double>(m));
    per_seed += (per_seed.empty() ? "" : " ") + fmt(precision.back(), 3);
  }
  double mean = 0.0;
  for (double p : precision) mean += p / static_cast<double>(precision.size());
  const double secs = seconds_since(start);
  const bool ok = mean >= 0.7 && secs < 300.0;
  return {ok ? Status::kPass : Status::kFail, "mean cross-block precision " + fmt(mean, 3) + " (need >= 0.7; seeds " +
                                                  per_seed + ") in " + fmt(secs, 1) + " s (limit 300 s)"};
}

// ---------------------------------------------------------------------------
// Determinism of the command-line pipeline
// ---------------------------------------------------------------------------

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char ch : s) out += ch == '\'' ? std::string("'\\''") : std::string(1, ch);
  return out + "'";
}

Outcome determinism(const Context& ctx) {
  if (ctx.gsr.empty()) return {Status::kSkip, "no --gsr executable given"};
  const fs::path tmp = fs::temp_directory_path() / ("gsr_acceptance_det_" + std::to_string(::getpid()));
  fs::remove_all(tmp);
  std::vector<std::string> fingerprints;
  for (const char* run : {"a", "b"}) {
    const fs::path out = tmp / run;
    const std::string cmd = shell_quote(ctx.gsr.string()) + " pipeline --config " +
                            shell_quote((ctx.fixture / "config.json").string()) + " --dataset " +
                            shell_quote(ctx.fixture.string()) + " --out " + shell_quote(out.string()) +
                            " --set 'seeds=[0,1]' > " + shell_quote((tmp / (std::string(run) + ".log")).string()) +
                            " 2>&1";
    fs::create_directories(tmp);
    if (std::system(cmd.c_str()) != 0) {
      fs::remove_all(tmp);
      return {Status::kFail, std::string("pipeline run ") + run + " exited nonzero"};
    }
    std::ifstream in(out / "report.json");
    fingerprints.push_back(nlohmann::json::parse(in).at("fingerprint").get<std::string>());
  }
  fs::remove_all(tmp);
  const bool ok = fingerprints[0] == fingerprints[1];
  return {ok ? Status::kPass : Status::kFail, "report fingerprints " + fingerprints[0] + " and " + fingerprints[1]};
}

const std::vector<std::pair<std::string, std::function<Outcome(const Context&)>>>& criteria() {
  static const std::vector<std::pair<std::string, std::function<Outcome(const Context&)>>> all{
      {"gcn_baseline_cora", gcn_baseline_cora},
      {"gsr_improvement_cora", gsr_cora},
      {"citeseer_directional", citeseer_directional},
      {"homophily_trend", homophily_trend},
      {"ablation_ordering", ablation_ordering},
      {"gradient_suite", gradient_suite},
      {"oracle_suite", oracle_suite},
      {"sbm_recovery", sbm_recovery},
      {"determinism", determinism},
  };
  return all;
}

int report(const std::string& name, const Outcome& o) {
  static const char* labels[] = {"PASS", "FAIL", "SKIP"};
  std::cout << labels[static_cast<int>(o.status)] << " " << name << ": " << o.detail << std::endl;
  return o.status == Status::kPass ? 0 : o.status == Status::kFail ? 1 : 77;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Runs acceptance criteria");
  std::string which = "all";
  Context ctx;
  std::string data_dir = "data";
  std::string fixture;
  app.add_option("criterion", which, "criterion name or 'all'");
  app.add_option("--data-dir", data_dir, "directory holding cora/ and citeseer/");
  app.add_option("--fixture", fixture, "planted-partition fixture directory (default <data-dir>/sbm2)");
  app.add_option("--gsr", ctx.gsr, "gsr executable used by the determinism check");
  CLI11_PARSE(app, argc, argv);
  if (const char* env = std::getenv("GSR_DATA_DIR")) data_dir = env;
  ctx.data_dir = data_dir;
  ctx.fixture = fixture.empty() ? ctx.data_dir / "sbm2" : fs::path(fixture);

  int worst = 0;
  bool matched = false;
  for (const auto& [name, fn] : criteria()) {
    if (which != "all" && which != name) continue;
    matched = true;
    int code;
    try {
      code = report(name, fn(ctx));
    } catch (const std::exception& e) {
      code = report(name, {Status::kFail, std::string("exception: ") + e.what()});
    }
    if (code == 1 || (code == 77 && worst == 0)) worst = code;
  }
  if (!matched) {
    std::cerr << "unknown criterion '" << which << "'\n";
    return 2;
  }
  return worst;
}
