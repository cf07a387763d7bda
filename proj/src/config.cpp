#include "gsr/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "gsr/data_io.hpp"
#include "json.hpp"

namespace gsr {

using json = nlohmann::json;

std::size_t RefineSettings::resolved_m_plus(std::size_t num_edges) const {
  return m_plus ? *m_plus : static_cast<std::size_t>(std::llround(add_ratio * static_cast<double>(num_edges)));
}

std::size_t RefineSettings::resolved_m_minus(std::size_t num_edges) const {
  return m_minus ? *m_minus : static_cast<std::size_t>(std::llround(remove_ratio * static_cast<double>(num_edges)));
}

RefineConfig RefineSettings::resolve(NodeId num_nodes, std::size_t num_edges) const {
  RefineConfig c;
  c.beta = RefineConfig::two_view_beta(beta_feature);
  c.norm_mode = norm_mode;
  c.candidates = candidates ? *candidates : default_candidate_strategy(num_nodes);
  c.topk = topk;
  c.m_plus = resolved_m_plus(num_edges);
  c.m_minus = resolved_m_minus(num_edges);
  return c;
}

namespace {

void check(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("config: " + what);
}

const char* encode_mode_name(EncodeMode m) { return m == EncodeMode::kFullGraph ? "full" : "ego"; }

json optional_count(const std::optional<std::size_t>& v) { return v ? json(*v) : json(nullptr); }

json to_json_value(const RunConfig& c, bool include_runtime) {
  const auto& p = c.pretrain;
  const auto& sg = c.deepwalk.skipgram;
  json j = {
      {"dataset", c.dataset},
      {"seeds", c.seeds},
      {"deepwalk",
       {{"walks_per_node", c.deepwalk.walks_per_node},
        {"walk_length", c.deepwalk.walk_length},
        {"dim", sg.dim},
        {"window", sg.window},
        {"negatives", sg.negatives},
        {"epochs", sg.epochs},
        {"lr", sg.lr}}},
      {"pretrain",
       {{"temperature", p.temperature},
        {"momentum", p.momentum},
        {"queue_size", p.queue_size},
        {"alpha", p.alpha},
        {"batch_size", p.batch_size},
        {"epochs", p.epochs},
        {"lr", p.lr},
        {"weight_decay", p.weight_decay},
        {"hidden_dim", p.hidden_dim},
        {"out_dim", p.out_dim},
        {"decoder_hidden_dim", p.decoder_hidden_dim},
        {"encode_mode", c.encode_mode_auto ? "auto" : encode_mode_name(p.encode_mode)},
        {"ego_radius", p.ego_radius},
        {"ego_fanout", p.ego_fanout},
        {"readout", p.readout == Readout::kCenter ? "center" : "mean"}}},
      {"refine",
       {{"beta_feature", c.refine.beta_feature},
        {"norm_mode", to_string(c.refine.norm_mode)},
        {"candidates", c.refine.candidates ? to_string(*c.refine.candidates) : "auto"},
        {"topk", c.refine.topk},
        {"add_ratio", c.refine.add_ratio},
        {"remove_ratio", c.refine.remove_ratio},
        {"m_plus", optional_count(c.refine.m_plus)},
        {"m_minus", optional_count(c.refine.m_minus)},
        {"write_scores", c.refine.write_scores}}},
      {"finetune",
       {{"init", to_string(c.init)},
        {"epochs", c.finetune.epochs},
        {"patience", c.finetune.patience},
        {"lr", c.finetune.lr},
        {"weight_decay", c.finetune.weight_decay},
        {"dropout", c.finetune.dropout}}},
  };
  if (include_runtime) {
    j["jobs"] = c.jobs;
    j["output"] = c.output.string();
  }
  return j;
}

// Rejects keys absent from `schema`, recursing into objects.
void check_keys(const json& given, const json& schema, const std::string& prefix) {
  if (!given.is_object()) throw std::invalid_argument("config: '" + prefix + "' must be an object");
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!schema.contains(it.key())) throw std::invalid_argument("config: unknown key '" + path + "'");
    if (schema[it.key()].is_object()) check_keys(it.value(), schema[it.key()], path);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config: '" + section + "." + key + "' has the wrong type");
  }
}

void read_count(const json& j, const char* key, std::optional<std::size_t>& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (v.is_null()) {
    out.reset();
    return;
  }
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw std::invalid_argument(std::string("config: 'refine.") + key + "' must be a non-negative integer or null");
  }
  out = v.get<std::size_t>();
}

RunConfig from_json_value(const json& j) {
  RunConfig c;
  check_keys(j, to_json_value(c, true), "");
  read(j, "dataset", c.dataset, "");
  read(j, "seeds", c.seeds, "");
  read(j, "jobs", c.jobs, "");
  if (j.contains("output")) c.output = j.at("output").get<std::string>();

  if (j.contains("deepwalk")) {
    const json& d = j["deepwalk"];
    auto& sg = c.deepwalk.skipgram;
    read(d, "walks_per_node", c.deepwalk.walks_per_node, "deepwalk");
    read(d, "walk_length", c.deepwalk.walk_length, "deepwalk");
    read(d, "dim", sg.dim, "deepwalk");
    read(d, "window", sg.window, "deepwalk");
    read(d, "negatives", sg.negatives, "deepwalk");
    read(d, "epochs", sg.epochs, "deepwalk");
    read(d, "lr", sg.lr, "deepwalk");
  }
  if (j.contains("pretrain")) {
    const json& s = j["pretrain"];
    auto& p = c.pretrain;
    read(s, "temperature", p.temperature, "pretrain");
    read(s, "momentum", p.momentum, "pretrain");
    read(s, "queue_size", p.queue_size, "pretrain");
    read(s, "alpha", p.alpha, "pretrain");
    read(s, "batch_size", p.batch_size, "pretrain");
    read(s, "epochs", p.epochs, "pretrain");
    read(s, "lr", p.lr, "pretrain");
    read(s, "weight_decay", p.weight_decay, "pretrain");
    read(s, "hidden_dim", p.hidden_dim, "pretrain");
    read(s, "out_dim", p.out_dim, "pretrain");
    read(s, "decoder_hidden_dim", p.decoder_hidden_dim, "pretrain");
    read(s, "ego_radius", p.ego_radius, "pretrain");
    read(s, "ego_fanout", p.ego_fanout, "pretrain");
    std::string mode = "auto";
    read(s, "encode_mode", mode, "pretrain");
    if (mode == "auto") {
      c.encode_mode_auto = true;
    } else if (mode == "full" || mode == "ego") {
      c.encode_mode_auto = false;
      p.encode_mode = mode == "full" ? EncodeMode::kFullGraph : EncodeMode::kEgoSubgraph;
    } else {
      throw std::invalid_argument("config: pretrain.encode_mode must be auto, full or ego");
    }
    std::string readout = "center";
    read(s, "readout", readout, "pretrain");
    if (readout != "center" && readout != "mean") {
      throw std::invalid_argument("config: pretrain.readout must be center or mean");
    }
    p.readout = readout == "center" ? Readout::kCenter : Readout::kMean;
  }
  if (j.contains("refine")) {
    const json& r = j["refine"];
    auto& s = c.refine;
    read(r, "beta_feature", s.beta_feature, "refine");
    std::string norm = to_string(s.norm_mode);
    read(r, "norm_mode", norm, "refine");
    s.norm_mode = parse_norm_mode(norm);
    std::string cand = "auto";
    read(r, "candidates", cand, "refine");
    if (cand == "auto") {
      s.candidates.reset();
    } else {
      s.candidates = parse_candidate_strategy(cand);
    }
    read(r, "topk", s.topk, "refine");
    read(r, "add_ratio", s.add_ratio, "refine");
    read(r, "remove_ratio", s.remove_ratio, "refine");
    read_count(r, "m_plus", s.m_plus);
    read_count(r, "m_minus", s.m_minus);
    read(r, "write_scores", s.write_scores, "refine");
  }
  if (j.contains("finetune")) {
    const json& f = j["finetune"];
    std::string init = to_string(c.init);
    read(f, "init", init, "finetune");
    c.init = parse_init_mode(init);
    read(f, "epochs", c.finetune.epochs, "finetune");
    read(f, "patience", c.finetune.patience, "finetune");
    read(f, "lr", c.finetune.lr, "finetune");
    read(f, "weight_decay", c.finetune.weight_decay, "finetune");
    read(f, "dropout", c.finetune.dropout, "finetune");
  }
  return c;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override '" + assignment + "' must look like section.key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw std::invalid_argument("override '" + assignment + "' has an empty key");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    if (!node->contains(key)) (*node)[key] = json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace

void RunConfig::validate() const {
  check(!seeds.empty(), "seeds must not be empty");
  check(jobs >= 1, "jobs must be >= 1");
  check(deepwalk.walks_per_node >= 1, "deepwalk.walks_per_node must be >= 1");
  check(deepwalk.walk_length >= 2, "deepwalk.walk_length must be >= 2");
  const auto& sg = deepwalk.skipgram;
  check(sg.dim >= 1, "deepwalk.dim must be >= 1");
  check(sg.window >= 1, "deepwalk.window must be >= 1");
  check(sg.negatives >= 0, "deepwalk.negatives must be >= 0");
  check(sg.epochs >= 1, "deepwalk.epochs must be >= 1");
  check(sg.lr > 0.0, "deepwalk.lr must be > 0");
  pretrain.validate();
  check(refine.beta_feature >= 0.0 && refine.beta_feature <= 1.0, "refine.beta_feature must lie in [0, 1]");
  check(refine.topk >= 1, "refine.topk must be >= 1");
  check(refine.add_ratio >= 0.0 && refine.add_ratio <= 1.0, "refine.add_ratio must lie in [0, 1]");
  check(refine.remove_ratio >= 0.0 && refine.remove_ratio <= 1.0, "refine.remove_ratio must lie in [0, 1]");
  finetune.validate();
}

std::string RunConfig::to_json(int indent) const { return to_json_value(*this, true).dump(indent); }

std::string RunConfig::canonical() const { return to_json_value(*this, false).dump(); }

std::uint64_t RunConfig::fingerprint() const {
  const std::string s = canonical();
  return fnv1a(s.data(), s.size());
}

PretrainConfig RunConfig::resolved_pretrain(NodeId num_nodes) const {
  PretrainConfig p = pretrain;
  if (encode_mode_auto) p.encode_mode = default_encode_mode(num_nodes);
  return p;
}

RunConfig parse_run_config(const std::string& json_text, const std::vector<std::string>& overrides) {
  json j;
  try {
    j = json_text.empty() ? json::object() : json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  for (const auto& o : overrides) apply_override(j, o);
  RunConfig c = from_json_value(j);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::string text;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw DataError(path, "cannot open config");
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  try {
    return parse_run_config(text, overrides);
  } catch (const std::invalid_argument& e) {
    if (path.empty()) throw;
    throw DataError(path, e.what());
  }
}

}  // namespace gsr
