#include "alchemy/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "alchemy/error.hpp"
#include "alchemy/metrics.hpp"
#include "alchemy/random.hpp"
#include "alchemy/trainer.hpp"

namespace alchemy {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

const std::vector<double> kGridLearningRate{1e-3, 4e-4, 5e-4, 1e-4, 9e-5, 7e-5, 1e-5};
const std::vector<double> kGridWeightDecay{0.1, 0.01, 0.001};
const std::vector<double> kGridGamma{0.2, 0.4, 0.5, 0.6, 0.7};
const std::vector<double> kGridMinLr{7e-5, 8e-5, 9e-5, 0.000085, 0.000095, 1e-5};

template <class T>
T get_as(const json& v, const std::string& path) {
  try {
    return v.get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, path + ": " + e.what());
  }
}

/// Re-throws errors from nested parsers as config errors under `path`.
template <class F>
auto with_path(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInvalidConfig) throw;
    throw Error(ErrorCode::kInvalidConfig, path + ": " + e.what());
  }
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    out << content;
    if (!out) throw Error(ErrorCode::kIo, "failed writing " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot move " + tmp.string() + " into place: " + ec.message());
}

bool on_grid(double v, const std::vector<double>& grid) {
  return std::any_of(grid.begin(), grid.end(), [v](double g) { return std::abs(v - g) <= 1e-12 * std::max(1.0, g); });
}

std::optional<double> as_rate(const json& v) {
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kInvalidConfig, "config: expected an object");
  RunConfig c;
  bool k_set = false;
  bool seq_len_set = false;
  for (const auto& [key, value] : j.items()) {
    if (key == "task_kind") {
      c.task_kind = with_path("task_kind", [&] { return task_kind_from_name(get_as<std::string>(value, key)); });
    } else if (key == "k") {
      c.ks = value.is_array() ? get_as<std::vector<int>>(value, key) : std::vector<int>{get_as<int>(value, key)};
      k_set = true;
    } else if (key == "dataset") {
      if (!value.is_object()) throw Error(ErrorCode::kInvalidConfig, "dataset: expected an object");
      for (const auto& [dk, dv] : value.items()) {
        const std::string path = "dataset." + dk;
        if (dk == "pool_size") c.dataset.pool_size = get_as<int>(dv, path);
        else if (dk == "split_ratio") c.dataset.split_ratio = get_as<double>(dv, path);
        else if (dk == "episodes_per_chemistry") c.dataset.episodes_per_chemistry = get_as<int>(dv, path);
        else if (dk == "support_mode")
          c.dataset.support_mode = with_path(path, [&] { return support_mode_from_name(get_as<std::string>(dv, path)); });
        else if (dk == "max_support") c.dataset.max_support = get_as<int>(dv, path);
        else if (dk == "seed") c.dataset.seed = get_as<std::uint64_t>(dv, path);
        else throw Error(ErrorCode::kInvalidConfig, path + ": unknown key");
      }
    } else if (key == "model") {
      c.model = ModelConfig::from_json(value);
      seq_len_set = value.contains("max_seq_len");
    } else if (key == "optimizer") {
      c.optimizer = OptimizerConfig::from_json(value);
    } else if (key == "seeds") {
      c.seeds = get_as<std::vector<std::uint64_t>>(value, key);
    } else if (key == "output_dir") {
      c.output_dir = get_as<std::string>(value, key);
    } else if (key == "dataset_dir") {
      c.dataset_dir = get_as<std::string>(value, key);
    } else if (key == "log_every") {
      c.log_every = get_as<int>(value, key);
    } else if (key == "checkpoint_every") {
      c.checkpoint_every = get_as<int>(value, key);
    } else if (key == "eval_train") {
      c.eval_train = get_as<bool>(value, key);
    } else if (key == "max_batch_tokens") {
      c.max_batch_tokens = get_as<int>(value, key);
    } else if (key == "max_steps") {
      if (value.is_null()) c.max_steps.reset();
      else c.max_steps = get_as<long>(value, key);
    } else {
      throw Error(ErrorCode::kInvalidConfig, key + ": unknown key");
    }
  }
  if (!k_set) c.ks = {c.task_kind == TaskKind::kWithheldPair ? 1 : 2};
  if (!seq_len_set) c.model.max_seq_len = default_max_seq_len(c.task_kind);
  c.validate();
  return c;
}

void RunConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidConfig, what); };
  if (ks.empty()) bad("k: at least one value required");
  for (int k : ks) {
    if (task_kind == TaskKind::kWithheldPair && k != 1) bad("k: withheld_pair uses k = 1");
    if (task_kind != TaskKind::kWithheldPair && (k < 2 || k > 5)) bad("k: must be in 2..5");
  }
  if (std::set<int>(ks.begin(), ks.end()).size() != ks.size()) bad("k: duplicate values");
  if (dataset.pool_size < 2) bad("dataset.pool_size must be >= 2");
  if (!(dataset.split_ratio > 0.0 && dataset.split_ratio < 1.0)) bad("dataset.split_ratio must be in (0, 1)");
  if (dataset.episodes_per_chemistry < 1) bad("dataset.episodes_per_chemistry must be >= 1");
  if (task_kind == TaskKind::kWithheldPair && dataset.episodes_per_chemistry > 8) {
    bad("dataset.episodes_per_chemistry must be <= 8 for withheld_pair");
  }
  if (dataset.max_support < 1) bad("dataset.max_support must be >= 1");
  model.validate();
  optimizer.validate();
  if (seeds.empty()) bad("seeds: at least one seed required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) bad("seeds: duplicate values");
  if (output_dir.empty()) bad("output_dir must not be empty");
  if (log_every < 1) bad("log_every must be >= 1");
  if (checkpoint_every < 0) bad("checkpoint_every must be >= 0");
  if (max_batch_tokens < 1) bad("max_batch_tokens must be >= 1");
  if (max_steps && *max_steps < 0) bad("max_steps must be >= 0");
  if (model.vocab_size != kVocabSize) bad("model.vocab_size must be " + std::to_string(kVocabSize));
  if (model.n_classes != kNumStoneClasses) bad("model.n_classes must be " + std::to_string(kNumStoneClasses));
}

ojson RunConfig::to_json() const {
  ojson j;
  j["task_kind"] = task_kind_name(task_kind);
  j["k"] = ks;
  ojson d;
  d["pool_size"] = dataset.pool_size;
  d["split_ratio"] = dataset.split_ratio;
  d["episodes_per_chemistry"] = dataset.episodes_per_chemistry;
  d["support_mode"] = support_mode_name(dataset.support_mode);
  d["max_support"] = dataset.max_support;
  d["seed"] = dataset.seed;
  j["dataset"] = d;
  j["model"] = model.to_json();
  j["optimizer"] = optimizer.to_json();
  j["seeds"] = seeds;
  j["output_dir"] = output_dir;
  j["dataset_dir"] = dataset_dir;
  j["log_every"] = log_every;
  j["checkpoint_every"] = checkpoint_every;
  j["eval_train"] = eval_train;
  j["max_batch_tokens"] = max_batch_tokens;
  j["max_steps"] = max_steps ? ojson(*max_steps) : ojson(nullptr);
  return j;
}

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kInternal, "SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 0xf];
  }
  return out;
}

std::string json_hash(const json& j) { return sha256_hex(j.dump()); }

std::string config_hash(const RunConfig& cfg) {
  json j = json::parse(cfg.to_json().dump());
  j.erase("output_dir");
  j.erase("dataset_dir");
  // Cadences affect what is logged, not what is learned; keep them in the
  // hash anyway so equal hashes mean equal logs.
  return json_hash(j);
}

std::string dataset_hash(const RunConfig& cfg) {
  const json full = json::parse(cfg.to_json().dump());
  json j;
  j["task_kind"] = full["task_kind"];
  j["k"] = full["k"];
  j["dataset"] = full["dataset"];
  return json_hash(j);
}

void check_sweep_grid(const RunConfig& cfg) {
  const auto& o = cfg.optimizer;
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidConfig, what + " is not in the sweep grid"); };
  if (!on_grid(o.learning_rate, kGridLearningRate)) bad("optimizer.learning_rate");
  if (!on_grid(o.weight_decay, kGridWeightDecay)) bad("optimizer.weight_decay");
  if (o.scheduler == Scheduler::kMultiStep && !on_grid(o.gamma, kGridGamma)) bad("optimizer.gamma");
  if ((o.scheduler == Scheduler::kCosine || o.scheduler == Scheduler::kCosineWithRestarts) &&
      !on_grid(o.min_lr, kGridMinLr)) {
    bad("optimizer.min_lr");
  }
}

fs::path resolve_output(const std::string& path) {
  fs::path p(path);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("ALCHEMY_OUTPUT_ROOT"); root != nullptr && *root != '\0') return fs::path(root) / p;
  return p;
}

json read_config_file(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kInvalidConfig, path.string() + ": " + e.what());
  }
}

void apply_override(json& config, const std::string& dotted, const json& value) {
  if (dotted.empty()) throw Error(ErrorCode::kInvalidConfig, "empty override path");
  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string part = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw Error(ErrorCode::kInvalidConfig, "malformed override path '" + dotted + "'");
    if (!node->is_object()) throw Error(ErrorCode::kInvalidConfig, dotted + ": parent is not an object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

// ---------------------------------------------------------------------------
// Datasets

namespace {

struct Dataset {
  std::vector<Chemistry> chemistries;
  std::vector<EpisodeRecord> train;
  std::vector<EpisodeRecord> val;
  std::string manifest_hash;
};

/// Transition graph signature: where each potion leads from each vertex,
/// expressed in stone classes.
std::string graph_signature(const Chemistry& chem) {
  std::string sig;
  for (Vertex v = 0; v < kNumVertices; ++v) {
    sig += std::to_string(stone_index(chem.stone(v))) + ":";
    for (auto p : kAllPotionColors) {
      sig += is_applicable(chem, v, p) ? std::to_string(stone_index(chem.stone(apply_potion(chem, v, p)))) : "-";
      sig += ',';
    }
    sig += ';';
  }
  return sig;
}

std::string episode_id(std::uint32_t chem, int k, std::size_t idx) {
  return std::to_string(chem) + "-" + std::to_string(k) + "-" + std::to_string(idx);
}

std::vector<std::pair<std::string, Episode>> episodes_for(const RunConfig& cfg, const Chemistry& chem,
                                                          std::uint32_t id) {
  std::vector<std::pair<std::string, Episode>> out;
  const auto& d = cfg.dataset;
  const auto n = static_cast<std::size_t>(d.episodes_per_chemistry);
  for (int k : cfg.ks) {
    if (cfg.task_kind == TaskKind::kWithheldPair) {
      auto eps = build_withheld_pair_episodes(chem, id, derive_seed(d.seed, {0xe915, id}));
      if (eps.size() > n) {
        Rng rng(derive_seed(d.seed, {0x5b5e, id}));
        rng.shuffle(std::span<Episode>(eps));
        eps.resize(n);
      }
      for (std::size_t i = 0; i < eps.size(); ++i) out.emplace_back(episode_id(id, k, i), std::move(eps[i]));
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        const auto seed = derive_seed(d.seed, {0xe915, id, static_cast<std::uint64_t>(k), i});
        Episode e = cfg.task_kind == TaskKind::kComposition
                        ? build_composition_episode(chem, id, k, seed)
                        : build_decomposition_episode(chem, id, k, d.support_mode, d.max_support, seed);
        out.emplace_back(episode_id(id, k, i), std::move(e));
      }
    }
  }
  return out;
}

fs::path dataset_dir_for(const RunConfig& cfg) {
  if (!cfg.dataset_dir.empty()) return resolve_output(cfg.dataset_dir);
  return resolve_output(cfg.output_dir) / "dataset";
}

ojson file_entry(const fs::path& path, std::size_t lines) {
  ojson e;
  e["sha256"] = sha256_hex(read_file(path));
  e["lines"] = lines;
  return e;
}

ojson generate_into(const RunConfig& cfg, const fs::path& dir) {
  const auto& d = cfg.dataset;
  std::vector<Chemistry> pool;
  std::set<std::string> seen;
  std::uint64_t attempt = 0;
  std::size_t duplicates = 0;
  while (static_cast<int>(pool.size()) < d.pool_size) {
    if (attempt > static_cast<std::uint64_t>(d.pool_size) * 100 + 1000) {
      throw Error(ErrorCode::kGenerationExhausted, "could not find enough distinct chemistries");
    }
    Chemistry chem = generate_chemistry(derive_seed(d.seed, {0xc4e7, attempt++}));
    if (!seen.insert(graph_signature(chem)).second) {
      ++duplicates;
      continue;
    }
    pool.push_back(chem);
  }
  std::vector<std::uint32_t> ids(pool.size());
  for (std::uint32_t i = 0; i < ids.size(); ++i) ids[i] = i;
  const SplitSpec split = split_chemistries(ids, d.split_ratio, derive_seed(d.seed, {0x5911}));

  std::string chem_text;
  for (const auto& c : pool) chem_text += chemistry_to_json_line(c) + "\n";
  auto write_split = [&](const std::vector<std::uint32_t>& which, const fs::path& path) {
    std::vector<std::uint32_t> sorted = which;
    std::sort(sorted.begin(), sorted.end());
    std::string text;
    std::size_t lines = 0;
    for (auto id : sorted) {
      for (const auto& [eid, e] : episodes_for(cfg, pool[id], id)) {
        text += episode_to_json_line(e, eid) + "\n";
        ++lines;
      }
    }
    write_file(path, text);
    return lines;
  };
  fs::create_directories(dir);
  write_file(dir / "chemistries.jsonl", chem_text);
  const std::size_t n_train = write_split(split.train_chemistries, dir / "train.jsonl");
  const std::size_t n_val = write_split(split.val_chemistries, dir / "val.jsonl");

  ojson m;
  m["manifest_version"] = 1;
  m["code_version"] = kVersion;
  m["dataset_hash"] = dataset_hash(cfg);
  m["task_kind"] = task_kind_name(cfg.task_kind);
  m["k"] = cfg.ks;
  m["pool_size"] = pool.size();
  m["duplicates_skipped"] = duplicates;
  ojson s;
  s["ratio"] = d.split_ratio;
  s["train_chemistries"] = split.train_chemistries.size();
  s["val_chemistries"] = split.val_chemistries.size();
  auto sorted_train = split.train_chemistries;
  auto sorted_val = split.val_chemistries;
  std::sort(sorted_train.begin(), sorted_train.end());
  std::sort(sorted_val.begin(), sorted_val.end());
  s["train_ids"] = sorted_train;
  s["val_ids"] = sorted_val;
  m["split"] = s;
  ojson files;
  files["chemistries.jsonl"] = file_entry(dir / "chemistries.jsonl", pool.size());
  files["train.jsonl"] = file_entry(dir / "train.jsonl", n_train);
  files["val.jsonl"] = file_entry(dir / "val.jsonl", n_val);
  m["files"] = files;
  m["episodes"] = {{"train", n_train}, {"val", n_val}};
  m["content_hash"] = sha256_hex(files["chemistries.jsonl"]["sha256"].get<std::string>() +
                                 files["train.jsonl"]["sha256"].get<std::string>() +
                                 files["val.jsonl"]["sha256"].get<std::string>());
  write_file(dir / "manifest.json", m.dump(2) + "\n");
  return m;
}

/// Reuses an existing dataset whose manifest matches the config and whose
/// files are intact; otherwise regenerates it.
ojson ensure_dataset(const RunConfig& cfg, const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (fs::exists(manifest_path)) {
    try {
      const ojson m = ojson::parse(read_file(manifest_path));
      bool ok = m.at("dataset_hash").get<std::string>() == dataset_hash(cfg);
      for (const auto& name : {"chemistries.jsonl", "train.jsonl", "val.jsonl"}) {
        if (!ok) break;
        ok = fs::exists(dir / name) && sha256_hex(read_file(dir / name)) == m.at("files").at(name).at("sha256");
      }
      if (ok) return m;
    } catch (const json::exception&) {
      // fall through and regenerate
    }
  }
  return generate_into(cfg, dir);
}

std::vector<Chemistry> load_chemistries(const fs::path& path) {
  std::vector<Chemistry> out;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    try {
      out.push_back(chemistry_from_json_line(lines[i]));
    } catch (const Error& e) {
      throw ParseError(i + 1, path.string() + ": " + e.what());
    }
  }
  return out;
}

std::vector<EpisodeRecord> load_episodes(const fs::path& path) {
  std::vector<EpisodeRecord> out;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    try {
      out.push_back(episode_from_json_line(lines[i]));
    } catch (const Error& e) {
      throw ParseError(i + 1, path.string() + ": " + e.what());
    }
  }
  return out;
}

Dataset load_dataset(const fs::path& dir, const ojson& manifest) {
  Dataset d;
  d.chemistries = load_chemistries(dir / "chemistries.jsonl");
  d.train = load_episodes(dir / "train.jsonl");
  d.val = load_episodes(dir / "val.jsonl");
  d.manifest_hash = manifest.at("content_hash").get<std::string>();
  return d;
}

std::vector<EpisodeRecord> filter_k(const std::vector<EpisodeRecord>& records, int k) {
  std::vector<EpisodeRecord> out;
  for (const auto& r : records) {
    if (r.episode.k() == k) out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metric logs

std::vector<ojson> read_rows(const fs::path& path) {
  std::vector<ojson> rows;
  if (!fs::exists(path)) return rows;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    try {
      rows.push_back(ojson::parse(lines[i]));
    } catch (const json::parse_error& e) {
      throw ParseError(i + 1, path.string() + ": " + e.what());
    }
  }
  return rows;
}

/// Drops rows with epoch > `keep_through` (rows written after the last
/// checkpoint of an interrupted run).
void truncate_log(const fs::path& path, int keep_through) {
  if (!fs::exists(path)) return;
  std::string text;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    const auto row = ojson::parse(line);
    if (row.at("epoch").get<int>() <= keep_through) text += line + "\n";
  }
  write_file(path, text);
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Sample standard deviation over sqrt(n); 0 for a single value.
double sem_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

std::string middle_count_key(TaskKind kind) { return kind == TaskKind::kComposition ? "count_r" : "count_b"; }

/// p_a * P[mid|A] * P[C|A&mid] from a row's counts; 0 when a factor is
/// undefined (then count_c is 0 as well).
std::optional<double> chain_product(const ojson& row) {
  const auto kind = task_kind_from_name(row.at("task_kind").get<std::string>());
  const auto n = row.at("n").get<double>();
  const auto a = row.at("count_a").get<double>();
  const std::string mid_key = middle_count_key(kind);
  if (!row.contains(mid_key)) return std::nullopt;
  const auto mid = row.at(mid_key).get<double>();
  const auto c = row.at("count_c").get<double>();
  if (n == 0) return std::nullopt;
  if (a == 0 || mid == 0) return 0.0;
  return (a / n) * (mid / a) * (c / mid);
}

std::vector<std::string> default_plot_metrics(TaskKind kind) {
  switch (kind) {
    case TaskKind::kWithheldPair:
      return {"p_c", "p_a", "p_b_given_a", "one_minus_p_b_given_a", "p_c_given_ab", "p_tr_given_a", "p_nbr_given_a",
              "p_rr_given_a", "p_c_given_y_in_tr"};
    case TaskKind::kComposition:
      return {"p_c", "p_a", "p_r_given_a", "p_c_given_ar"};
    case TaskKind::kDecomposition:
      return {"p_c", "p_a", "p_b_given_a", "one_minus_p_b_given_a", "p_c_given_ab", "p_en_given_a", "p_nr_given_en"};
  }
  return {};
}

std::string run_id_for(const RunConfig& cfg, int k, std::uint64_t seed) {
  return std::string(task_kind_name(cfg.task_kind)) + "-k" + std::to_string(k) + "-seed" + std::to_string(seed);
}

RunConfig single_run(const RunConfig& cfg, int k, std::uint64_t seed) {
  RunConfig r = cfg;
  r.ks = {k};
  r.seeds = {seed};
  return r;
}

ojson summarize_runs(const RunConfig& cfg, const std::vector<ojson>& runs) {
  ojson out = ojson::array();
  for (int k : cfg.ks) {
    std::map<std::string, std::vector<double>> values;
    std::vector<std::uint64_t> seeds;
    int final_epoch = -1;
    for (const auto& run : runs) {
      if (run.at("k").get<int>() != k || run.at("status") != "completed") continue;
      const auto rows = read_rows(fs::path(run.at("run_dir").get<std::string>()) / "metrics.jsonl");
      const ojson* last = nullptr;
      for (const auto& row : rows) {
        if (row.at("split") == "val" && (last == nullptr || row.at("epoch") >= last->at("epoch"))) last = &row;
      }
      if (last == nullptr) continue;
      seeds.push_back(run.at("seed").get<std::uint64_t>());
      final_epoch = last->at("epoch").get<int>();
      for (const auto& metric : default_plot_metrics(cfg.task_kind)) {
        if (last->contains(metric)) {
          if (auto v = as_rate(last->at(metric))) values[metric].push_back(*v);
        }
      }
    }
    ojson row;
    row["task_kind"] = task_kind_name(cfg.task_kind);
    row["k"] = k;
    row["split"] = "val";
    row["epoch"] = final_epoch;
    row["seeds"] = seeds;
    for (const auto& metric : default_plot_metrics(cfg.task_kind)) {
      const auto it = values.find(metric);
      if (it == values.end() || it->second.empty()) {
        row[metric] = {{"mean", nullptr}, {"sem", nullptr}, {"n", 0}};
      } else {
        row[metric] = {{"mean", mean_of(it->second)}, {"sem", sem_of(it->second)}, {"n", it->second.size()}};
      }
    }
    out.push_back(row);
  }
  return out;
}

ojson train_one(const RunConfig& run_cfg, const Dataset& data, int k, std::uint64_t seed, const fs::path& runs_root,
                const TrainOptions& options) {
  const std::string run_id = run_id_for(run_cfg, k, seed);
  const std::string hash = config_hash(run_cfg);
  const fs::path dir = runs_root / run_id;
  const fs::path log_path = dir / "metrics.jsonl";
  const fs::path ckpt_path = dir / "checkpoint.bin";
  const fs::path status_path = dir / "status.json";
  fs::create_directories(dir);

  ojson status;
  status["run_id"] = run_id;
  status["run_dir"] = dir.string();
  status["config_hash"] = hash;
  status["seed"] = seed;
  status["k"] = k;

  if (!options.fresh && fs::exists(status_path)) {
    const ojson prev = ojson::parse(read_file(status_path));
    if (prev.value("config_hash", "") == hash && prev.value("status", "") == "completed") {
      status["status"] = "completed";
      status["last_epoch"] = prev.value("last_epoch", 0);
      status["reused"] = true;
      return status;
    }
  }

  ojson meta;
  meta["run_id"] = run_id;
  meta["config_hash"] = hash;
  meta["dataset_manifest_hash"] = data.manifest_hash;
  meta["code_version"] = kVersion;
  meta["seed"] = seed;
  meta["k"] = k;
  meta["config"] = run_cfg.to_json();
  write_file(dir / "config.json", meta.dump(2) + "\n");

  const auto train_eps = label_episodes(filter_k(data.train, k), data.chemistries, run_cfg.model.max_seq_len);
  const auto val_eps = label_episodes(filter_k(data.val, k), data.chemistries, run_cfg.model.max_seq_len);
  if (train_eps.empty() || val_eps.empty()) throw Error(ErrorCode::kEmptyPool, "no episodes for k=" + std::to_string(k));

  TrainerOptions to;
  to.model = run_cfg.model;
  to.optimizer = run_cfg.optimizer;
  to.seed = seed;
  to.max_batch_tokens = run_cfg.max_batch_tokens;
  to.checkpoint_every = run_cfg.checkpoint_every;
  to.eval_every = run_cfg.log_every;
  to.eval_train = run_cfg.eval_train;
  to.max_steps = run_cfg.max_steps;
  to.checkpoint_path = ckpt_path;
  to.run_id = run_id;
  to.config_hash = hash;
  to.task_kind = run_cfg.task_kind;
  to.k = k;
  Trainer trainer(to, &train_eps, &val_eps);

  bool resumed = false;
  if (!options.fresh && fs::exists(ckpt_path)) {
    try {
      trainer.load_checkpoint(ckpt_path);
      truncate_log(log_path, trainer.epoch());
      resumed = true;
    } catch (const Error&) {
      resumed = false;
    }
  }
  if (!resumed) {
    std::error_code ec;
    fs::remove(ckpt_path, ec);
    write_file(log_path, "");
  }

  status["status"] = "running";
  write_file(status_path, status.dump(2) + "\n");

  std::ofstream log(log_path, std::ios::app);
  if (!log) throw Error(ErrorCode::kIo, "cannot append to " + log_path.string());
  const TrainResult result = trainer.run(
      [&](const ojson& row) {
        log << row.dump() << "\n";
        log.flush();
        if (options.verbose && row.at("split") == "val") {
          std::cerr << "[" << run_id << "] epoch " << row.at("epoch").get<int>() << " train_loss "
                    << row.at("train_loss").dump() << " val p_c " << row.at("p_c").dump() << " p_a "
                    << row.at("p_a").dump() << "\n";
        }
      },
      [&](int epoch) {
        status["checkpoint_epoch"] = epoch;
        write_file(status_path, status.dump(2) + "\n");
      });

  status["status"] = result.failed ? "failed" : "completed";
  status["last_epoch"] = result.last_epoch;
  status["steps"] = result.steps;
  status["resumed"] = resumed;
  if (result.failed) status["reason"] = result.failure_reason;
  write_file(status_path, status.dump(2) + "\n");
  return status;
}

}  // namespace

// ---------------------------------------------------------------------------
// Commands

ojson cmd_generate(const RunConfig& cfg) {
  cfg.validate();
  const fs::path dir = dataset_dir_for(cfg);
  ojson m = generate_into(cfg, dir);
  ojson out;
  out["dataset_dir"] = dir.string();
  out["manifest"] = m;
  return out;
}

ojson cmd_train(const RunConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  const fs::path out_dir = resolve_output(cfg.output_dir);
  const fs::path data_dir = dataset_dir_for(cfg);
  const ojson manifest = ensure_dataset(cfg, data_dir);
  const Dataset data = load_dataset(data_dir, manifest);

  ojson top;
  top["config_hash"] = config_hash(cfg);
  top["dataset_manifest_hash"] = data.manifest_hash;
  top["code_version"] = kVersion;
  top["config"] = cfg.to_json();
  write_file(out_dir / "config.json", top.dump(2) + "\n");

  std::vector<ojson> runs;
  for (int k : cfg.ks) {
    for (std::uint64_t seed : cfg.seeds) {
      const RunConfig run_cfg = single_run(cfg, k, seed);
      ojson status;
      try {
        status = train_one(run_cfg, data, k, seed, out_dir / "runs", options);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kIo || e.code() == ErrorCode::kInvalidConfig) throw;
        status["run_id"] = run_id_for(run_cfg, k, seed);
        status["run_dir"] = (out_dir / "runs" / run_id_for(run_cfg, k, seed)).string();
        status["seed"] = seed;
        status["k"] = k;
        status["status"] = "failed";
        status["reason"] = e.what();
      }
      runs.push_back(status);
    }
  }
  ojson summary;
  summary["config_hash"] = config_hash(cfg);
  summary["runs"] = runs;
  summary["aggregate"] = summarize_runs(cfg, runs);
  write_file(out_dir / "summary.json", summary.dump(2) + "\n");
  summary["output_dir"] = out_dir.string();
  summary["dataset_dir"] = data_dir.string();
  return summary;
}

ojson cmd_sweep(const json& grid_config, const TrainOptions& options) {
  if (!grid_config.is_object()) throw Error(ErrorCode::kInvalidConfig, "sweep config: expected an object");
  json base = grid_config;
  const json grid = base.contains("grid") ? base["grid"] : json::object();
  const json points_in = base.contains("points") ? base["points"] : json::array();
  const bool allow_off_grid = base.contains("allow_off_grid") ? get_as<bool>(base["allow_off_grid"], "allow_off_grid") : false;
  base.erase("grid");
  base.erase("points");
  base.erase("allow_off_grid");
  if (!grid.is_object()) throw Error(ErrorCode::kInvalidConfig, "grid: expected an object of lists");
  if (!points_in.is_array()) throw Error(ErrorCode::kInvalidConfig, "points: expected a list of objects");

  // Cartesian expansion of the grid, then listed points.
  std::vector<json> points{json::object()};
  for (const auto& [path, values] : grid.items()) {
    if (!values.is_array() || values.empty()) {
      throw Error(ErrorCode::kInvalidConfig, "grid." + path + ": expected a non-empty list");
    }
    std::vector<json> next;
    for (const auto& p : points) {
      for (const auto& v : values) {
        json q = p;
        q[path] = v;
        next.push_back(q);
      }
    }
    points = std::move(next);
  }
  if (grid.empty() && !points_in.empty()) points.clear();
  for (const auto& p : points_in) {
    if (!p.is_object()) throw Error(ErrorCode::kInvalidConfig, "points: expected objects");
    points.push_back(p);
  }

  const RunConfig base_cfg = RunConfig::from_json(base);
  const fs::path out_dir = resolve_output(base_cfg.output_dir);
  std::set<std::string> seen;
  ojson children = ojson::array();
  std::vector<ojson> table;
  int duplicates = 0;
  for (const auto& point : points) {
    json cfg_json = base;
    for (const auto& [path, value] : point.items()) apply_override(cfg_json, path, value);
    RunConfig cfg = with_path("point " + point.dump(), [&] { return RunConfig::from_json(cfg_json); });
    if (!allow_off_grid) with_path("point " + point.dump(), [&] { check_sweep_grid(cfg); return 0; });
    const std::string hash = config_hash(cfg);
    if (!seen.insert(hash).second) {
      ++duplicates;
      continue;
    }
    cfg.output_dir = (out_dir / "points" / hash.substr(0, 12)).string();
    cfg.dataset_dir = (out_dir / "datasets" / dataset_hash(cfg).substr(0, 12)).string();

    ojson child;
    child["point"] = point;
    child["config_hash"] = hash;
    child["output_dir"] = cfg.output_dir;
    try {
      const ojson summary = cmd_train(cfg, options);
      child["runs"] = summary["runs"];
      child["aggregate"] = summary["aggregate"];
      // Best validation exact-match (mean over seeds) across epochs, per k.
      for (int k : cfg.ks) {
        std::map<int, std::vector<double>> by_epoch;
        int total = 0;
        int failed = 0;
        for (const auto& run : summary["runs"]) {
          if (run.at("k").get<int>() != k) continue;
          ++total;
          if (run.at("status") != "completed") {
            ++failed;
            continue;
          }
          for (const auto& row : read_rows(fs::path(run.at("run_dir").get<std::string>()) / "metrics.jsonl")) {
            if (row.at("split") != "val") continue;
            if (auto v = as_rate(row.at("p_c"))) by_epoch[row.at("epoch").get<int>()].push_back(*v);
          }
        }
        ojson line;
        line["point"] = point;
        line["config_hash"] = hash;
        line["k"] = k;
        line["runs"] = total;
        line["failed"] = failed;
        std::optional<double> best;
        int best_epoch = -1;
        for (const auto& [epoch, vals] : by_epoch) {
          const double m = mean_of(vals);
          if (!best || m > *best) {
            best = m;
            best_epoch = epoch;
          }
        }
        line["best_val_p_c"] = best ? ojson(*best) : ojson(nullptr);
        line["best_epoch"] = best_epoch;
        table.push_back(line);
      }
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kIo) throw;
      child["error"] = e.what();
      ojson line;
      line["point"] = point;
      line["config_hash"] = hash;
      line["error"] = e.what();
      table.push_back(line);
    }
    children.push_back(child);
  }

  ojson summary;
  summary["points"] = children.size();
  summary["duplicates_skipped"] = duplicates;
  summary["table"] = table;
  write_file(out_dir / "sweep_summary.json", summary.dump(2) + "\n");
  std::string csv = "config_hash,k,runs,failed,best_val_p_c,best_epoch,point\n";
  for (const auto& line : table) {
    std::string point = line["point"].dump();
    std::string quoted;
    for (char ch : point) quoted += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    csv += line["config_hash"].get<std::string>() + "," + (line.contains("k") ? line["k"].dump() : "") + "," +
           (line.contains("runs") ? line["runs"].dump() : "") + "," +
           (line.contains("failed") ? line["failed"].dump() : "") + "," +
           (line.contains("best_val_p_c") && !line["best_val_p_c"].is_null() ? line["best_val_p_c"].dump() : "") +
           "," + (line.contains("best_epoch") ? line["best_epoch"].dump() : "") + ",\"" + quoted + "\"\n";
  }
  write_file(out_dir / "sweep_summary.csv", csv);
  summary["children"] = children;
  summary["output_dir"] = out_dir.string();
  return summary;
}

ojson chance_guides(TaskKind kind, int k) {
  ojson g;
  switch (kind) {
    case TaskKind::kWithheldPair:
    case TaskKind::kDecomposition:
      g["p_c"] = 0.125;
      g["p_b_given_a"] = 0.5;
      g["one_minus_p_b_given_a"] = 0.5;
      g["p_c_given_ab"] = 0.25;
      break;
    case TaskKind::kComposition:
      g["p_c"] = 0.125;
      g["p_r_given_a"] = k % 2 == 0 ? 3.0 / 8.0 : 4.0 / 8.0;
      g["p_c_given_ar"] = k % 2 == 0 ? 1.0 / 3.0 : 1.0 / 4.0;
      break;
  }
  return g;
}

ojson cmd_evaluate(const EvaluateRequest& request) {
  const auto chemistries = load_chemistries(request.chemistries);
  const auto records = load_episodes(request.episodes);
  std::vector<EventRecord> events;

  if (request.chance) {
    const ChanceKind kind = chance_kind_from_name(*request.chance);
    std::vector<EpisodeContext> ctx;
    for (const auto& r : records) {
      if (r.episode.chemistry_id >= chemistries.size()) {
        throw Error(ErrorCode::kMissingOracleContext, "episode " + r.id + " references an unknown chemistry");
      }
      ctx.push_back({&chemistries[r.episode.chemistry_id], &r.episode, r.id});
    }
    events = chance_records(kind, ctx);
  } else {
    std::map<std::string, const EpisodeRecord*> by_id;
    for (const auto& r : records) {
      if (!by_id.emplace(r.id, &r).second) throw Error(ErrorCode::kInvalidArgument, "duplicate episode id " + r.id);
    }
    const auto lines = read_lines(request.predictions);
    std::set<std::string> predicted_ids;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      std::string id;
      int predicted = 0;
      try {
        const json j = json::parse(lines[i]);
        id = j.at("episode_id").get<std::string>();
        const json& p = j.at("predicted");
        if (p.is_array()) {
          const auto f = p.get<std::vector<int>>();
          if (f.size() != 4) throw Error(ErrorCode::kParse, "predicted stone needs 4 levels");
          Stone s{static_cast<std::uint8_t>(f[0]), static_cast<std::uint8_t>(f[1]), static_cast<std::uint8_t>(f[2]),
                  static_cast<std::uint8_t>(f[3])};
          if (!s.valid()) throw Error(ErrorCode::kParse, "predicted stone levels out of range");
          predicted = stone_index(s);
        } else {
          predicted = p.get<int>();
        }
      } catch (const json::exception& e) {
        throw ParseError(i + 1, request.predictions.string() + ": " + e.what());
      } catch (const Error& e) {
        throw ParseError(i + 1, request.predictions.string() + ": " + e.what());
      }
      const auto it = by_id.find(id);
      if (it == by_id.end()) {
        throw Error(ErrorCode::kMissingOracleContext, "prediction for unknown episode " + id);
      }
      if (!predicted_ids.insert(id).second) throw Error(ErrorCode::kInvalidArgument, "duplicate prediction for " + id);
      const Episode& e = it->second->episode;
      if (e.chemistry_id >= chemistries.size()) {
        throw Error(ErrorCode::kMissingOracleContext, "episode " + id + " references an unknown chemistry");
      }
      events.push_back(classify(chemistries[e.chemistry_id], e, predicted, id));
    }
  }

  // Group by (task kind, k).
  std::map<std::pair<int, int>, std::vector<EventRecord>> groups;
  for (const auto& ev : events) groups[{static_cast<int>(ev.task_kind), ev.k}].push_back(ev);
  ojson out;
  out["episodes"] = records.size();
  out["predictions"] = request.chance ? ojson(nullptr) : ojson(events.size());
  if (request.chance) out["chance"] = *request.chance;
  ojson results = ojson::array();
  for (const auto& [key, evs] : groups) {
    const auto kind = static_cast<TaskKind>(key.first);
    const FactorizedMetrics m = factorize(evs, kind);
    ojson g;
    g["task_kind"] = task_kind_name(kind);
    g["k"] = key.second;
    const ojson flat = metrics_to_json(m);
    for (const auto& [mk, mv] : flat.items()) g[mk] = mv;
    if (kind == TaskKind::kWithheldPair) append_reward_bins(g, reward_binned_metrics(evs));
    std::int64_t nesting_violations = 0;
    for (const auto& ev : evs) nesting_violations += ev.nesting_holds() ? 0 : 1;
    g["nesting_violations"] = nesting_violations;
    g["chain_rule_identity"] = m.chain_rule_identity_exact();
    results.push_back(g);
  }
  out["results"] = results;
  return out;
}

ojson cmd_export_plots(const ExportRequest& request) {
  // Collect every metrics.jsonl under the given directories.
  std::vector<fs::path> logs;
  for (const auto& root : request.runs) {
    if (!fs::exists(root)) throw Error(ErrorCode::kIo, "no such run directory: " + root.string());
    if (fs::is_regular_file(root)) {
      logs.push_back(root);
      continue;
    }
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
      if (entry.is_regular_file() && entry.path().filename() == "metrics.jsonl") logs.push_back(entry.path());
    }
  }
  std::sort(logs.begin(), logs.end());

  struct Series {
    TaskKind kind;
    int k;
    // epoch -> metric -> per-seed values
    std::map<int, std::map<std::string, std::vector<double>>> values;
    std::set<std::uint64_t> seeds;
  };
  std::map<std::string, Series> series;
  std::string per_seed = "series,seed,epoch,p_a,middle,last,product,p_c\n";
  std::size_t rows_used = 0;
  std::set<std::string> present;
  for (const auto& log : logs) {
    for (const auto& row : read_rows(log)) {
      if (row.value("split", "") != request.split) continue;
      const auto kind = task_kind_from_name(row.at("task_kind").get<std::string>());
      const int k = row.at("k").get<int>();
      const std::string label = std::string(task_kind_name(kind)) + "-k" + std::to_string(k);
      auto [it, _] = series.try_emplace(label, Series{kind, k, {}, {}});
      const int epoch = row.at("epoch").get<int>();
      const auto seed = row.at("seed").get<std::uint64_t>();
      it->second.seeds.insert(seed);
      const auto metrics = request.metrics.value_or(default_plot_metrics(kind));
      auto& slot = it->second.values[epoch];
      for (const auto& metric : metrics) {
        if (!row.contains(metric)) continue;
        present.insert(metric);
        if (auto v = as_rate(row.at(metric))) slot[metric].push_back(*v);
      }
      if (auto prod = chain_product(row)) {
        slot["product"].push_back(*prod);
        const auto n = row.at("n").get<double>();
        const auto a = row.at("count_a").get<double>();
        const auto mid = row.at(middle_count_key(kind)).get<double>();
        const auto c = row.at("count_c").get<double>();
        std::ostringstream line;
        line.precision(17);
        line << label << "," << seed << "," << epoch << "," << a / n << ",";
        if (a > 0) line << mid / a;
        line << ",";
        if (mid > 0) line << c / mid;
        line << "," << *prod << "," << c / n << "\n";
        per_seed += line.str();
      }
      ++rows_used;
    }
  }
  if (rows_used == 0) {
    throw Error(ErrorCode::kMissingMetric, "no '" + request.split + "' metric rows found in the given run directories");
  }
  if (request.metrics) {
    for (const auto& m : *request.metrics) {
      if (!present.contains(m)) throw Error(ErrorCode::kMissingMetric, "metric '" + m + "' not found in run logs");
    }
  } else {
    for (const auto& [label, s] : series) {
      for (const auto& m : default_plot_metrics(s.kind)) {
        if (!present.contains(m)) throw Error(ErrorCode::kMissingMetric, "metric '" + m + "' not found in run logs");
      }
    }
  }

  std::ostringstream csv;
  csv.precision(17);
  csv << "series,epoch,metric,mean,sem,n\n";
  ojson guides;
  for (const auto& [label, s] : series) {
    for (const auto& [epoch, metrics] : s.values) {
      for (const auto& [metric, vals] : metrics) {
        csv << label << "," << epoch << "," << metric << "," << mean_of(vals) << "," << sem_of(vals) << ","
            << vals.size() << "\n";
      }
    }
    guides[label] = chance_guides(s.kind, s.k);
  }
  fs::create_directories(request.out_dir);
  write_file(request.out_dir / "plot_data.csv", csv.str());
  write_file(request.out_dir / "plot_data_per_seed.csv", per_seed);
  write_file(request.out_dir / "guides.json", guides.dump(2) + "\n");

  ojson out;
  out["out_dir"] = request.out_dir.string();
  out["logs"] = logs.size();
  out["rows"] = rows_used;
  ojson labels = ojson::array();
  for (const auto& [label, s] : series) labels.push_back({{"series", label}, {"seeds", s.seeds.size()}});
  out["series"] = labels;
  return out;
}

ojson cmd_validate(const fs::path& path, const std::optional<fs::path>& chemistries_path) {
  if (fs::is_directory(path)) {
    ojson out;
    out["path"] = path.string();
    bool passed = true;
    ojson parts = ojson::array();
    const fs::path chem = path / "chemistries.jsonl";
    parts.push_back(cmd_validate(chem));
    for (const auto& name : {"train.jsonl", "val.jsonl"}) {
      if (fs::exists(path / name)) parts.push_back(cmd_validate(path / name, chem));
    }
    std::int64_t total = 0;
    for (const auto& p : parts) {
      passed = passed && p["passed"].get<bool>();
      total += p["violation_count"].get<std::int64_t>();
    }
    out["kind"] = "dataset";
    out["passed"] = passed;
    out["violation_count"] = total;
    out["files"] = parts;
    return out;
  }

  const auto lines = read_lines(path);
  std::string kind;
  std::map<std::string, std::int64_t> counts;
  ojson details = ojson::array();
  std::int64_t records = 0;
  std::optional<std::vector<Chemistry>> chems;

  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(i + 1, path.string() + ": " + e.what());
    }
    if (kind.empty()) {
      if (j.is_object() && j.contains("stones")) kind = "chemistry";
      else if (j.is_object() && j.contains("support")) kind = "episode";
      else throw ParseError(i + 1, path.string() + ": neither a chemistry nor an episode record");
    }
    ++records;
    if (kind == "chemistry") {
      Chemistry c;
      try {
        c = chemistry_from_json_line(line);
      } catch (const Error& e) {
        throw ParseError(i + 1, path.string() + ": " + e.what());
      }
      for (const auto& v : validate_chemistry(c).violations) {
        ++counts[v.invariant];
        details.push_back({{"line", i + 1}, {"violation", v.invariant}, {"description", v.description}});
      }
    } else {
      EpisodeRecord r;
      try {
        r = episode_from_json_line(line);
      } catch (const Error& e) {
        throw ParseError(i + 1, path.string() + ": " + e.what());
      }
      if (!chems) {
        fs::path cp = chemistries_path.value_or(path.parent_path() / "chemistries.jsonl");
        chems = fs::exists(cp) ? load_chemistries(cp) : std::vector<Chemistry>{};
      }
      if (r.episode.chemistry_id < chems->size()) {
        const std::string problem = check_episode((*chems)[r.episode.chemistry_id], r.episode);
        if (!problem.empty()) {
          ++counts["episode-consistency"];
          details.push_back({{"line", i + 1}, {"violation", "episode-consistency"}, {"description", problem}});
        }
      } else {
        ++counts["missing-chemistry"];
        details.push_back({{"line", i + 1},
                           {"violation", "missing-chemistry"},
                           {"description", "chemistry " + std::to_string(r.episode.chemistry_id) + " not available"}});
      }
    }
  }
  std::int64_t total = 0;
  ojson by_name = ojson::object();
  for (const auto& [name, n] : counts) {
    by_name[name] = n;
    total += n;
  }
  ojson out;
  out["path"] = path.string();
  out["kind"] = kind.empty() ? "empty" : kind;
  out["records"] = records;
  out["passed"] = total == 0;
  out["violation_count"] = total;
  out["violations"] = by_name;
  out["details"] = details;
  return out;
}

}  // namespace alchemy
