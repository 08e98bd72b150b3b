#include "alchemy/task_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "alchemy/error.hpp"
#include "alchemy/random.hpp"

namespace alchemy {

namespace {

Transition make_transition(const Chemistry& chem, Vertex start, std::vector<PotionColor> potions) {
  const Vertex end = apply_sequence(chem, start, potions);
  return Transition{chem.stone(start), std::move(potions), chem.stone(end)};
}

void extend_sequences(const Chemistry& chem, Vertex start, Vertex at, int remaining, SupportMode mode,
                      std::vector<PotionColor>& prefix, std::vector<Transition>& out) {
  if (remaining == 0) {
    out.push_back(Transition{chem.stone(start), prefix, chem.stone(at)});
    return;
  }
  for (PotionColor p : applicable_potions(chem, at)) {
    if (mode == SupportMode::kNoBacktrack && !prefix.empty() && prefix.back() == complement(p)) continue;
    prefix.push_back(p);
    extend_sequences(chem, start, apply_potion(chem, at, p), remaining - 1, mode, prefix, out);
    prefix.pop_back();
  }
}

void check_k(int k) {
  if (k < 2 || k > 5) throw Error(ErrorCode::kInvalidArgument, "hop length must be in 2..5, got " + std::to_string(k));
}

nlohmann::json stone_json(const Stone& s) { return {s.color, s.size, s.roundness, s.reward_level}; }

Stone stone_from_json(const nlohmann::json& j) {
  auto f = j.get<std::array<int, 4>>();
  Stone s{static_cast<std::uint8_t>(f[0]), static_cast<std::uint8_t>(f[1]), static_cast<std::uint8_t>(f[2]),
          static_cast<std::uint8_t>(f[3])};
  for (int x : f) {
    if (x < 0 || x > 255) throw Error(ErrorCode::kParse, "stone field out of range");
  }
  if (!s.valid()) throw Error(ErrorCode::kParse, "stone field out of range");
  return s;
}

nlohmann::json potions_json(const std::vector<PotionColor>& ps) {
  auto a = nlohmann::json::array();
  for (auto p : ps) a.push_back(std::string(potion_name(p)));
  return a;
}

std::vector<PotionColor> potions_from_json(const nlohmann::json& j) {
  std::vector<PotionColor> out;
  for (const auto& x : j) {
    auto p = potion_from_name(x.get<std::string>());
    if (!p) throw Error(ErrorCode::kParse, "unknown potion " + x.get<std::string>());
    out.push_back(*p);
  }
  return out;
}

}  // namespace

std::string_view task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::kWithheldPair:
      return "withheld_pair";
    case TaskKind::kComposition:
      return "composition";
    case TaskKind::kDecomposition:
      return "decomposition";
  }
  return "unknown";
}

TaskKind task_kind_from_name(std::string_view name) {
  for (auto k : {TaskKind::kWithheldPair, TaskKind::kComposition, TaskKind::kDecomposition}) {
    if (task_kind_name(k) == name) return k;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown task kind '" + std::string(name) + "'");
}

int Episode::k() const {
  switch (task_kind) {
    case TaskKind::kComposition:
      return hl_query;
    case TaskKind::kDecomposition:
      return hl_support;
    case TaskKind::kWithheldPair:
      break;
  }
  return 1;
}

std::string_view support_mode_name(SupportMode m) {
  return m == SupportMode::kExhaustive ? "exhaustive" : "no_backtrack";
}

SupportMode support_mode_from_name(std::string_view name) {
  if (name == "exhaustive") return SupportMode::kExhaustive;
  if (name == "no_backtrack") return SupportMode::kNoBacktrack;
  throw Error(ErrorCode::kInvalidArgument, "unknown support mode '" + std::string(name) + "'");
}

SplitSpec split_chemistries(const std::vector<std::uint32_t>& pool, double ratio, std::uint64_t seed) {
  if (pool.empty()) throw Error(ErrorCode::kEmptyPool, "cannot split an empty chemistry pool");
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error(ErrorCode::kInvalidArgument, "split ratio must be in (0, 1)");
  std::vector<std::uint32_t> ids = pool;
  Rng rng(derive_seed(seed, {0x5917}));
  rng.shuffle(std::span<std::uint32_t>(ids));
  const auto n = static_cast<long long>(ids.size());
  long long n_train = std::llround(ratio * static_cast<double>(n));
  if (n >= 2) n_train = std::clamp<long long>(n_train, 1, n - 1);
  else n_train = n;
  SplitSpec s;
  s.ratio = ratio;
  s.train_chemistries.assign(ids.begin(), ids.begin() + n_train);
  s.val_chemistries.assign(ids.begin() + n_train, ids.end());
  std::sort(s.train_chemistries.begin(), s.train_chemistries.end());
  std::sort(s.val_chemistries.begin(), s.val_chemistries.end());
  return s;
}

std::vector<Transition> one_hop_transitions(const Chemistry& chem) {
  std::vector<Transition> out;
  out.reserve(kNumVertices * kNumAxes);
  for (Vertex v = 0; v < kNumVertices; ++v) {
    for (PotionColor p : applicable_potions(chem, v)) out.push_back(make_transition(chem, v, {p}));
  }
  return out;
}

std::vector<Transition> enumerate_khop_transitions(const Chemistry& chem, int k, SupportMode mode) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "hop length must be >= 1");
  std::vector<Transition> out;
  std::vector<PotionColor> prefix;
  for (Vertex v = 0; v < kNumVertices; ++v) extend_sequences(chem, v, v, k, mode, prefix, out);
  return out;
}

std::vector<Episode> build_withheld_pair_episodes(const Chemistry& chem, std::uint32_t chemistry_id,
                                                  std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x3171}));
  const int withheld_pair = static_cast<int>(rng.uniform(3));
  const int withheld_axis = chem.axis_of_pair[withheld_pair];

  std::vector<Transition> support;
  for (auto& t : one_hop_transitions(chem)) {
    if (pair_of(t.potions.front()) != withheld_pair) support.push_back(std::move(t));
  }

  std::vector<Episode> out;
  for (Vertex v = 0; v < kNumVertices; ++v) {
    for (PotionColor p : {static_cast<PotionColor>(2 * withheld_pair), static_cast<PotionColor>(2 * withheld_pair + 1)}) {
      if (!is_applicable(chem, v, p)) continue;
      Episode e;
      e.chemistry_id = chemistry_id;
      e.task_kind = TaskKind::kWithheldPair;
      e.seed = derive_seed(seed, {out.size()});
      e.support = support;
      Rng shuffle_rng(e.seed);
      shuffle_rng.shuffle(std::span<Transition>(e.support));
      e.query_start = chem.stone(v);
      e.query_potions = {p};
      e.target = chem.stone(apply_potion(chem, v, p));
      e.hl_support = 1;
      e.hl_query = 1;
      e.withheld_axis = withheld_axis;
      out.push_back(std::move(e));
    }
  }
  return out;
}

Episode build_composition_episode(const Chemistry& chem, std::uint32_t chemistry_id, int k, std::uint64_t seed) {
  check_k(k);
  Rng rng(derive_seed(seed, {0xc0de}));
  Episode e;
  e.chemistry_id = chemistry_id;
  e.task_kind = TaskKind::kComposition;
  e.seed = seed;
  e.hl_support = 1;
  e.hl_query = k;
  e.support = one_hop_transitions(chem);
  rng.shuffle(std::span<Transition>(e.support));

  const auto start = static_cast<Vertex>(rng.uniform(kNumVertices));
  Vertex at = start;
  // Rejection keeps the draw uniform over non-backtracking sequences that end
  // away from the start.
  do {
    e.query_potions.clear();
    at = start;
    for (int step = 0; step < k; ++step) {
      std::vector<PotionColor> options;
      for (PotionColor p : applicable_potions(chem, at)) {
        if (!e.query_potions.empty() && e.query_potions.back() == complement(p)) continue;
        options.push_back(p);
      }
      const PotionColor p = options[rng.uniform(options.size())];
      e.query_potions.push_back(p);
      at = apply_potion(chem, at, p);
    }
  } while (at == start);

  e.query_start = chem.stone(start);
  e.target = chem.stone(at);
  return e;
}

Episode build_decomposition_episode(const Chemistry& chem, std::uint32_t chemistry_id, int k, SupportMode mode,
                                    int max_support, std::uint64_t seed) {
  check_k(k);
  if (max_support < 1) throw Error(ErrorCode::kInvalidArgument, "max_support must be positive");
  Rng rng(derive_seed(seed, {0xdec0}));
  Episode e;
  e.chemistry_id = chemistry_id;
  e.task_kind = TaskKind::kDecomposition;
  e.seed = seed;
  e.hl_support = k;
  e.hl_query = 1;
  e.support = enumerate_khop_transitions(chem, k, mode);
  rng.shuffle(std::span<Transition>(e.support));
  if (e.support.size() > static_cast<std::size_t>(max_support)) e.support.resize(static_cast<std::size_t>(max_support));

  const auto start = static_cast<Vertex>(rng.uniform(kNumVertices));
  const auto options = applicable_potions(chem, start);
  const PotionColor p = options[rng.uniform(options.size())];
  e.query_start = chem.stone(start);
  e.query_potions = {p};
  e.target = chem.stone(apply_potion(chem, start, p));
  return e;
}

std::string check_episode(const Chemistry& chem, const Episode& e) {
  auto start = chem.vertex_of(e.query_start);
  if (!start) return "query start stone is not in the chemistry";
  Vertex end;
  try {
    end = apply_sequence(chem, *start, e.query_potions);
  } catch (const NotApplicableError& err) {
    return std::string("query sequence: ") + err.what();
  }
  if (chem.stone(end) != e.target) return "target does not equal apply_sequence(query_start, query_potions)";
  if (static_cast<int>(e.query_potions.size()) != e.hl_query) return "query length differs from hl_query";

  for (std::size_t i = 0; i < e.support.size(); ++i) {
    const auto& t = e.support[i];
    auto s = chem.vertex_of(t.start);
    if (!s) return "support " + std::to_string(i) + ": start stone not in the chemistry";
    try {
      if (chem.stone(apply_sequence(chem, *s, t.potions)) != t.end) {
        return "support " + std::to_string(i) + ": end stone inconsistent";
      }
    } catch (const NotApplicableError& err) {
      return "support " + std::to_string(i) + ": " + err.what();
    }
    if (static_cast<int>(t.potions.size()) != e.hl_support) return "support " + std::to_string(i) + ": wrong hop length";
    if (t.start == e.query_start && t.potions == e.query_potions) return "query appears in the support set";
  }

  switch (e.task_kind) {
    case TaskKind::kWithheldPair: {
      if (!e.withheld_axis) return "withheld-pair episode without withheld_axis";
      for (const auto& t : e.support) {
        for (auto p : t.potions) {
          if (chem.axis_of(p) == *e.withheld_axis) return "support references a withheld colour";
        }
      }
      if (face_containing(*start, *e.withheld_axis).contains(end)) return "target does not cross the withheld axis";
      break;
    }
    case TaskKind::kComposition:
      if (!reachable_set(*start, e.hl_query).contains(end)) return "target not in the reachable set";
      break;
    case TaskKind::kDecomposition: {
      const int axis = chem.axis_of(e.query_potions.at(0));
      if (face_containing(*start, axis).contains(end)) return "target not across the query potion's axis";
      break;
    }
  }
  return {};
}

std::string episode_to_json_line(const Episode& e, std::string_view episode_id) {
  nlohmann::ordered_json j;
  j["id"] = episode_id;
  j["chemistry_id"] = e.chemistry_id;
  j["task_kind"] = task_kind_name(e.task_kind);
  j["k"] = e.k();
  j["hl_support"] = e.hl_support;
  j["hl_query"] = e.hl_query;
  j["withheld_axis"] = e.withheld_axis ? nlohmann::ordered_json(*e.withheld_axis) : nlohmann::ordered_json(nullptr);
  j["seed"] = e.seed;
  auto support = nlohmann::ordered_json::array();
  for (const auto& t : e.support) {
    nlohmann::ordered_json tj;
    tj["start"] = stone_json(t.start);
    tj["potions"] = potions_json(t.potions);
    tj["end"] = stone_json(t.end);
    support.push_back(std::move(tj));
  }
  j["support"] = std::move(support);
  nlohmann::ordered_json q;
  q["start"] = stone_json(e.query_start);
  q["potions"] = potions_json(e.query_potions);
  j["query"] = std::move(q);
  j["target"] = stone_json(e.target);
  j["target_class"] = stone_index(e.target);
  return j.dump();
}

EpisodeRecord episode_from_json_line(std::string_view line) {
  try {
    auto j = nlohmann::json::parse(line);
    EpisodeRecord r;
    r.id = j.at("id").get<std::string>();
    Episode& e = r.episode;
    e.chemistry_id = j.at("chemistry_id").get<std::uint32_t>();
    e.task_kind = task_kind_from_name(j.at("task_kind").get<std::string>());
    e.hl_support = j.at("hl_support").get<int>();
    e.hl_query = j.at("hl_query").get<int>();
    if (!j.at("withheld_axis").is_null()) e.withheld_axis = j.at("withheld_axis").get<int>();
    e.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& tj : j.at("support")) {
      e.support.push_back(
          Transition{stone_from_json(tj.at("start")), potions_from_json(tj.at("potions")), stone_from_json(tj.at("end"))});
    }
    e.query_start = stone_from_json(j.at("query").at("start"));
    e.query_potions = potions_from_json(j.at("query").at("potions"));
    e.target = stone_from_json(j.at("target"));
    if (j.at("target_class").get<int>() != stone_index(e.target)) {
      throw Error(ErrorCode::kParse, "target_class does not match target");
    }
    return r;
  } catch (const nlohmann::json::exception& err) {
    throw Error(ErrorCode::kParse, std::string("malformed episode record: ") + err.what());
  } catch (const Error& err) {
    if (err.code() == ErrorCode::kParse) throw;
    throw Error(ErrorCode::kParse, err.what());
  }
}

}  // namespace alchemy
