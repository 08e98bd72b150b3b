#include "alchemy/chemistry.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <json.hpp>

#include "alchemy/error.hpp"
#include "alchemy/random.hpp"

namespace alchemy {

namespace {

constexpr std::array<std::string_view, kNumPotionColors> kPotionNames = {"RED",    "GREEN", "YELLOW",
                                                                         "ORANGE", "PINK",  "BLUE"};

std::vector<Percept> make_allowed_deltas() {
  std::vector<Percept> out;
  for (int f = 0; f < 3; ++f) {
    for (int mag : {1, 2}) {
      for (int sign : {1, -1}) {
        Percept d{};
        d[f] = sign * mag;
        out.push_back(d);
      }
    }
  }
  for (int f = 0; f < 3; ++f) {
    for (int g = f + 1; g < 3; ++g) {
      for (int sf : {1, -1}) {
        for (int sg : {1, -1}) {
          Percept d{};
          d[f] = sf;
          d[g] = sg;
          out.push_back(d);
        }
      }
    }
  }
  return out;
}

bool percepts_valid(const Percept& base, const std::array<Percept, 3>& deltas) {
  std::array<int, kNumVertices> codes{};
  for (int v = 0; v < kNumVertices; ++v) {
    int code = 0;
    for (int f = 0; f < 3; ++f) {
      int x = base[f];
      for (int a = 0; a < kNumAxes; ++a) x += axis_bit(static_cast<Vertex>(v), a) * deltas[a][f];
      if (x < 0 || x > 2) return false;
      code = code * 3 + x;
    }
    codes[v] = code;
  }
  std::sort(codes.begin(), codes.end());
  return std::adjacent_find(codes.begin(), codes.end()) == codes.end();
}

}  // namespace

std::string_view potion_name(PotionColor p) { return kPotionNames.at(static_cast<int>(p)); }

std::optional<PotionColor> potion_from_name(std::string_view name) {
  for (int i = 0; i < kNumPotionColors; ++i) {
    if (kPotionNames[i] == name) return static_cast<PotionColor>(i);
  }
  return std::nullopt;
}

int stone_index(const Stone& s) {
  if (!s.valid()) throw Error(ErrorCode::kInvalidArgument, "stone field out of range");
  return ((s.color * 3 + s.size) * 3 + s.roundness) * 4 + s.reward_level;
}

Stone stone_from_index(int index) {
  if (index < 0 || index >= kNumStoneClasses) {
    throw Error(ErrorCode::kInvalidArgument, "stone class index out of range: " + std::to_string(index));
  }
  Stone s;
  s.reward_level = static_cast<std::uint8_t>(index % 4);
  index /= 4;
  s.roundness = static_cast<std::uint8_t>(index % 3);
  index /= 3;
  s.size = static_cast<std::uint8_t>(index % 3);
  s.color = static_cast<std::uint8_t>(index / 3);
  return s;
}

std::vector<Vertex> VertexSet::to_vector() const {
  std::vector<Vertex> out;
  for (Vertex v = 0; v < kNumVertices; ++v) {
    if (contains(v)) out.push_back(v);
  }
  return out;
}

std::optional<Vertex> Chemistry::vertex_of(const Stone& s) const {
  for (Vertex v = 0; v < kNumVertices; ++v) {
    if (stones[v] == s) return v;
  }
  return std::nullopt;
}

std::optional<Vertex> Chemistry::vertex_of_class(int class_index) const {
  if (class_index < 0 || class_index >= kNumStoneClasses) return std::nullopt;
  return vertex_of(stone_from_index(class_index));
}

Percept percept_of(const Chemistry& chem, Vertex v) {
  Percept p = chem.base_percept;
  for (int a = 0; a < kNumAxes; ++a) {
    if (axis_bit(v, a)) {
      for (int f = 0; f < 3; ++f) p[f] += chem.axis_delta[a][f];
    }
  }
  return p;
}

const std::vector<Percept>& allowed_axis_deltas() {
  static const std::vector<Percept> deltas = make_allowed_deltas();
  return deltas;
}

Chemistry generate_chemistry(std::uint64_t seed, int attempt_cap) {
  Rng rng(derive_seed(seed, {0xc4e3}));
  Chemistry chem;
  chem.seed = seed;
  chem.best_vertex = static_cast<Vertex>(rng.uniform(kNumVertices));

  std::array<int, 3> perm{0, 1, 2};
  rng.shuffle(std::span<int>(perm));
  chem.axis_of_pair = perm;

  for (int pair = 0; pair < 3; ++pair) {
    auto bit = static_cast<std::uint8_t>(rng.uniform(2));
    chem.direction_of_color[2 * pair] = bit;
    chem.direction_of_color[2 * pair + 1] = static_cast<std::uint8_t>(bit ^ 1u);
  }

  const auto& deltas = allowed_axis_deltas();
  bool found = false;
  for (int attempt = 0; attempt < attempt_cap; ++attempt) {
    Percept base{};
    for (auto& x : base) x = static_cast<int>(rng.uniform(3));
    std::array<Percept, 3> axis_delta{};
    for (auto& d : axis_delta) d = deltas[rng.uniform(deltas.size())];
    if (percepts_valid(base, axis_delta)) {
      chem.base_percept = base;
      chem.axis_delta = axis_delta;
      found = true;
      break;
    }
  }
  if (!found) {
    throw Error(ErrorCode::kGenerationExhausted,
                "chemistry generation exceeded " + std::to_string(attempt_cap) + " attempts");
  }

  for (Vertex v = 0; v < kNumVertices; ++v) {
    Percept p = percept_of(chem, v);
    Stone& s = chem.stones[v];
    s.color = static_cast<std::uint8_t>(p[0]);
    s.size = static_cast<std::uint8_t>(p[1]);
    s.roundness = static_cast<std::uint8_t>(p[2]);
    s.reward_level = static_cast<std::uint8_t>(kMaxRewardLevel - hamming_distance(v, chem.best_vertex));
  }
  return chem;
}

bool is_applicable(const Chemistry& chem, Vertex v, PotionColor p) {
  return axis_bit(v, chem.axis_of(p)) != chem.direction_of_color[static_cast<int>(p)];
}

Vertex apply_potion(const Chemistry& chem, Vertex v, PotionColor p) {
  if (v >= kNumVertices) throw Error(ErrorCode::kInvalidArgument, "vertex out of range");
  if (!is_applicable(chem, v, p)) {
    throw NotApplicableError(0, std::string(potion_name(p)) + " is not applicable at vertex " + std::to_string(v));
  }
  return static_cast<Vertex>(v ^ (1u << chem.axis_of(p)));
}

Vertex apply_sequence(const Chemistry& chem, Vertex v, std::span<const PotionColor> potions) {
  for (std::size_t i = 0; i < potions.size(); ++i) {
    if (!is_applicable(chem, v, potions[i])) {
      throw NotApplicableError(static_cast<int>(i), "step " + std::to_string(i) + ": " +
                                                        std::string(potion_name(potions[i])) +
                                                        " is not applicable at vertex " + std::to_string(v));
    }
    v = static_cast<Vertex>(v ^ (1u << chem.axis_of(potions[i])));
  }
  return v;
}

std::array<PotionColor, 3> applicable_potions(const Chemistry& chem, Vertex v) {
  std::array<PotionColor, 3> out{};
  for (int pair = 0; pair < 3; ++pair) {
    const auto first = static_cast<PotionColor>(2 * pair);
    const int axis = chem.axis_of_pair[pair];
    out[axis] = is_applicable(chem, v, first) ? first : complement(first);
  }
  return out;
}

VertexSet neighbors(Vertex v) {
  VertexSet s;
  for (int a = 0; a < kNumAxes; ++a) s.insert(static_cast<Vertex>(v ^ (1u << a)));
  return s;
}

VertexSet reachable_set(Vertex v, int k) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "hop count must be >= 1");
  VertexSet s;
  for (Vertex u = 0; u < kNumVertices; ++u) {
    const int d = hamming_distance(u, v);
    if (u != v && d <= k && (d % 2) == (k % 2)) s.insert(u);
  }
  return s;
}

HalfPartition half_partition(int axis) {
  if (axis < 0 || axis >= kNumAxes) throw Error(ErrorCode::kInvalidArgument, "axis out of range");
  HalfPartition h;
  for (Vertex v = 0; v < kNumVertices; ++v) {
    if (axis_bit(v, axis)) {
      h.face_one.insert(v);
    } else {
      h.face_zero.insert(v);
    }
  }
  return h;
}

VertexSet face_containing(Vertex v, int axis) {
  auto h = half_partition(axis);
  return axis_bit(v, axis) ? h.face_one : h.face_zero;
}

VertexSet reward_adjacent_set(const Chemistry& chem, Vertex v) {
  VertexSet s;
  const int level = chem.stones.at(v).reward_level;
  for (Vertex u = 0; u < kNumVertices; ++u) {
    if (std::abs(chem.stones[u].reward_level - level) == 1) s.insert(u);
  }
  return s;
}

VertexSet same_half_adjacent_in_support(Vertex v, int withheld_axis) {
  return neighbors(v) & face_containing(v, withheld_axis);
}

bool ValidationReport::has(std::string_view invariant) const {
  return std::any_of(violations.begin(), violations.end(),
                     [&](const Violation& x) { return x.invariant == invariant; });
}

ValidationReport validate_chemistry(const Chemistry& chem) {
  ValidationReport r;
  auto fail = [&](std::string name, std::string what) {
    r.violations.push_back({std::move(name), std::move(what)});
  };

  for (Vertex v = 0; v < kNumVertices; ++v) {
    if (!chem.stones[v].valid()) fail("field-range", "stone at vertex " + std::to_string(v) + " has a field out of range");
  }

  {
    std::array<int, 3> sorted = chem.axis_of_pair;
    std::sort(sorted.begin(), sorted.end());
    if (sorted != std::array<int, 3>{0, 1, 2}) fail("axis-bijection", "axis_of_pair is not a permutation of {0,1,2}");
  }
  for (int pair = 0; pair < 3; ++pair) {
    const auto a = chem.direction_of_color[2 * pair];
    const auto b = chem.direction_of_color[2 * pair + 1];
    if (a > 1 || b > 1 || a == b) {
      fail("direction-complement", "colours of pair " + std::to_string(pair) + " do not write opposite bits");
    }
  }
  if (chem.best_vertex >= kNumVertices) fail("best-vertex", "best_vertex out of range");

  const bool structure_ok = r.violations.empty();

  // Perceptual model.
  std::set<Percept> seen;
  for (Vertex v = 0; v < kNumVertices; ++v) {
    const Percept p = percept_of(chem, v);
    for (int x : p) {
      if (x < 0 || x > 2) {
        fail("percept-bounds", "vertex " + std::to_string(v) + " percept leaves [0,2]");
        break;
      }
    }
    const Stone& s = chem.stones[v];
    if (p != Percept{s.color, s.size, s.roundness}) {
      fail("percept-model", "stone at vertex " + std::to_string(v) + " does not match base_percept + axis deltas");
    }
    seen.insert(Percept{s.color, s.size, s.roundness});
  }
  if (seen.size() != kNumVertices) fail("distinct-stones", "two vertices share a perceptual triple");

  for (int a = 0; a < kNumAxes; ++a) {
    if (std::find(allowed_axis_deltas().begin(), allowed_axis_deltas().end(), chem.axis_delta[a]) ==
        allowed_axis_deltas().end()) {
      fail("axis-delta", "axis " + std::to_string(a) + " delta is not in the allowed set");
    }
  }

  // Rewards.
  std::array<int, 4> counts{};
  for (const Stone& s : chem.stones) {
    if (s.reward_level < 4) ++counts[s.reward_level];
  }
  if (counts != std::array<int, 4>{1, 3, 3, 1}) {
    fail("reward-distribution", "reward multiset is not {+15:1, +1:3, -1:3, -3:1}");
  }
  if (chem.best_vertex < kNumVertices) {
    for (Vertex v = 0; v < kNumVertices; ++v) {
      if (chem.stones[v].reward_level != kMaxRewardLevel - hamming_distance(v, chem.best_vertex)) {
        fail("reward-model", "reward at vertex " + std::to_string(v) + " is not 3 - dist(v, best_vertex)");
        break;
      }
    }
  }

  // Edge structure.
  if (structure_ok) {
    for (Vertex v = 0; v < kNumVertices; ++v) {
      int applicable = 0;
      for (PotionColor p : kAllPotionColors) {
        if (!is_applicable(chem, v, p)) continue;
        ++applicable;
        const Vertex u = apply_potion(chem, v, p);
        if (!is_applicable(chem, u, complement(p)) || apply_potion(chem, u, complement(p)) != v) {
          fail("inverse-transition", "complement of " + std::string(potion_name(p)) + " does not invert it at vertex " +
                                         std::to_string(v));
        }
        if (std::abs(chem.stones[u].reward_level - chem.stones[v].reward_level) != 1) {
          fail("reward-step", std::string(potion_name(p)) + " at vertex " + std::to_string(v) +
                                  " does not change reward by one step");
        }
      }
      if (applicable != 3) fail("applicable-count", "vertex " + std::to_string(v) + " does not have 3 applicable potions");
    }
  }

  r.passed = r.violations.empty();
  return r;
}

std::string chemistry_to_json_line(const Chemistry& chem) {
  nlohmann::ordered_json j;
  j["seed"] = chem.seed;
  j["axis_of_pair"] = chem.axis_of_pair;
  nlohmann::ordered_json dirs;
  for (PotionColor p : kAllPotionColors) dirs[std::string(potion_name(p))] = chem.direction_of_color[static_cast<int>(p)];
  j["direction_of_color"] = dirs;
  j["best_vertex"] = chem.best_vertex;
  j["base_percept"] = chem.base_percept;
  j["axis_delta"] = chem.axis_delta;
  auto stones = nlohmann::ordered_json::array();
  for (const Stone& s : chem.stones) stones.push_back({s.color, s.size, s.roundness, s.reward_level});
  j["stones"] = stones;
  return j.dump();
}

Chemistry chemistry_from_json_line(std::string_view line) {
  try {
    auto j = nlohmann::json::parse(line);
    Chemistry c;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.axis_of_pair = j.at("axis_of_pair").get<std::array<int, 3>>();
    const auto& dirs = j.at("direction_of_color");
    if (dirs.size() != kNumPotionColors) throw Error(ErrorCode::kParse, "direction_of_color needs 6 entries");
    for (PotionColor p : kAllPotionColors) {
      c.direction_of_color[static_cast<int>(p)] = dirs.at(std::string(potion_name(p))).get<std::uint8_t>();
    }
    c.best_vertex = j.at("best_vertex").get<Vertex>();
    c.base_percept = j.at("base_percept").get<Percept>();
    c.axis_delta = j.at("axis_delta").get<std::array<Percept, 3>>();
    const auto& stones = j.at("stones");
    if (stones.size() != kNumVertices) throw Error(ErrorCode::kParse, "stones needs 8 entries");
    for (int v = 0; v < kNumVertices; ++v) {
      auto f = stones.at(v).get<std::array<int, 4>>();
      for (int x : f) {
        if (x < 0 || x > 255) throw Error(ErrorCode::kParse, "stone field out of byte range");
      }
      c.stones[v] = Stone{static_cast<std::uint8_t>(f[0]), static_cast<std::uint8_t>(f[1]),
                          static_cast<std::uint8_t>(f[2]), static_cast<std::uint8_t>(f[3])};
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("malformed chemistry record: ") + e.what());
  }
}

}  // namespace alchemy
