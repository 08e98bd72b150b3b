#pragma once

// Stones, potions and the latent cubic chemistry graph.
//
// A chemistry places 8 stones on the vertices of a 3-cube. Vertex v is an
// integer in [0, 8); bit i of v is the coordinate on cube axis i. Each
// complementary potion pair is bound to one axis, and each colour of the pair
// writes a fixed bit value on that axis. A colour is applicable at v only when
// it would flip v's bit, so every vertex has exactly three outgoing edges.

#include <array>
#include <bit>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace alchemy {

inline constexpr int kNumAxes = 3;
inline constexpr int kNumVertices = 8;
inline constexpr int kNumPotionColors = 6;
inline constexpr int kNumStoneClasses = 108;
inline constexpr int kMaxRewardLevel = 3;

enum class PotionColor : std::uint8_t { kRed = 0, kGreen, kYellow, kOrange, kPink, kBlue };

inline constexpr std::array<PotionColor, kNumPotionColors> kAllPotionColors = {
    PotionColor::kRed,  PotionColor::kGreen, PotionColor::kYellow,
    PotionColor::kOrange, PotionColor::kPink, PotionColor::kBlue};

/// RED<->GREEN, YELLOW<->ORANGE, PINK<->BLUE.
constexpr PotionColor complement(PotionColor p) {
  return static_cast<PotionColor>(static_cast<int>(p) ^ 1);
}

/// Index of the complementary pair: 0 = red/green, 1 = yellow/orange, 2 = pink/blue.
constexpr int pair_of(PotionColor p) { return static_cast<int>(p) / 2; }

std::string_view potion_name(PotionColor p);
std::optional<PotionColor> potion_from_name(std::string_view name);

/// Reward values for reward levels 0..3.
inline constexpr std::array<int, 4> kRewardValues = {-3, -1, 1, 15};

struct Stone {
  std::uint8_t color = 0;         // pink, violet, blue
  std::uint8_t size = 0;          // small, medium, large
  std::uint8_t roundness = 0;     // pointy, medium_round, round
  std::uint8_t reward_level = 0;  // -3, -1, +1, +15

  int reward() const { return kRewardValues.at(reward_level); }
  bool valid() const { return color < 3 && size < 3 && roundness < 3 && reward_level < 4; }

  friend bool operator==(const Stone&, const Stone&) = default;
  friend auto operator<=>(const Stone&, const Stone&) = default;
};

/// Class index in [0, 108): ((color*3 + size)*3 + roundness)*4 + reward_level.
/// Throws Error(kInvalidArgument) for an out-of-range field.
int stone_index(const Stone& s);
/// Inverse of stone_index. Throws Error(kInvalidArgument) outside [0, 108).
Stone stone_from_index(int index);

using Vertex = std::uint8_t;
using Percept = std::array<int, 3>;

constexpr int hamming_distance(Vertex a, Vertex b) { return std::popcount(static_cast<unsigned>(a ^ b)); }
constexpr int axis_bit(Vertex v, int axis) { return (v >> axis) & 1; }

/// A subset of the 8 cube vertices.
class VertexSet {
 public:
  constexpr VertexSet() = default;
  constexpr explicit VertexSet(std::uint8_t mask) : mask_(mask) {}

  constexpr void insert(Vertex v) { mask_ = static_cast<std::uint8_t>(mask_ | (1u << v)); }
  constexpr bool contains(Vertex v) const { return v < kNumVertices && ((mask_ >> v) & 1u) != 0; }
  constexpr int size() const { return std::popcount(static_cast<unsigned>(mask_)); }
  constexpr bool empty() const { return mask_ == 0; }
  constexpr std::uint8_t mask() const { return mask_; }

  constexpr VertexSet operator|(VertexSet o) const { return VertexSet(mask_ | o.mask_); }
  constexpr VertexSet operator&(VertexSet o) const { return VertexSet(mask_ & o.mask_); }
  constexpr VertexSet complement() const { return VertexSet(static_cast<std::uint8_t>(~mask_)); }

  std::vector<Vertex> to_vector() const;

  friend constexpr bool operator==(VertexSet, VertexSet) = default;

 private:
  std::uint8_t mask_ = 0;
};

struct Chemistry {
  std::uint64_t seed = 0;
  /// Pair index -> cube axis; a permutation of {0, 1, 2}.
  std::array<int, 3> axis_of_pair{0, 1, 2};
  /// Bit written on its axis by each colour, indexed by PotionColor.
  std::array<std::uint8_t, kNumPotionColors> direction_of_color{};
  /// Vertex holding the +15 stone.
  Vertex best_vertex = 0;
  /// Perceptual triple (color, size, roundness) of vertex 0.
  Percept base_percept{};
  /// Perceptual delta added when an axis bit is 1.
  std::array<Percept, 3> axis_delta{};
  /// Stone at each vertex in canonical vertex order.
  std::array<Stone, kNumVertices> stones{};

  int axis_of(PotionColor p) const { return axis_of_pair[pair_of(p)]; }
  const Stone& stone(Vertex v) const { return stones.at(v); }
  /// Vertex holding the given stone, if it belongs to this chemistry.
  std::optional<Vertex> vertex_of(const Stone& s) const;
  std::optional<Vertex> vertex_of_class(int class_index) const;

  friend bool operator==(const Chemistry&, const Chemistry&) = default;
};

/// Perceptual triple implied by base_percept and axis_delta.
Percept percept_of(const Chemistry& chem, Vertex v);

/// Rejection-sampling cap for generate_chemistry.
inline constexpr int kGenerationAttemptCap = 10000;

/// Pure function of `seed`. Throws Error(kGenerationExhausted) past the attempt cap.
Chemistry generate_chemistry(std::uint64_t seed, int attempt_cap = kGenerationAttemptCap);

/// Allowed per-axis perceptual deltas: one feature by +-1 or +-2, or two
/// distinct features by +-1 each.
const std::vector<Percept>& allowed_axis_deltas();

bool is_applicable(const Chemistry& chem, Vertex v, PotionColor p);
/// Throws NotApplicableError if `p` is not applicable at `v`.
Vertex apply_potion(const Chemistry& chem, Vertex v, PotionColor p);
/// Left fold of apply_potion; NotApplicableError::step() names the failing index.
Vertex apply_sequence(const Chemistry& chem, Vertex v, std::span<const PotionColor> potions);

/// One colour per axis, ordered by axis.
std::array<PotionColor, 3> applicable_potions(const Chemistry& chem, Vertex v);

VertexSet neighbors(Vertex v);
/// Vertices other than v reachable by exactly k hops (k >= 1).
VertexSet reachable_set(Vertex v, int k);

struct HalfPartition {
  VertexSet face_zero;  // bit on axis == 0
  VertexSet face_one;   // bit on axis == 1
};
HalfPartition half_partition(int axis);
/// The face (for `axis`) that contains `v`.
VertexSet face_containing(Vertex v, int axis);

/// Vertices whose reward level differs from v's by exactly one step.
VertexSet reward_adjacent_set(const Chemistry& chem, Vertex v);
/// neighbors(v) restricted to v's own face of `withheld_axis`; always size 2.
VertexSet same_half_adjacent_in_support(Vertex v, int withheld_axis);

struct Violation {
  std::string invariant;
  std::string description;
};

struct ValidationReport {
  bool passed = true;
  std::vector<Violation> violations;

  bool has(std::string_view invariant) const;
};

ValidationReport validate_chemistry(const Chemistry& chem);

/// One JSON object per line; see docs/formats.md.
std::string chemistry_to_json_line(const Chemistry& chem);
/// Throws Error(kParse) on malformed input. Does not validate invariants.
Chemistry chemistry_from_json_line(std::string_view line);

}  // namespace alchemy
