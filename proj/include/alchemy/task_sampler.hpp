#pragma once

// Episode construction for the three task kinds and train/validation splits
// over disjoint chemistries.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "alchemy/chemistry.hpp"

namespace alchemy {

enum class TaskKind : std::uint8_t { kWithheldPair = 0, kComposition, kDecomposition };

std::string_view task_kind_name(TaskKind k);
/// Throws Error(kInvalidArgument) for unknown names.
TaskKind task_kind_from_name(std::string_view name);

struct Transition {
  Stone start;
  std::vector<PotionColor> potions;
  Stone end;

  friend bool operator==(const Transition&, const Transition&) = default;
};

struct Episode {
  std::uint32_t chemistry_id = 0;
  TaskKind task_kind = TaskKind::kWithheldPair;
  std::vector<Transition> support;
  Stone query_start;
  std::vector<PotionColor> query_potions;
  Stone target;
  int hl_support = 1;
  int hl_query = 1;
  std::optional<int> withheld_axis;
  std::uint64_t seed = 0;

  /// Hop parameter of the task: hl_query for composition, hl_support for
  /// decomposition, 1 for withheld-pair.
  int k() const;

  friend bool operator==(const Episode&, const Episode&) = default;
};

enum class SupportMode : std::uint8_t { kExhaustive = 0, kNoBacktrack };

std::string_view support_mode_name(SupportMode m);
SupportMode support_mode_from_name(std::string_view name);

struct SplitSpec {
  std::vector<std::uint32_t> train_chemistries;
  std::vector<std::uint32_t> val_chemistries;
  double ratio = 0.9;
};

/// Seeded shuffle of `pool`, then the first round(ratio * n) ids go to train
/// (clamped so both sides are non-empty when n >= 2). Throws kEmptyPool or
/// kInvalidArgument.
SplitSpec split_chemistries(const std::vector<std::uint32_t>& pool, double ratio, std::uint64_t seed);

/// All 1-hop transitions of the chemistry (24), ordered by (vertex, axis).
std::vector<Transition> one_hop_transitions(const Chemistry& chem);

/// All applicable length-k sequences from every vertex. kNoBacktrack drops any
/// sequence in which a potion is immediately followed by its complement.
std::vector<Transition> enumerate_khop_transitions(const Chemistry& chem, int k, SupportMode mode);

/// Withholds one seeded potion pair; 16 support transitions, one episode for
/// each of the 8 (vertex, withheld colour) queries.
std::vector<Episode> build_withheld_pair_episodes(const Chemistry& chem, std::uint32_t chemistry_id,
                                                  std::uint64_t seed);

/// All 24 one-hop transitions as support; a k-hop query (k in 2..5) without
/// immediate backtracking whose endpoint differs from the start.
Episode build_composition_episode(const Chemistry& chem, std::uint32_t chemistry_id, int k, std::uint64_t seed);

inline constexpr int kDefaultMaxSupport = 96;

/// k-hop support (k in 2..5) from enumerate_khop_transitions, subsampled
/// without replacement to max_support when larger; a 1-hop query.
Episode build_decomposition_episode(const Chemistry& chem, std::uint32_t chemistry_id, int k, SupportMode mode,
                                    int max_support, std::uint64_t seed);

/// Checks target consistency, disjointness and the task-specific invariants.
/// Returns an empty string when the episode is consistent with `chem`.
std::string check_episode(const Chemistry& chem, const Episode& e);

std::string episode_to_json_line(const Episode& e, std::string_view episode_id);
struct EpisodeRecord {
  std::string id;
  Episode episode;
};
/// Throws Error(kParse).
EpisodeRecord episode_from_json_line(std::string_view line);

}  // namespace alchemy
