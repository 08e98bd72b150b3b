#pragma once

// Per-feature tokenisation of episodes.
//
// Support transition:  c s r w  p...  ARROW  c s r w  SEP
// Query:               QUERY  c s r w  p...  ARROW
//
// Sequences are left-padded with PAD so the query's ARROW is always the final
// position; the model reads its prediction off that position.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "alchemy/chemistry.hpp"
#include "alchemy/task_sampler.hpp"

namespace alchemy {

using TokenId = std::int32_t;

namespace tok {
inline constexpr TokenId kColorBase = 0;      // 3 tokens
inline constexpr TokenId kSizeBase = 3;       // 3 tokens
inline constexpr TokenId kRoundnessBase = 6;  // 3 tokens
inline constexpr TokenId kRewardBase = 9;     // 4 tokens
inline constexpr TokenId kPotionBase = 13;    // 6 tokens
inline constexpr TokenId kSep = 19;
inline constexpr TokenId kArrow = 20;
inline constexpr TokenId kQuery = 21;
inline constexpr TokenId kPad = 22;
}  // namespace tok

inline constexpr int kVocabSize = 23;

class Vocabulary {
 public:
  int size() const { return kVocabSize; }
  std::string_view name(TokenId id) const;
  std::optional<TokenId> id(std::string_view name) const;

  static TokenId potion_token(PotionColor p) { return tok::kPotionBase + static_cast<TokenId>(p); }
  static bool is_potion(TokenId id) { return id >= tok::kPotionBase && id < tok::kPotionBase + kNumPotionColors; }
  /// Complementary potion token; nullopt for non-potion tokens.
  static std::optional<TokenId> complement_token(TokenId id);

  /// "id<TAB>name" per line.
  std::string to_text() const;
};

const Vocabulary& vocab_spec();

struct EncodedEpisode {
  std::vector<TokenId> tokens;  // exactly max_seq_len, left-padded
  int label = 0;                // stone_index(target)
  int length = 0;               // content tokens (excluding PAD)

  int first_content() const { return static_cast<int>(tokens.size()) - length; }
};

/// Number of content tokens the layout produces for `e`.
int encoded_length(const Episode& e);

/// Throws Error(kEpisodeTooLong) if the content exceeds max_seq_len.
EncodedEpisode encode_episode(const Episode& e, int max_seq_len);

/// Inverse of stone_index; throws Error(kInvalidArgument) out of range.
Stone decode_prediction(int class_index);

/// Default max_seq_len per task kind (192 / 288 / 2048).
int default_max_seq_len(TaskKind kind);

}  // namespace alchemy
