#include "alchemy/token_codec.hpp"

#include "alchemy/error.hpp"

namespace alchemy {

namespace {

constexpr std::array<std::string_view, kVocabSize> kNames = {
    "COLOR_PINK",   "COLOR_VIOLET",       "COLOR_BLUE",      "SIZE_SMALL",   "SIZE_MEDIUM", "SIZE_LARGE",
    "ROUND_POINTY", "ROUND_MEDIUM_ROUND", "ROUND_ROUND",     "REWARD_NEG3",  "REWARD_NEG1", "REWARD_POS1",
    "REWARD_POS15", "POTION_RED",         "POTION_GREEN",    "POTION_YELLOW", "POTION_ORANGE", "POTION_PINK",
    "POTION_BLUE",  "SEP",                "ARROW",           "QUERY",        "PAD"};

void push_stone(std::vector<TokenId>& out, const Stone& s) {
  out.push_back(tok::kColorBase + s.color);
  out.push_back(tok::kSizeBase + s.size);
  out.push_back(tok::kRoundnessBase + s.roundness);
  out.push_back(tok::kRewardBase + s.reward_level);
}

}  // namespace

std::string_view Vocabulary::name(TokenId id) const {
  if (id < 0 || id >= kVocabSize) throw Error(ErrorCode::kInvalidArgument, "token id out of range");
  return kNames[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::id(std::string_view name) const {
  for (TokenId i = 0; i < kVocabSize; ++i) {
    if (kNames[static_cast<std::size_t>(i)] == name) return i;
  }
  return std::nullopt;
}

std::optional<TokenId> Vocabulary::complement_token(TokenId id) {
  if (!is_potion(id)) return std::nullopt;
  return potion_token(complement(static_cast<PotionColor>(id - tok::kPotionBase)));
}

std::string Vocabulary::to_text() const {
  std::string out;
  for (TokenId i = 0; i < kVocabSize; ++i) {
    out += std::to_string(i);
    out += '\t';
    out += kNames[static_cast<std::size_t>(i)];
    out += '\n';
  }
  return out;
}

const Vocabulary& vocab_spec() {
  static const Vocabulary v;
  return v;
}

int encoded_length(const Episode& e) {
  int n = 0;
  for (const auto& t : e.support) n += 4 + static_cast<int>(t.potions.size()) + 1 + 4 + 1;
  n += 1 + 4 + static_cast<int>(e.query_potions.size()) + 1;
  return n;
}

EncodedEpisode encode_episode(const Episode& e, int max_seq_len) {
  const int length = encoded_length(e);
  if (length > max_seq_len) {
    throw Error(ErrorCode::kEpisodeTooLong, "episode needs " + std::to_string(length) + " tokens, max_seq_len is " +
                                                std::to_string(max_seq_len));
  }
  EncodedEpisode out;
  out.tokens.reserve(static_cast<std::size_t>(max_seq_len));
  out.tokens.assign(static_cast<std::size_t>(max_seq_len - length), tok::kPad);
  for (const auto& t : e.support) {
    push_stone(out.tokens, t.start);
    for (auto p : t.potions) out.tokens.push_back(Vocabulary::potion_token(p));
    out.tokens.push_back(tok::kArrow);
    push_stone(out.tokens, t.end);
    out.tokens.push_back(tok::kSep);
  }
  out.tokens.push_back(tok::kQuery);
  push_stone(out.tokens, e.query_start);
  for (auto p : e.query_potions) out.tokens.push_back(Vocabulary::potion_token(p));
  out.tokens.push_back(tok::kArrow);
  out.label = stone_index(e.target);
  out.length = length;
  return out;
}

Stone decode_prediction(int class_index) { return stone_from_index(class_index); }

int default_max_seq_len(TaskKind kind) {
  switch (kind) {
    case TaskKind::kWithheldPair:
      return 192;
    case TaskKind::kComposition:
      return 288;
    case TaskKind::kDecomposition:
      return 2048;
  }
  return 2048;
}

}  // namespace alchemy
