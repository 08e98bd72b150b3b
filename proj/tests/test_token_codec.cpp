#include <doctest.h>

#include <set>

#include "alchemy/error.hpp"
#include "alchemy/token_codec.hpp"

using namespace alchemy;

TEST_CASE("vocabulary") {
  const auto& v = vocab_spec();
  CHECK(v.size() == 23);
  std::set<std::string_view> names;
  for (TokenId i = 0; i < 23; ++i) {
    names.insert(v.name(i));
    CHECK(v.id(v.name(i)) == i);
  }
  CHECK(names.size() == 23);
  CHECK(v.name(tok::kPad) == "PAD");
  CHECK(v.name(tok::kQuery) == "QUERY");
  CHECK(Vocabulary::complement_token(Vocabulary::potion_token(PotionColor::kRed)) ==
        Vocabulary::potion_token(PotionColor::kGreen));
  CHECK_FALSE(Vocabulary::complement_token(tok::kSep).has_value());
  CHECK_THROWS_AS(v.name(23), Error);
  CHECK(v.to_text().rfind("0\t", 0) == 0);
}

TEST_CASE("withheld-pair layout and length") {
  const Chemistry c = generate_chemistry(4);
  const Episode e = build_withheld_pair_episodes(c, 0, 2)[0];
  CHECK(encoded_length(e) == 16 * 11 + 7);
  const auto enc = encode_episode(e, 192);
  CHECK(enc.tokens.size() == 192);
  CHECK(enc.length == 183);
  CHECK(enc.first_content() == 9);
  for (int i = 0; i < 9; ++i) CHECK(enc.tokens[static_cast<std::size_t>(i)] == tok::kPad);
  CHECK(enc.tokens.back() == tok::kArrow);
  CHECK(enc.label == stone_index(e.target));

  const auto& t = e.support[0];
  const std::vector<TokenId> first(enc.tokens.begin() + 9, enc.tokens.begin() + 20);
  const std::vector<TokenId> expected{tok::kColorBase + t.start.color,
                                      tok::kSizeBase + t.start.size,
                                      tok::kRoundnessBase + t.start.roundness,
                                      tok::kRewardBase + t.start.reward_level,
                                      Vocabulary::potion_token(t.potions[0]),
                                      tok::kArrow,
                                      tok::kColorBase + t.end.color,
                                      tok::kSizeBase + t.end.size,
                                      tok::kRoundnessBase + t.end.roundness,
                                      tok::kRewardBase + t.end.reward_level,
                                      tok::kSep};
  CHECK(first == expected);
  const std::size_t q = 192 - 7;
  CHECK(enc.tokens[q] == tok::kQuery);
  CHECK(enc.tokens[q + 5] == Vocabulary::potion_token(e.query_potions[0]));
}

TEST_CASE("composition and decomposition lengths") {
  const Chemistry c = generate_chemistry(4);
  CHECK(encoded_length(build_composition_episode(c, 0, 3, 1)) == 273);
  CHECK(encoded_length(build_composition_episode(c, 0, 5, 1)) == 24 * 11 + 11);
  const Episode d = build_decomposition_episode(c, 0, 5, SupportMode::kNoBacktrack, 96, 1);
  CHECK(encoded_length(d) == 96 * 15 + 7);
  CHECK(encoded_length(d) <= default_max_seq_len(TaskKind::kDecomposition));
  for (int k = 2; k <= 5; ++k) {
    CHECK(encoded_length(build_composition_episode(c, 0, k, 2)) <= default_max_seq_len(TaskKind::kComposition));
  }
}

TEST_CASE("over-long episodes are rejected") {
  const Chemistry c = generate_chemistry(4);
  const Episode e = build_withheld_pair_episodes(c, 0, 2)[0];
  try {
    encode_episode(e, 100);
    FAIL("expected kEpisodeTooLong");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::kEpisodeTooLong);
  }
}

TEST_CASE("decode_prediction inverts the label") {
  for (int i = 0; i < 108; ++i) CHECK(stone_index(decode_prediction(i)) == i);
}
