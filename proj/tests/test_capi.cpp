#include <doctest.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "alchemy/alchemy.h"

namespace fs = std::filesystem;

TEST_CASE("c api: version and status strings") {
  CHECK(std::string(alc_version()) == "0.1.0");
  CHECK(std::string(alc_status_string(ALC_OK)).size() > 0);
  CHECK(std::string(alc_status_string(ALC_PARSE_ERROR)) != alc_status_string(ALC_OK));
}

TEST_CASE("c api: chemistry handles") {
  alc_chemistry* chem = nullptr;
  REQUIRE(alc_chemistry_generate(7, &chem) == ALC_OK);
  int violations = -1;
  CHECK(alc_chemistry_validate(chem, &violations) == ALC_OK);
  CHECK(violations == 0);

  alc_stone s{};
  REQUIRE(alc_chemistry_stone(chem, 0, &s) == ALC_OK);
  int idx = -1;
  CHECK(alc_stone_index(s, &idx) == ALC_OK);
  alc_stone back{};
  CHECK(alc_stone_decode(idx, &back) == ALC_OK);
  CHECK(std::memcmp(&s, &back, sizeof(s)) == 0);
  CHECK(alc_stone_decode(108, &back) == ALC_INVALID_ARGUMENT);
  CHECK(std::string(alc_last_error()).size() > 0);
  CHECK(alc_chemistry_stone(chem, 8, &s) == ALC_INVALID_ARGUMENT);

  char* text = nullptr;
  REQUIRE(alc_chemistry_to_json(chem, &text) == ALC_OK);
  alc_chemistry* copy = nullptr;
  CHECK(alc_chemistry_from_json(text, &copy) == ALC_OK);
  char* text2 = nullptr;
  REQUIRE(alc_chemistry_to_json(copy, &text2) == ALC_OK);
  CHECK(std::string(text) == text2);
  alc_string_free(text);
  alc_string_free(text2);
  alc_chemistry_free(copy);
  CHECK(alc_chemistry_from_json("{", &copy) == ALC_PARSE_ERROR);

  uint8_t mask = 0;
  CHECK(alc_reachable_set(0, 2, &mask) == ALC_OK);
  CHECK(__builtin_popcount(mask) == 3);
  CHECK(alc_reachable_set(0, 3, &mask) == ALC_OK);
  CHECK(__builtin_popcount(mask) == 4);
  CHECK(alc_reachable_set(9, 1, &mask) == ALC_INVALID_ARGUMENT);
  alc_chemistry_free(chem);
}

TEST_CASE("c api: model forward") {
  const char* cfg = R"({"n_layers":1,"d_model":16,"d_ff":32,"n_heads":2,"max_seq_len":8})";
  alc_model* m = nullptr;
  REQUIRE(alc_model_create(cfg, 1, &m) == ALC_OK);
  size_t n = 0;
  CHECK(alc_model_parameter_count(m, &n) == ALC_OK);
  CHECK(n > 0);
  const std::vector<int32_t> tokens{22, 22, 0, 3, 6, 9, 13, 20};
  std::vector<float> logits(8 * 108);
  CHECK(alc_model_forward(m, tokens.data(), 1, 8, logits.data(), logits.size()) == ALC_OK);
  CHECK(alc_model_forward(m, tokens.data(), 1, 8, logits.data(), 10) == ALC_SHAPE_MISMATCH);
  alc_model_free(m);
  CHECK(alc_model_create("{\"d_model\":15}", 1, &m) == ALC_INVALID_CONFIG);
}

TEST_CASE("c api: commands") {
  const auto dir = fs::temp_directory_path() / "alchemy_capi";
  fs::remove_all(dir);
  nlohmann::json req{{"config",
                      {{"dataset", {{"pool_size", 5}}},
                       {"output_dir", dir.string()}}}};
  char* resp = nullptr;
  REQUIRE(alc_cmd_generate(req.dump().c_str(), &resp) == ALC_OK);
  const auto j = nlohmann::json::parse(resp);
  alc_string_free(resp);
  CHECK(j["manifest"]["pool_size"] == 5);

  nlohmann::json v{{"path", j["dataset_dir"]}};
  REQUIRE(alc_cmd_validate(v.dump().c_str(), &resp) == ALC_OK);
  CHECK(nlohmann::json::parse(resp)["passed"] == true);
  alc_string_free(resp);

  resp = nullptr;
  CHECK(alc_cmd_validate("not json", &resp) == ALC_INVALID_ARGUMENT);
  alc_string_free(resp);
  resp = nullptr;
  nlohmann::json bad{{"config", {{"bogus", 1}}}};
  CHECK(alc_cmd_generate(bad.dump().c_str(), &resp) == ALC_INVALID_CONFIG);
  alc_string_free(resp);
  fs::remove_all(dir);
}
