#include <doctest.h>

#include <set>

#include "alchemy/error.hpp"
#include "alchemy/task_sampler.hpp"
#include "oracles.hpp"

using namespace alchemy;

namespace {

std::vector<std::uint32_t> ids(std::uint32_t n) {
  std::vector<std::uint32_t> v(n);
  for (std::uint32_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

Vertex vertex(const Chemistry& c, const Stone& s) {
  const auto v = c.vertex_of(s);
  REQUIRE(v.has_value());
  return *v;
}

}  // namespace

TEST_CASE("split sizes and determinism") {
  const auto a = split_chemistries(ids(1000), 0.9, 7);
  CHECK(a.train_chemistries.size() == 900);
  CHECK(a.val_chemistries.size() == 100);
  std::set<std::uint32_t> train(a.train_chemistries.begin(), a.train_chemistries.end());
  for (auto id : a.val_chemistries) CHECK_FALSE(train.contains(id));
  const auto b = split_chemistries(ids(1000), 0.9, 7);
  CHECK(a.train_chemistries == b.train_chemistries);
  CHECK(a.val_chemistries == b.val_chemistries);

  const auto two = split_chemistries(ids(2), 0.5, 1);
  CHECK(two.train_chemistries.size() == 1);
  CHECK(two.val_chemistries.size() == 1);

  CHECK_THROWS_AS(split_chemistries({}, 0.9, 1), Error);
  CHECK_THROWS_AS(split_chemistries(ids(10), 1.0, 1), Error);
}

TEST_CASE("withheld-pair episodes") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Chemistry c = generate_chemistry(seed);
    const auto eps = build_withheld_pair_episodes(c, 0, seed);
    REQUIRE(eps.size() == 8);
    const int axis = *eps[0].withheld_axis;
    std::set<std::pair<int, int>> queries;
    for (const auto& e : eps) {
      CHECK(e.support.size() == 16);
      CHECK(check_episode(c, e).empty());
      CHECK(*e.withheld_axis == axis);
      for (const auto& t : e.support) CHECK(c.axis_of(t.potions[0]) != axis);
      const Vertex x = vertex(c, e.query_start);
      const Vertex y = vertex(c, e.target);
      CHECK(face_containing(x, axis) != face_containing(y, axis));
      CHECK(c.axis_of(e.query_potions[0]) == axis);
      queries.insert({x, static_cast<int>(e.query_potions[0])});
    }
    CHECK(queries.size() == 8);
    // Each episode shuffles its support independently.
    CHECK(eps[0].support != eps[1].support);
  }
}

TEST_CASE("composition episodes") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const Chemistry c = generate_chemistry(seed);
    for (int k = 2; k <= 5; ++k) {
      const Episode e = build_composition_episode(c, 3, k, seed * 10 + static_cast<std::uint64_t>(k));
      CHECK(e.support.size() == 24);
      CHECK(e.query_potions.size() == static_cast<std::size_t>(k));
      CHECK(check_episode(c, e).empty());
      const Vertex x = vertex(c, e.query_start);
      const Vertex y = vertex(c, e.target);
      CHECK(oracle::reachable(c, x, k).contains(y));
      if (k == 2) CHECK(oracle::popcount(x ^ y) == 2);
      for (std::size_t i = 1; i < e.query_potions.size(); ++i) {
        CHECK(e.query_potions[i] != complement(e.query_potions[i - 1]));
      }
    }
  }
}

TEST_CASE("k-hop enumeration counts match brute force") {
  const Chemistry c = generate_chemistry(9);
  CHECK(enumerate_khop_transitions(c, 2, SupportMode::kNoBacktrack).size() == 48);
  CHECK(enumerate_khop_transitions(c, 2, SupportMode::kExhaustive).size() == 72);
  for (int k = 2; k <= 5; ++k) {
    const auto nb = enumerate_khop_transitions(c, k, SupportMode::kNoBacktrack);
    const auto ex = enumerate_khop_transitions(c, k, SupportMode::kExhaustive);
    CHECK(static_cast<long>(nb.size()) == oracle::count_sequences(c, k, true));
    CHECK(static_cast<long>(ex.size()) == oracle::count_sequences(c, k, false));
    CHECK(static_cast<long>(nb.size()) == 8L * 3 * (1L << (k - 1)));
    for (const auto& t : nb) CHECK(apply_sequence(c, vertex(c, t.start), t.potions) == vertex(c, t.end));
  }
}

TEST_CASE("decomposition episodes") {
  const Chemistry c = generate_chemistry(21);
  const Episode e48 = build_decomposition_episode(c, 0, 2, SupportMode::kNoBacktrack, 48, 1);
  CHECK(e48.support.size() == 48);
  for (int k = 2; k <= 5; ++k) {
    const Episode e = build_decomposition_episode(c, 0, k, SupportMode::kNoBacktrack, kDefaultMaxSupport, 5);
    CHECK(e.support.size() == std::min<std::size_t>(kDefaultMaxSupport, 8u * 3u * (1u << (k - 1))));
    CHECK(e.query_potions.size() == 1);
    CHECK(check_episode(c, e).empty());
    const Vertex x = vertex(c, e.query_start);
    const Vertex y = vertex(c, e.target);
    const int axis = c.axis_of(e.query_potions[0]);
    CHECK(face_containing(y, axis) == face_containing(x, axis).complement());
    std::set<std::string> distinct;
    for (const auto& t : e.support) {
      CHECK(t.potions.size() == static_cast<std::size_t>(k));
      std::string key = std::to_string(stone_index(t.start));
      for (auto p : t.potions) key += "," + std::to_string(static_cast<int>(p));
      distinct.insert(key);
    }
    CHECK(distinct.size() == e.support.size());
  }
  const Episode same = build_decomposition_episode(c, 0, 3, SupportMode::kNoBacktrack, kDefaultMaxSupport, 5);
  CHECK(same == build_decomposition_episode(c, 0, 3, SupportMode::kNoBacktrack, kDefaultMaxSupport, 5));
}

TEST_CASE("episode json round trip") {
  const Chemistry c = generate_chemistry(2);
  std::vector<Episode> all = build_withheld_pair_episodes(c, 4, 1);
  all.push_back(build_composition_episode(c, 4, 3, 2));
  all.push_back(build_decomposition_episode(c, 4, 2, SupportMode::kExhaustive, 96, 3));
  for (const auto& e : all) {
    const auto line = episode_to_json_line(e, "4-1-0");
    const auto rec = episode_from_json_line(line);
    CHECK(rec.id == "4-1-0");
    CHECK(rec.episode == e);
  }
  CHECK_THROWS_AS(episode_from_json_line("{\"id\": \"x\"}"), Error);
}

TEST_CASE("check_episode catches inconsistencies") {
  const Chemistry c = generate_chemistry(8);
  Episode e = build_composition_episode(c, 0, 2, 4);
  e.target = e.query_start;
  CHECK_FALSE(check_episode(c, e).empty());

  Episode w = build_withheld_pair_episodes(c, 0, 4)[0];
  w.support.push_back(Transition{w.query_start, w.query_potions, w.target});
  CHECK_FALSE(check_episode(c, w).empty());
}
